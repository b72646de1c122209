"""Encoder-decoder network that maps a sparse-view sinogram to one with
four times as many view angles, same detector extent.

Layout: four contracting blocks (two 3x3 conv+ReLU, then 2x2 average
pool) widening 1 -> base -> 2*base -> 4*base -> 8*base; a two-conv
bottleneck; four expanding blocks (2x2 transposed conv, concat of the
matching contracting feature map, two 3x3 conv+ReLU) narrowing back to
base; two more expanding blocks whose transposed convs stride only the
angle axis (no matching resolution exists, so no skips); and a final 1x1
linear conv down to one channel. Outputs are clamped at zero only at
inference; training sees the linear head.

Where the prose underdetermines the design (bottleneck width, up-path
ladder, which axis the last two upsamplings act on), the choices here
are reconstructions: the only stride assignment consistent with 2x2
pooling and an angle-quadrupling output, plus a channel-doubling
bottleneck. README carries the same caveat.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .io_formats import (
    BadMagicError,
    TomoFormatError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .rng import PURPOSE_INIT, stream

CHECKPOINT_MAGIC = b"SPTC0001"
_NORMALIZATION = "per_sinogram_max"


@dataclass(frozen=True)
class UNetConfig:
    """Architecture knobs. bottleneck_channels=None means 16*base_channels."""

    base_channels: int = 32
    in_angles: int = 32
    out_angles: int = 128
    detector_bins: int = 128
    bottleneck_channels: int | None = None

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.out_angles != 4 * self.in_angles:
            raise ValueError(
                f"out_angles must be 4x in_angles, got {self.in_angles} -> {self.out_angles}"
            )
        if self.in_angles % 16 or self.detector_bins % 16:
            raise ValueError(
                "in_angles and detector_bins must be divisible by 16 "
                f"(four 2x2 poolings), got {self.in_angles}x{self.detector_bins}"
            )
        if self.bottleneck_channels is None:
            object.__setattr__(self, "bottleneck_channels", 16 * self.base_channels)
        if self.bottleneck_channels < 1:
            raise ValueError("bottleneck_channels must be >= 1")


def parameter_count(config: UNetConfig) -> int:
    """Closed-form sum C_out*(C_in*kh*kw + 1) over the layer table."""
    total = 0
    for _, shape in _layer_table(config):
        if len(shape) == 4:
            c0, c1, kh, kw = shape
            # conv weights are [C_out,C_in,kh,kw]; transposed weights
            # [C_in,C_out,kh,kw]; both contribute the full product
            total += c0 * c1 * kh * kw
        else:
            total += shape[0]
    return total


def _layer_table(config: UNetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """(name, shape) for every parameter, in creation order."""
    base = config.base_channels
    down = [base * (1 << i) for i in range(4)]  # 32,64,128,256 at default
    bott = config.bottleneck_channels
    table: list[tuple[str, tuple[int, ...]]] = []

    def conv(tag, c_in, c_out, k):
        table.append((f"{tag}_w", (c_out, c_in, k, k)))
        table.append((f"{tag}_b", (c_out,)))

    def convt(tag, c_in, c_out):
        table.append((f"{tag}_w", (c_in, c_out, 2, 2)))
        table.append((f"{tag}_b", (c_out,)))

    prev = 1
    for i, c in enumerate(down):
        conv(f"down{i}_conv1", prev, c, 3)
        conv(f"down{i}_conv2", c, c, 3)
        prev = c
    conv("bottleneck_conv1", prev, bott, 3)
    conv("bottleneck_conv2", bott, bott, 3)
    prev = bott
    for j, c in enumerate(reversed(down)):  # 256,128,64,32
        convt(f"up{j}_convt", prev, c)
        conv(f"up{j}_conv1", 2 * c, c, 3)  # concat doubles the input
        conv(f"up{j}_conv2", c, c, 3)
        prev = c
    for j in (4, 5):
        convt(f"up{j}_convt", prev, base)
        conv(f"up{j}_conv1", base, base, 3)
        conv(f"up{j}_conv2", base, base, 3)
        prev = base
    conv("head", base, 1, 1)
    return table


def _he_uniform(gen, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[1] * shape[2] * shape[3] if len(shape) == 4 else shape[0]
    limit = np.sqrt(6.0 / fan_in)
    return gen.uniform(-limit, limit, size=shape).astype(np.float32)


class UNet:
    """The assembled model; immutable once trained, cheap to rebuild."""

    def __init__(self, config: UNetConfig | None = None, seed: int = 0):
        self.config = config or UNetConfig()
        self.seed = int(seed)
        gen = stream(self.seed, 0, PURPOSE_INIT)
        self.params: dict[str, ag.Parameter] = {}
        for name, shape in _layer_table(self.config):
            if name.endswith("_b"):
                data = np.zeros(shape, dtype=np.float32)
            else:
                data = _he_uniform(gen, shape)
            self.params[name] = ag.Parameter(name, data)

    def parameters(self) -> list[ag.Parameter]:
        return list(self.params.values())

    @property
    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def _pair(self, tag):
        return self.params[f"{tag}_w"].tensor, self.params[f"{tag}_b"].tensor

    def forward(self, x, training: bool = False) -> ag.Tensor:
        """[B,1,A,D] -> [B,1,4A,D]; A and D must be divisible by 16."""
        t = x if isinstance(x, ag.Tensor) else ag.Tensor(np.asarray(x, dtype=np.float32))
        if t.data.ndim != 4 or t.shape[1] != 1:
            raise ag.ShapeMismatchError(
                f"expected input shaped [B,1,angles,bins], got {t.shape}"
            )
        angles, bins = t.shape[2], t.shape[3]
        if angles % 16 or bins % 16:
            raise ag.ShapeMismatchError(
                f"input extents {angles}x{bins} must be divisible by 16 "
                "(four 2x2 poolings)"
            )

        def block(h, tag):
            w, b = self._pair(tag)
            return ag.relu(ag.conv2d(h, w, b))

        h = t
        skips = []
        for i in range(4):
            h = block(h, f"down{i}_conv1")
            h = block(h, f"down{i}_conv2")
            skips.append(h)
            h = ag.avgpool2x2(h)
        h = block(h, "bottleneck_conv1")
        h = block(h, "bottleneck_conv2")
        for j in range(4):
            w, b = self._pair(f"up{j}_convt")
            h = ag.conv_transpose2d(h, w, b, stride=(2, 2))
            h = ag.concat_channels(h, skips[3 - j])
            h = block(h, f"up{j}_conv1")
            h = block(h, f"up{j}_conv2")
        for j in (4, 5):
            w, b = self._pair(f"up{j}_convt")
            h = ag.conv_transpose2d(h, w, b, stride=(2, 1))
            h = block(h, f"up{j}_conv1")
            h = block(h, f"up{j}_conv2")
        w, b = self._pair("head")
        out = ag.conv2d(h, w, b)
        if not training:
            out = ag.Tensor(np.maximum(out.data, 0.0))
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Inference convenience: clamped forward, plain float32 array."""
        with ag.no_grad():
            out = self.forward(x, training=False)
        return out.data.astype(np.float32, copy=False)


def save_checkpoint(model: UNet, path) -> None:
    arrays = [(name, list(p.data.shape)) for name, p in model.params.items()]
    header = {
        "config": asdict(model.config),
        "normalization": _NORMALIZATION,
        "dtype": "f32",
        "arrays": arrays,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, p in model.params.items():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> UNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise TruncatedFileError(
            f"checkpoint {path} has only {len(blob)} bytes, fixed header needs 12"
        )
    if blob[:4] != CHECKPOINT_MAGIC[:4]:
        raise BadMagicError(f"bad checkpoint magic {blob[:4]!r} in {path}")
    if blob[4:8] != CHECKPOINT_MAGIC[4:]:
        raise UnsupportedVersionError(
            f"checkpoint version {blob[4:8]!r}; this reader supports "
            f"{CHECKPOINT_MAGIC[4:]!r}"
        )
    (header_len,) = struct.unpack_from("<I", blob, 8)
    if len(blob) < 12 + header_len:
        raise TruncatedFileError(f"checkpoint {path} truncated inside the header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TomoFormatError(f"checkpoint {path} header is not valid JSON: {exc}") from exc
    config = UNetConfig(**header["config"])
    model = UNet(config)
    expected = [(name, list(shape)) for name, shape in _layer_table(config)]
    stored = [(name, list(shape)) for name, shape in header["arrays"]]
    if stored != expected:
        raise TomoFormatError(
            f"checkpoint {path} array table does not match its embedded config"
        )
    offset = 12 + header_len
    for name, shape in stored:
        n = int(np.prod(shape))
        end = offset + 4 * n
        if end > len(blob):
            raise TruncatedFileError(
                f"checkpoint {path} payload truncated in array {name!r}"
            )
        arr = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape)
        model.params[name].data = arr.copy()
        offset = end
    if offset != len(blob):
        raise TomoFormatError(f"checkpoint {path} has {len(blob) - offset} trailing bytes")
    return model
