"""Phantom generation, count-limited Poisson noise, and dataset assembly.

Randomised phantoms are additive mixtures of rotated ellipses plus a few
Gaussian blobs, supported strictly inside a circular field of view and
max-normalised to 1.0. Every item is generated from its own Philox stream
keyed by (dataset seed, item index), so regeneration is bit-identical and
independent of worker count or ordering.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .geometry import Image, Sinogram, fov_mask, fov_radius
from .io_formats import write_manifest, write_tomo
from .projector import project

__all__ = [
    "NoiseLevel",
    "NOISE_LEVELS",
    "get_noise_level",
    "PhantomRecipe",
    "generate_phantom",
    "shepp_logan",
    "apply_poisson",
    "subsample_views",
    "make_dataset",
    "ZeroMassError",
]


class ZeroMassError(ValueError):
    """Raised when an operation needs positive total activity and finds none."""


@dataclass(frozen=True)
class NoiseLevel:
    """A count budget: the sinogram is scaled so its total equals expected_counts."""

    label: str
    expected_counts: float


NOISE_LEVELS = {
    "low": NoiseLevel("low", 1e6),
    "medium": NoiseLevel("medium", 2.5e5),
    "high": NoiseLevel("high", 5e4),
}

_NOISE_PURPOSE = {
    "low": rng_mod.PURPOSE_NOISE_LOW,
    "medium": rng_mod.PURPOSE_NOISE_MEDIUM,
    "high": rng_mod.PURPOSE_NOISE_HIGH,
}


def get_noise_level(level) -> NoiseLevel:
    if isinstance(level, NoiseLevel):
        return level
    try:
        return NOISE_LEVELS[level]
    except KeyError:
        raise ValueError(
            f"unknown noise level {level!r}, expected one of {sorted(NOISE_LEVELS)}"
        ) from None


@dataclass(frozen=True)
class PhantomRecipe:
    """Distribution parameters for randomised ellipse phantoms."""

    seed: int = 0
    size: int = 128
    n_ellipses: tuple[int, int] = (2, 10)
    center_fraction: float = 0.8  # of the FOV radius
    axes_px: tuple[float, float] = (4.0, 40.0)
    rotation_deg: tuple[float, float] = (0.0, 180.0)
    intensity: tuple[float, float] = (0.2, 1.0)
    n_blobs: tuple[int, int] = (0, 3)
    blob_sigma_px: tuple[float, float] = (2.0, 8.0)
    blob_intensity: tuple[float, float] = (0.2, 1.0)

    def __post_init__(self):
        if self.size < 16:
            raise ValueError(f"size must be >= 16, got {self.size}")
        if not (1 <= self.n_ellipses[0] <= self.n_ellipses[1]):
            raise ValueError(f"bad ellipse count range {self.n_ellipses}")
        if self.axes_px[0] <= 0 or self.axes_px[0] > self.axes_px[1]:
            raise ValueError(f"bad axes range {self.axes_px}")
        if not (0 < self.center_fraction <= 1):
            raise ValueError(f"bad center_fraction {self.center_fraction}")


_SUPERSAMPLE = 2


def _supergrid(size: int, factor: int):
    """Pixel-centre coordinates of a factor-times-oversampled grid."""
    n = size * factor
    c = (size - 1) / 2.0
    coords = (np.arange(n) + 0.5) / factor - 0.5  # in full-resolution pixel units
    return coords - c  # centred on the rotation centre


def _render_ellipses(size: int, ellipses, factor: int = _SUPERSAMPLE) -> np.ndarray:
    """Additively render (cx, cy, ax, ay, rot_deg, value) ellipses, antialiased."""
    g = _supergrid(size, factor)
    xx = g[None, :]
    yy = g[:, None]
    acc = np.zeros((size * factor, size * factor), dtype=np.float64)
    for cx, cy, ax, ay, rot, val in ellipses:
        th = np.deg2rad(rot)
        xr = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
        yr = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
        acc += np.where((xr / ax) ** 2 + (yr / ay) ** 2 <= 1.0, val, 0.0)
    return acc.reshape(size, factor, size, factor).mean(axis=(1, 3))


def generate_phantom(recipe: PhantomRecipe, index: int = 0) -> Image:
    """Draw one randomised phantom; bit-identical for a given (seed, index)."""
    gen = rng_mod.stream(recipe.seed, index, rng_mod.PURPOSE_PHANTOM)
    size = recipe.size
    r_fov = fov_radius(size)
    r_center = recipe.center_fraction * r_fov

    for _attempt in range(32):
        n_ell = int(gen.integers(recipe.n_ellipses[0], recipe.n_ellipses[1] + 1))
        ellipses = []
        for _ in range(n_ell):
            for _try in range(500):
                rr = r_center * np.sqrt(gen.random())
                phi = 2.0 * np.pi * gen.random()
                cx, cy = rr * np.cos(phi), rr * np.sin(phi)
                ax = gen.uniform(*recipe.axes_px)
                ay = gen.uniform(*recipe.axes_px)
                rot = gen.uniform(*recipe.rotation_deg)
                val = gen.uniform(*recipe.intensity)
                # keep the whole ellipse strictly inside the field of view
                if rr + max(ax, ay) <= r_fov - 1.0:
                    ellipses.append((cx, cy, ax, ay, rot, val))
                    break
            else:
                raise RuntimeError("could not fit an ellipse inside the field of view")

        data = _render_ellipses(size, ellipses)

        n_blob = int(gen.integers(recipe.n_blobs[0], recipe.n_blobs[1] + 1))
        if n_blob:
            c = (size - 1) / 2.0
            yy, xx = np.mgrid[0:size, 0:size]
            for _ in range(n_blob):
                rr = r_center * np.sqrt(gen.random())
                phi = 2.0 * np.pi * gen.random()
                bx, by = c + rr * np.cos(phi), c + rr * np.sin(phi)
                sigma = gen.uniform(*recipe.blob_sigma_px)
                amp = gen.uniform(*recipe.blob_intensity)
                d2 = (xx - bx) ** 2 + (yy - by) ** 2
                data = data + amp * np.exp(-0.5 * d2 / (sigma * sigma))

        data[~fov_mask(size, size, r_fov)] = 0.0
        peak = data.max()
        if peak > 0:
            data = data / peak  # the peak pixel becomes exactly 1.0
            return Image(data.astype(np.float32))
    raise RuntimeError("phantom generation kept producing empty images")


# Shepp-Logan head phantom, the canonical ten-ellipse parameter table:
# (value, x semi-axis, y semi-axis, x centre, y centre, rotation deg),
# coordinates in [-1, 1] with y up, composed additively.
_SHEPP_LOGAN = (
    (2.00, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.98, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.02, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.02, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.01, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.01, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.01, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.01, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.01, 0.023, 0.023, 0.0, -0.605, 0.0),
    (0.01, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def shepp_logan(size: int = 128, _table=None) -> Image:
    """Shepp-Logan head phantom, clipped to >= 0 and max-normalised.

    Rendered with 4x antialiasing so the pixel mass tracks the analytic
    ellipse areas closely. Row 0 is the top of the head. _table overrides
    the ellipse parameters (testing hook).
    """
    if size < 16:
        raise ValueError(f"size must be >= 16, got {size}")
    factor = 4
    scale = size / 2.0  # unit coordinates to pixels
    ellipses = []
    for val, a, b, x0, y0, rot in (_SHEPP_LOGAN if _table is None else _table):
        # y axis points up in the parameter table, down in array rows
        ellipses.append((x0 * scale, -y0 * scale, a * scale, b * scale, -rot, val))
    data = _render_ellipses(size, ellipses, factor=factor)
    data = np.clip(data, 0.0, None)
    peak = data.max()
    if peak <= 0:
        raise ZeroMassError("degenerate phantom rendering")
    return Image((data / peak).astype(np.float32))


def shepp_logan_analytic_mass(size: int = 128) -> float:
    """Sum over pixels implied by the ellipse areas (for verification)."""
    scale = size / 2.0
    total = sum(val * np.pi * (a * scale) * (b * scale) for val, a, b, _, _, _ in _SHEPP_LOGAN)
    return float(total / 2.0)  # rendering is max-normalised; the peak value is 2.0


def apply_poisson(sino: Sinogram, level, seed: int, index: int = 0) -> Sinogram:
    """Simulate photon counting at a noise level's count budget.

    The sinogram is scaled so its total equals the level's expected counts,
    each bin is replaced by a Poisson draw, and the scale is divided back
    out, so the output stays in the input's intensity units. Zero bins stay
    exactly zero. Deterministic for a given (seed, index)).
    """
    level = get_noise_level(level)
    total = float(np.sum(sino.data, dtype=np.float64))
    if total <= 0:
        raise ZeroMassError("cannot add counting noise to a sinogram with zero total")
    scale = level.expected_counts / total
    lam = sino.data.astype(np.float64) * scale
    gen = rng_mod.stream(seed, index, _NOISE_PURPOSE[level.label])
    counts = rng_mod.sample_poisson(lam, gen)
    noisy = (counts / scale).astype(np.float32)
    return Sinogram(
        noisy,
        start_angle_deg=sino.start_angle_deg,
        angular_range_deg=sino.angular_range_deg,
        bin_width=sino.bin_width,
    )


def subsample_views(sino: Sinogram, factor: int) -> Sinogram:
    """Keep every factor-th view; exact rows of the input, no interpolation."""
    if factor < 1 or sino.n_angles % factor:
        raise ValueError(
            f"factor {factor} must divide the view count {sino.n_angles}"
        )
    return Sinogram(
        sino.data[::factor].copy(),
        start_angle_deg=sino.start_angle_deg,
        angular_range_deg=sino.angular_range_deg,
        bin_width=sino.bin_width,
    )


def _level_for_index(noise: str, index: int) -> str:
    if noise == "mixed":
        return ("low", "medium", "high")[index % 3]
    return noise


def _dataset_item(recipe: PhantomRecipe, index: int, noise: str, out_dir: str,
                  in_views: int, out_views: int) -> dict:
    label = _level_for_index(noise, index)
    phantom = generate_phantom(recipe, index)
    target = project(phantom, out_views)
    clean_in = subsample_views(target, out_views // in_views)
    noisy_in = apply_poisson(clean_in, label, seed=recipe.seed, index=index)

    names = {
        "phantom": f"phantom_{index:05d}.sptb",
        "target": f"target_{index:05d}.sptb",
        "input": f"input_{index:05d}.sptb",
    }
    out = Path(out_dir)
    write_tomo(out / names["phantom"], phantom)
    write_tomo(out / names["target"], target)
    write_tomo(out / names["input"], noisy_in)
    return {
        "index": index,
        "input": names["input"],
        "target": names["target"],
        "phantom": names["phantom"],
        "seed": recipe.seed,
        "noise": label,
    }


def make_dataset(
    recipe: PhantomRecipe,
    count: int,
    noise: str,
    out_dir,
    jobs: int = 1,
    in_views: int = 32,
    out_views: int = 128,
) -> Path:
    """Generate (noisy input, clean target, phantom) triples plus a manifest.

    noise is "low", "medium", "high", or "mixed" (cycling the three levels
    by index). Items are independent, so jobs > 1 splits them across
    processes; outputs are bit-identical regardless of the worker count.
    Returns the manifest path (out_dir/manifest.jsonl).
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if noise != "mixed":
        get_noise_level(noise)  # validates the label
    if out_views % in_views:
        raise ValueError(f"in_views {in_views} must divide out_views {out_views}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if jobs <= 1:
        rows = [
            _dataset_item(recipe, i, noise, str(out), in_views, out_views)
            for i in range(count)
        ]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(
                pool.map(
                    _dataset_item,
                    [recipe] * count,
                    range(count),
                    [noise] * count,
                    [str(out)] * count,
                    [in_views] * count,
                    [out_views] * count,
                    chunksize=max(1, count // (4 * jobs)),
                )
            )
    rows.sort(key=lambda r: r["index"])
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, rows)
    return manifest
