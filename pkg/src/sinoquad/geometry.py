"""Image and sinogram containers with their acquisition geometry."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Image", "Sinogram", "fov_radius", "fov_mask"]

FOV_FRACTION = 0.48


def _validate_2d(data: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ValueError(f"{what} data must be 2-D, got shape {arr.shape}")
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} data contains non-finite values")
    if (arr < 0).any():
        raise ValueError(f"{what} data contains negative values")
    return arr


@dataclass
class Image:
    """A nonnegative 2-D activity map on a square pixel grid."""

    data: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        self.data = _validate_2d(self.data, "image")
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class Sinogram:
    """Projection data, rows indexed by view angle and columns by detector bin.

    View i sits at start_angle_deg + i * angular_range_deg / n_angles; the
    endpoint is excluded, so 128 views over 360 degrees step by 2.8125 and
    a 32-view set shares every fourth angle with a 128-view set.
    """

    data: np.ndarray
    start_angle_deg: float = 0.0
    angular_range_deg: float = 360.0
    bin_width: float = 1.0

    def __post_init__(self):
        self.data = _validate_2d(self.data, "sinogram")
        if not self.angular_range_deg > 0:
            raise ValueError(
                f"angular_range_deg must be positive, got {self.angular_range_deg}"
            )
        if not self.bin_width > 0:
            raise ValueError(f"bin_width must be positive, got {self.bin_width}")

    @property
    def n_angles(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    def angles_deg(self) -> np.ndarray:
        n = self.n_angles
        return self.start_angle_deg + np.arange(n) * (self.angular_range_deg / n)


def fov_radius(width: int) -> float:
    """Radius in pixels of the circular field of view for a given grid width."""
    return FOV_FRACTION * width


def fov_mask(height: int, width: int, radius: float | None = None) -> np.ndarray:
    """Boolean mask of pixels inside the field-of-view circle.

    The circle is centred on the pixel grid centre ((h-1)/2, (w-1)/2),
    which is also the projector's rotation centre.
    """
    if radius is None:
        radius = fov_radius(width)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    yy, xx = np.ogrid[:height, :width]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
