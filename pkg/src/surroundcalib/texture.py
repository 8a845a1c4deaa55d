"""Texture-point selection in the common view and exposure-ratio estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bev import BevImage
from .errors import DegenerateExposure, NoTexture

DEFAULT_DELTA = 2
DEFAULT_THETA = 15.0
MAX_POINTS = 20_000


@dataclass(frozen=True, eq=False)
class TexturePointSet:
    """High-gradient BEV pixels of the fixed camera, sorted row-major.

    ``xy`` holds integer BEV pixel coordinates (column, row); ``intensity``
    the fixed camera's BEV values there.
    """

    xy: np.ndarray
    intensity: np.ndarray
    source_camera: str = ""
    pair: tuple[str, str] = ("", "")

    def __len__(self):
        return len(self.intensity)


def gradient(image, x: int, y: int, delta: int = DEFAULT_DELTA) -> tuple[float, float]:
    """Backward-difference gradient at column ``x``, row ``y``:
    (change along rows, change along columns)."""
    I = image.intensities if isinstance(image, BevImage) else np.asarray(image, dtype=float)
    return float(I[y, x] - I[y - delta, x]), float(I[y, x] - I[y, x - delta])


def gradient_field(intensities: np.ndarray, delta: int = DEFAULT_DELTA) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``gradient`` over the whole image; the first ``delta`` rows
    and columns have no backward neighbour and are set to 0."""
    I = np.asarray(intensities, dtype=float)
    gy = np.zeros_like(I)
    gx = np.zeros_like(I)
    gy[delta:, :] = I[delta:, :] - I[:-delta, :]
    gx[:, delta:] = I[:, delta:] - I[:, :-delta]
    return gy, gx


def erode_for_gradient(mask: np.ndarray, delta: int) -> np.ndarray:
    """Keep pixels whose backward neighbours at ``delta`` are also in the mask."""
    out = np.zeros_like(mask, dtype=bool)
    out[delta:, delta:] = mask[delta:, delta:] & mask[:-delta, delta:] & mask[delta:, :-delta]
    return out


def extract_texture_points(
    bev: BevImage,
    mask: np.ndarray,
    delta: int = DEFAULT_DELTA,
    theta: float = DEFAULT_THETA,
    max_points: int = MAX_POINTS,
    source_camera: str = "",
    pair: tuple[str, str] = ("", ""),
) -> TexturePointSet:
    """Select common-view pixels whose gradient norm exceeds ``theta``.

    When more than ``max_points`` qualify the set is thinned by a uniform
    stride over the row-major ordering.
    """
    usable = erode_for_gradient(mask & bev.valid, delta)
    gy, gx = gradient_field(bev.intensities, delta)
    selected = usable & (np.hypot(gy, gx) > theta)
    rows, cols = np.nonzero(selected)
    n = len(rows)
    if n == 0:
        raise NoTexture(f"no common-view pixel of {source_camera or 'camera'} exceeds gradient {theta}")
    if max_points and n > max_points:
        keep = (np.arange(max_points) * n) // max_points
        rows, cols = rows[keep], cols[keep]
    xy = np.stack([cols, rows], axis=-1)
    return TexturePointSet(xy, bev.intensities[rows, cols].copy(), source_camera, tuple(pair))


@dataclass(frozen=True)
class ExposureRatio:
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"exposure ratio must be positive, got {self.gamma}")


def exposure_ratio(bev_i: BevImage, bev_j: BevImage, mask: np.ndarray) -> ExposureRatio:
    """Ratio of intensity sums of camera i over camera j on the common view."""
    both = mask & bev_i.valid & bev_j.valid
    num = float(np.sum(bev_i.intensities[both]))
    den = float(np.sum(bev_j.intensities[both]))
    if den < 1e-6 or num < 1e-6:
        raise DegenerateExposure(f"overlap intensity sums {num:.3g} / {den:.3g}")
    return ExposureRatio(num / den)
