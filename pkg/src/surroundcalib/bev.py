"""Bird's-eye-view rendering by inverse mapping onto a flat ground plane."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, Pose
from .errors import EmptyFootprint, InsufficientOverlap

MIN_FOOTPRINT = 0.01
DEFAULT_MIN_OVERLAP = 500


@dataclass(frozen=True)
class BevSpec:
    """Virtual top-down camera.

    ``ego_roi`` is ``(x0, y0, x1, y1)`` in BEV pixels, half-open, and is
    excluded from every common-view mask.
    """

    width: int = 1000
    height: int = 1000
    scale: float = 0.02
    center_x: float = 500.0
    center_y: float = 500.0
    ground_z: float = 0.0
    ego_roi: tuple[int, int, int, int] | None = (450, 380, 550, 620)

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.ego_roi is not None:
            x0, y0, x1, y1 = self.ego_roi
            if not (0 <= x0 <= x1 <= self.width and 0 <= y0 <= y1 <= self.height):
                raise ValueError(f"ego_roi {self.ego_roi} exceeds the {self.width}x{self.height} image")
            object.__setattr__(self, "ego_roi", tuple(int(v) for v in self.ego_roi))

    @classmethod
    def centered(cls, width: int, height: int, scale: float, ego_size_m=(2.0, 4.8), ground_z: float = 0.0):
        """Ground origin at the image centre with an ego rectangle of
        ``ego_size_m`` (x extent, y extent) around it."""
        cx, cy = width / 2.0, height / 2.0
        roi = None
        if ego_size_m is not None:
            hx = ego_size_m[0] / scale / 2.0
            hy = ego_size_m[1] / scale / 2.0
            roi = (int(round(cx - hx)), int(round(cy - hy)), int(round(cx + hx)), int(round(cy + hy)))
        return cls(width, height, scale, cx, cy, ground_z, roi)

    def ego_mask(self) -> np.ndarray:
        mask = np.zeros((self.height, self.width), dtype=bool)
        if self.ego_roi is not None:
            x0, y0, x1, y1 = self.ego_roi
            mask[y0:y1, x0:x1] = True
        return mask

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        return u.astype(float), v.astype(float)


@dataclass(frozen=True, eq=False)
class BevImage:
    intensities: np.ndarray
    valid: np.ndarray

    @property
    def valid_fraction(self) -> float:
        return float(self.valid.mean())


def bev_pixel_to_ground(u, v, spec: BevSpec) -> np.ndarray:
    """Ground point(s) under BEV pixel(s); every pixel shares depth ``ground_z``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    x = (u - spec.center_x) * spec.scale
    y = (v - spec.center_y) * spec.scale
    return np.stack([x, y, np.full_like(x, spec.ground_z)], axis=-1)


def ground_to_bev(points, spec: BevSpec) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    u = points[..., 0] / spec.scale + spec.center_x
    v = points[..., 1] / spec.scale + spec.center_y
    return np.stack([u, v], axis=-1)


def sample_bilinear(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear lookup at pixel-centre coordinates (integer = centre).

    Samples whose 2x2 support leaves the image are flagged invalid and
    returned as 0; nothing outside the image is ever read.
    """
    h, w = image.shape
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    valid = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uu = np.where(valid, u, 0.0)
    vv = np.where(valid, v, 0.0)
    x0 = np.minimum(np.floor(uu).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(vv).astype(np.intp), max(h - 2, 0))
    ax = uu - x0
    ay = vv - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = image[y0, x0] * (1.0 - ax) + image[y0, x1] * ax
    bottom = image[y1, x0] * (1.0 - ax) + image[y1, x1] * ax
    out = top * (1.0 - ay) + bottom * ay
    return np.where(valid, out, 0.0), valid


def project_ground(points: np.ndarray, pose: Pose, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Ground-frame points to source-image pixels; returns (uv, in-view flags)."""
    return intr.project(pose.transform(points))


def render_bev(image: np.ndarray, intr: CameraIntrinsics, pose: Pose, spec: BevSpec) -> BevImage:
    """Resample a camera image onto the BEV grid.

    Raises EmptyFootprint when fewer than 1% of BEV pixels are valid.
    """
    u, v = spec.pixel_grid()
    ground = bev_pixel_to_ground(u, v, spec)
    uv, in_view = project_ground(ground.reshape(-1, 3), pose, intr)
    values, inside = sample_bilinear(np.asarray(image, dtype=float), uv[:, 0], uv[:, 1])
    valid = (in_view & inside).reshape(spec.height, spec.width)
    intensities = np.where(valid, values.reshape(spec.height, spec.width), 0.0)
    if valid.mean() < MIN_FOOTPRINT:
        raise EmptyFootprint(f"only {valid.mean():.4%} of BEV pixels are valid for this pose")
    return BevImage(intensities, valid)


def overlap_mask(
    bev_i: BevImage, bev_j: BevImage, spec: BevSpec, min_count: int = DEFAULT_MIN_OVERLAP, pair=None
) -> tuple[np.ndarray, int]:
    """Common-view mask of two BEV renders with the ego rectangle removed."""
    mask = bev_i.valid & bev_j.valid & ~spec.ego_mask()
    count = int(mask.sum())
    if count < min_count:
        raise InsufficientOverlap(count, min_count, pair)
    return mask, count


def stitch(bevs: dict[str, BevImage], centers: dict[str, np.ndarray], spec: BevSpec) -> np.ndarray:
    """Composite BEV renders, each pixel taken from the valid camera whose
    centre is closest on the ground. Uncovered pixels are 0."""
    u, v = spec.pixel_grid()
    ground = bev_pixel_to_ground(u, v, spec)
    best = np.full((spec.height, spec.width), np.inf)
    out = np.zeros((spec.height, spec.width))
    for name in sorted(bevs):
        c = centers[name]
        d2 = (ground[..., 0] - c[0]) ** 2 + (ground[..., 1] - c[1]) ** 2
        take = bevs[name].valid & (d2 < best)
        out[take] = bevs[name].intensities[take]
        best[take] = d2[take]
    return out
