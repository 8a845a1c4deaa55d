"""
Camera models and rigid poses.

Two projection models are supported:

    pinhole:  u = fx * X / Z + cx,  v = fy * Y / Z + cy
    fisheye:  theta = atan2(sqrt(X^2 + Y^2), Z)
              r     = theta * (1 + k1 theta^2 + k2 theta^4 + k3 theta^6 + k4 theta^8)
              u     = fx * r * cos(phi) + cx,  v = fy * r * sin(phi) + cy

Poses are ground-to-camera transforms ``p_cam = R @ p_ground + t``. Euler
angles use the intrinsic Z-Y-X convention, ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``,
in degrees at every public interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import BehindCamera, GimbalLock, OutOfFov

MIN_DEPTH = 1e-6
_GIMBAL_EPS = math.sin(math.radians(1e-6))


# ---------------------------------------------------------------------------
# Intrinsics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PinholeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    model = "pinhole"

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> "PinholeIntrinsics":
        """Square-pixel camera whose horizontal field of view is ``fov_deg``."""
        f = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project Nx3 camera-frame points. Returns (Nx2 pixels, N valid flags).

        Points with depth <= 1e-6 are flagged invalid and their pixels set to 0.
        """
        points = np.asarray(points, dtype=float)
        z = points[..., 2]
        valid = z > MIN_DEPTH
        zs = np.where(valid, z, 1.0)
        u = self.fx * points[..., 0] / zs + self.cx
        v = self.fy * points[..., 1] / zs + self.cy
        uv = np.stack([np.where(valid, u, 0.0), np.where(valid, v, 0.0)], axis=-1)
        return uv, valid

    def unproject(self, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Rays (Z = 1) through Nx2 pixels; every pixel is valid."""
        uv = np.asarray(uv, dtype=float)
        x = (uv[..., 0] - self.cx) / self.fx
        y = (uv[..., 1] - self.cy) / self.fy
        rays = np.stack([x, y, np.ones_like(x)], axis=-1)
        return rays, np.ones(x.shape, dtype=bool)


@dataclass(frozen=True)
class FisheyeIntrinsics:
    """Equidistant fisheye with an odd polynomial angle-to-radius map.

    ``fov`` is the maximum half-angle from the optical axis, in radians.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float
    k2: float
    k3: float
    k4: float
    width: int
    height: int
    fov: float

    model = "fisheye"

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not (0 < self.fov <= math.pi):
            raise ValueError(f"fov half-angle must be in (0, pi], got {self.fov}")
        theta = np.linspace(0.0, self.fov, 1000)
        if np.any(np.diff(self.distort(theta)) <= 0):
            raise ValueError("angle-to-radius polynomial is not strictly increasing on [0, fov]")

    def distort(self, theta):
        t2 = theta * theta
        return theta * (1.0 + t2 * (self.k1 + t2 * (self.k2 + t2 * (self.k3 + t2 * self.k4))))

    def undistort(self, r: np.ndarray, iterations: int = 60) -> np.ndarray:
        """Invert ``distort`` on [0, fov] by bisection. ``r`` must be in range."""
        r = np.asarray(r, dtype=float)
        lo = np.zeros_like(r)
        hi = np.full_like(r, self.fov)
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            below = self.distort(mid) < r
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        points = np.asarray(points, dtype=float)
        x, y, z = points[..., 0], points[..., 1], points[..., 2]
        rho = np.hypot(x, y)
        theta = np.arctan2(rho, z)
        valid = (theta <= self.fov) & ((rho > 0) | (z > 0))
        r = self.distort(theta)
        safe = np.where(rho > 0, rho, 1.0)
        cos_phi = np.where(rho > 0, x / safe, 0.0)
        sin_phi = np.where(rho > 0, y / safe, 0.0)
        u = self.fx * r * cos_phi + self.cx
        v = self.fy * r * sin_phi + self.cy
        uv = np.stack([np.where(valid, u, 0.0), np.where(valid, v, 0.0)], axis=-1)
        return uv, valid

    def unproject(self, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unit rays through Nx2 pixels; pixels beyond the fov circle are invalid."""
        uv = np.asarray(uv, dtype=float)
        mx = (uv[..., 0] - self.cx) / self.fx
        my = (uv[..., 1] - self.cy) / self.fy
        r = np.hypot(mx, my)
        valid = r <= self.distort(self.fov)
        theta = self.undistort(np.minimum(r, self.distort(self.fov)))
        safe = np.where(r > 0, r, 1.0)
        cos_phi = np.where(r > 0, mx / safe, 1.0)
        sin_phi = np.where(r > 0, my / safe, 0.0)
        s = np.sin(theta)
        rays = np.stack([s * cos_phi, s * sin_phi, np.cos(theta)], axis=-1)
        return rays, valid


CameraIntrinsics = Union[PinholeIntrinsics, FisheyeIntrinsics]


def pinhole_project(point_cam, intr: PinholeIntrinsics) -> tuple[float, float]:
    """Project a single point; raises BehindCamera for depth <= 1e-6."""
    uv, valid = intr.project(np.asarray(point_cam, dtype=float)[None, :])
    if not valid[0]:
        raise BehindCamera(f"point {tuple(point_cam)} is not in front of the camera")
    return float(uv[0, 0]), float(uv[0, 1])


def fisheye_project(point_cam, intr: FisheyeIntrinsics) -> tuple[float, float]:
    """Project a single point; raises OutOfFov beyond the lens half-angle."""
    uv, valid = intr.project(np.asarray(point_cam, dtype=float)[None, :])
    if not valid[0]:
        raise OutOfFov(f"point {tuple(point_cam)} is outside the {math.degrees(intr.fov):.1f} deg half-angle")
    return float(uv[0, 0]), float(uv[0, 1])


# ---------------------------------------------------------------------------
# Rotations
# ---------------------------------------------------------------------------


def euler_to_rotation(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rz(yaw) @ Ry(pitch) @ Rx(roll), angles in degrees."""
    r, p, y = math.radians(roll), math.radians(pitch), math.radians(yaw)
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def rotation_to_euler(rotation: np.ndarray, strict: bool = False) -> tuple[float, float, float]:
    """Recover (roll, pitch, yaw) in degrees.

    At gimbal lock roll is set to 0 and the remaining freedom goes to yaw,
    unless ``strict`` is set, in which case GimbalLock is raised.
    """
    R = np.asarray(rotation, dtype=float)
    cp = math.hypot(R[0, 0], R[1, 0])
    pitch = math.atan2(-R[2, 0], cp)
    if cp < _GIMBAL_EPS:
        if strict:
            raise GimbalLock(f"pitch {math.degrees(pitch):.9f} deg is at gimbal lock")
        roll = 0.0
        yaw = math.atan2(-R[0, 1], R[1, 1])
    else:
        roll = math.atan2(R[2, 1], R[2, 2])
        yaw = math.atan2(R[1, 0], R[0, 0])
    return math.degrees(roll), math.degrees(pitch), math.degrees(yaw)


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(rotation)
    R = u @ vt
    if np.linalg.det(R) < 0:
        u[:, -1] *= -1
        R = u @ vt
    return R


def wrap_degrees(angle):
    """Wrap to the half-open interval (-180, 180]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + 180.0, 360.0) - 180.0
    wrapped = np.where(wrapped == -180.0, 180.0, wrapped)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


# ---------------------------------------------------------------------------
# Poses
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid ground-to-camera transform ``p_cam = rotation @ p_ground + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_camera_placement(cls, roll, pitch, yaw, x, y, z) -> "Pose":
        """Pose from Euler angles of the ground-to-camera rotation and the
        camera centre (x, y, z) expressed in the ground frame."""
        R = euler_to_rotation(roll, pitch, yaw)
        return cls(R, -R @ np.array([x, y, z], dtype=float))

    @property
    def center(self) -> np.ndarray:
        """Camera centre in the ground frame."""
        return -self.rotation.T @ self.translation

    def euler(self, strict: bool = False) -> tuple[float, float, float]:
        return rotation_to_euler(self.rotation, strict=strict)

    def placement(self) -> dict:
        """Inverse of ``from_camera_placement``."""
        roll, pitch, yaw = self.euler()
        x, y, z = (float(v) for v in self.center)
        return {"roll": roll, "pitch": pitch, "yaw": yaw, "tx": x, "ty": y, "tz": z}

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def transform(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def same_as(self, other: "Pose") -> bool:
        """Bit-identical comparison."""
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __repr__(self):
        roll, pitch, yaw = self.euler()
        t = self.translation
        return f"Pose(rpy=({roll:.4f}, {pitch:.4f}, {yaw:.4f}) deg, t=({t[0]:.4f}, {t[1]:.4f}, {t[2]:.4f}) m)"


@dataclass(frozen=True)
class Perturbation:
    """Small rigid correction: Euler angles in degrees, translation in meters."""

    d_roll: float = 0.0
    d_pitch: float = 0.0
    d_yaw: float = 0.0
    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0

    @classmethod
    def from_array(cls, values) -> "Perturbation":
        return cls(*(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.array([self.d_roll, self.d_pitch, self.d_yaw, self.dx, self.dy, self.dz])

    def is_zero(self) -> bool:
        return not np.any(self.as_array())

    def as_pose(self) -> Pose:
        return Pose(euler_to_rotation(self.d_roll, self.d_pitch, self.d_yaw), [self.dx, self.dy, self.dz])

    @classmethod
    def between(cls, estimate: Pose, reference: Pose) -> "Perturbation":
        """The perturbation that maps ``reference`` onto ``estimate`` under
        left composition: ``estimate = delta . reference``."""
        rel = estimate @ reference.inverse()
        roll, pitch, yaw = rotation_to_euler(rel.rotation)
        return cls(wrap_degrees(roll), wrap_degrees(pitch), wrap_degrees(yaw), *(float(v) for v in rel.translation))


def compose_perturbation(delta: Perturbation, base: Pose) -> Pose:
    """Left-compose a perturbation onto a pose: ``dT @ base``."""
    if delta.is_zero():
        return base
    dT = delta.as_pose()
    R = dT.rotation @ base.rotation
    if np.abs(R.T @ R - np.eye(3)).max() > 1e-12:
        R = orthonormalize(R)
    return Pose(R, dT.rotation @ base.translation + dT.translation)


def euler_round_trip(roll: float, pitch: float, yaw: float) -> tuple[float, float, float]:
    """Angles -> rotation -> angles, raising GimbalLock near pitch = +/-90."""
    return rotation_to_euler(euler_to_rotation(roll, pitch, yaw), strict=True)
