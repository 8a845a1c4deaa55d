"""
Synthetic ground truth: a textured ground plane, a four-camera rig placed
like the reference vehicle, a forward ray-casting renderer, pose
perturbation and per-axis error metrics.

The renderer casts rays from camera pixels onto the plane and samples the
ground texture with ``scipy.ndimage.map_coordinates``. It shares no code
with the inverse-mapping BEV renderer, so agreement between the two is a
meaningful check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .bev import BevSpec
from .camera import CameraIntrinsics, FisheyeIntrinsics, Perturbation, PinholeIntrinsics, Pose, compose_perturbation
from .search import CAMERA_IDS, CameraSetup

HORIZON_FILL = 128.0

# Camera placements: roll, pitch, yaw of the ground-to-camera rotation
# (degrees) and the camera centre in the ground frame (meters).
REFERENCE_PLACEMENTS = {
    "front": (180.0, 0.0, -90.0, 0.0, -2.0, 4.1),
    "left": (0.0, 90.0, -90.0, -1.0, 0.0, 4.1),
    "right": (0.0, -90.0, -90.0, 1.0, 0.0, 4.1),
    "rear": (180.0, 0.0, 90.0, 0.0, 2.0, 4.1),
}

# Initial-error row: d_roll, d_pitch, d_yaw (deg), dx, dy, dz (m).
REFERENCE_PERTURBATIONS = {
    "left": Perturbation(0.95, 1.25, 2.86, 0.095, 0.025, -0.086),
    "right": Perturbation(-2.95, 0.95, 2.8, 0.065, -0.075, 0.095),
    "rear": Perturbation(-1.75, 2.95, -1.8, -0.02, -0.076, 0.096),
}

PINHOLE_FOV_DEG = 125.0
PINHOLE_SIZE = (1500, 1500)
FISHEYE_FOV_DEG = 195.0
FISHEYE_SIZE = (1280, 1080)
FISHEYE_K = (-0.05, 0.005, 0.0, 0.0)
FISHEYE_FOCAL = 350.0


def bev_spec_for(fisheye: bool = False) -> BevSpec:
    """BEV window suited to the reference rig.

    The fisheye rig sees the whole ground plane, but beyond about 6 m its
    pixels cover several BEV cells and the photometric residual is dominated
    by resampling error, so its window is 12 m instead of 20 m.
    """
    return BevSpec.centered(600, 600, 0.02) if fisheye else BevSpec()


# ---------------------------------------------------------------------------
# Scene
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GroundScene:
    """Square grayscale texture centred on the ground origin.

    Texture pixel ``(i, j)`` (row, column) covers the ground point
    ``(-extent/2 + (j + 0.5) * res, -extent/2 + (i + 0.5) * res)``.
    Lookups beyond the extent clamp to the border.
    """

    texture: np.ndarray
    extent: float = 40.0

    @property
    def resolution(self) -> float:
        return self.extent / self.texture.shape[0]

    def lookup(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        col = (x + self.extent / 2.0) / self.resolution - 0.5
        row = (y + self.extent / 2.0) / self.resolution - 0.5
        coords = np.stack([row.ravel(), col.ravel()])
        out = ndimage.map_coordinates(self.texture, coords, order=1, mode="nearest")
        return out.reshape(x.shape)


def make_scene(
    seed: int = 0,
    size: int = 2048,
    extent: float = 40.0,
    richness: float = 1.0,
    blur_px: float = 1.5,
) -> GroundScene:
    """Tiles, lane markings and band-limited noise.

    ``richness`` scales the contrast of every textured component; 0 gives a
    near-blank surface with only faint low-frequency shading.
    """
    rng = np.random.default_rng(seed)
    res = extent / size
    centres = -extent / 2.0 + (np.arange(size) + 0.5) * res
    X, Y = np.meshgrid(centres, centres)

    shading = ndimage.gaussian_filter(rng.normal(size=(size, size)), 60.0)
    shading /= np.abs(shading).max() + 1e-12
    tex = 110.0 + 12.0 * shading

    # Irregular paving: random tile shades on a 0.6 m grid with dark joints.
    tile = 0.6
    ti = np.floor(X / tile).astype(int)
    tj = np.floor(Y / tile).astype(int)
    shades = rng.uniform(-35.0, 35.0, size=(512, 512))
    tex += richness * shades[ti % 512, tj % 512]
    fx = np.abs(X / tile - np.round(X / tile)) * tile
    fy = np.abs(Y / tile - np.round(Y / tile)) * tile
    joint = (np.minimum(fx, fy) < 0.03).astype(float)
    tex -= richness * 45.0 * joint

    # Lane markings along y, dashed on the inner pair.
    for x0, dashed in ((-5.25, False), (-1.75, True), (1.75, True), (5.25, False)):
        stripe = np.abs(X - x0) < 0.075
        if dashed:
            stripe &= np.mod(Y, 4.0) < 2.5
        tex = np.where(stripe, tex + richness * (215.0 - tex), tex)

    # Crosswalk-style bars across the width.
    bars = (np.abs(Y - 8.0) < 1.5) & (np.mod(X, 1.0) < 0.45)
    tex = np.where(bars, tex + richness * (200.0 - tex), tex)

    noise = ndimage.gaussian_filter(rng.normal(size=(size, size)), 3.0)
    noise /= noise.std() + 1e-12
    tex += richness * 10.0 * noise

    tex = ndimage.gaussian_filter(tex, blur_px)
    return GroundScene(np.clip(tex, 0.0, 255.0), extent)


def checkerboard_scene(square: float = 0.5, size: int = 2048, extent: float = 40.0, blur_px: float = 0.0):
    res = extent / size
    centres = -extent / 2.0 + (np.arange(size) + 0.5) * res
    X, Y = np.meshgrid(centres, centres)
    board = ((np.floor(X / square) + np.floor(Y / square)) % 2) * 160.0 + 48.0
    if blur_px > 0:
        board = ndimage.gaussian_filter(board, blur_px)
    return GroundScene(board, extent)


# ---------------------------------------------------------------------------
# Rig
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RigGroundTruth:
    intrinsics: dict[str, CameraIntrinsics]
    poses: dict[str, Pose]
    ground_z: float = 0.0
    applied: dict[str, Perturbation] = field(default_factory=dict)

    def with_poses(self, poses: dict[str, Pose], applied=None) -> "RigGroundTruth":
        return RigGroundTruth(self.intrinsics, dict(poses), self.ground_z, dict(applied or {}))

    def setups(self, images: dict[str, np.ndarray]) -> dict[str, CameraSetup]:
        return {n: CameraSetup(n, self.intrinsics[n], self.poses[n], images[n]) for n in CAMERA_IDS}


def pinhole_intrinsics(scale: float = 1.0) -> PinholeIntrinsics:
    w, h = (int(round(s * scale)) for s in PINHOLE_SIZE)
    return PinholeIntrinsics.from_fov(w, h, PINHOLE_FOV_DEG)


def fisheye_intrinsics(scale: float = 1.0) -> FisheyeIntrinsics:
    w, h = (int(round(s * scale)) for s in FISHEYE_SIZE)
    f = FISHEYE_FOCAL * scale
    return FisheyeIntrinsics(f, f, w / 2.0, h / 2.0, *FISHEYE_K, w, h, math.radians(FISHEYE_FOV_DEG / 2.0))


def reference_rig(fisheye: bool = False, scale: float = 1.0) -> RigGroundTruth:
    """Reference rig: cameras 4.1 m above the ground plane z = 0."""
    intr = fisheye_intrinsics(scale) if fisheye else pinhole_intrinsics(scale)
    poses = {n: Pose.from_camera_placement(*REFERENCE_PLACEMENTS[n]) for n in CAMERA_IDS}
    return RigGroundTruth({n: intr for n in CAMERA_IDS}, poses)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def cast_rays(intr: CameraIntrinsics, pose: Pose, ground_z: float = 0.0, uv=None):
    """Intersect pixel rays with the plane z = ground_z.

    Returns (Nx3 hit points, N hit flags). ``uv`` defaults to every pixel
    centre in row-major order.
    """
    if uv is None:
        v, u = np.mgrid[0 : intr.height, 0 : intr.width]
        uv = np.stack([u.ravel(), v.ravel()], axis=-1).astype(float)
    rays, ok = intr.unproject(uv)
    dirs = rays @ pose.rotation  # R^T d for each row
    origin = pose.center
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (ground_z - origin[2]) / dz
    hit = ok & np.isfinite(s) & (s > 0)
    s = np.where(hit, s, 0.0)
    points = origin + dirs * s[:, None]
    return points, hit


def render_view(
    scene: GroundScene,
    intr: CameraIntrinsics,
    pose: Pose,
    ground_z: float = 0.0,
    gain: float = 1.0,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    points, hit = cast_rays(intr, pose, ground_z)
    values = np.full(len(points), HORIZON_FILL)
    values[hit] = gain * scene.lookup(points[hit, 0], points[hit, 1])
    img = values.reshape(intr.height, intr.width)
    if noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        img = img + rng.normal(0.0, noise_sigma, img.shape)
    return np.clip(img, 0.0, 255.0)


def render_synthetic_views(
    scene: GroundScene,
    rig: RigGroundTruth,
    gains: dict[str, float] | None = None,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> dict[str, np.ndarray]:
    """One float image per camera in [0, 255]; rays above the horizon or
    outside the lens are filled with mid-gray."""
    gains = gains or {}
    views = {}
    for i, name in enumerate(CAMERA_IDS):
        rng = np.random.default_rng([seed, i]) if noise_sigma > 0 else None
        views[name] = render_view(
            scene, rig.intrinsics[name], rig.poses[name], rig.ground_z, gains.get(name, 1.0), noise_sigma, rng
        )
    return views


# ---------------------------------------------------------------------------
# Perturbation and metrics
# ---------------------------------------------------------------------------


def perturb_rig(
    rig: RigGroundTruth,
    perturbations: dict[str, Perturbation] | None = None,
    rot_radius: float = 0.0,
    trans_radius: float = 0.0,
    rng: np.random.Generator | None = None,
    cameras=("left", "right", "rear"),
) -> RigGroundTruth:
    """Left-compose perturbations onto the rig poses.

    Explicit ``perturbations`` take precedence; otherwise each listed camera
    draws uniform angles in [-rot_radius, rot_radius] and translations in
    [-trans_radius, trans_radius]. The applied values are recorded.
    """
    applied = {}
    poses = dict(rig.poses)
    for name in cameras:
        if perturbations is not None:
            if name not in perturbations:
                continue
            delta = perturbations[name]
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            draw = rng.uniform(-1.0, 1.0, 6) * np.array([rot_radius] * 3 + [trans_radius] * 3)
            delta = Perturbation.from_array(draw)
        poses[name] = compose_perturbation(delta, rig.poses[name])
        applied[name] = delta
    return rig.with_poses(poses, applied)


AXES = ("tx", "ty", "tz", "roll", "pitch", "yaw")


def pose_error(estimate: Pose, truth: Pose) -> dict[str, float]:
    """Signed per-axis error of ``estimate`` relative to ``truth``: the
    perturbation that left-composes ``truth`` into ``estimate``."""
    d = Perturbation.between(estimate, truth)
    return {"tx": d.dx, "ty": d.dy, "tz": d.dz, "roll": d.d_roll, "pitch": d.d_pitch, "yaw": d.d_yaw}


def evaluate_mae(estimated: dict[str, Pose], truth: dict[str, Pose]) -> dict:
    """Per-camera signed errors plus the per-axis mean absolute error.

    Returns ``{"cameras": {name: {axis: err}}, "mae": {axis: value}}``.
    """
    if set(estimated) != set(truth):
        raise ValueError(f"camera sets differ: {sorted(estimated)} vs {sorted(truth)}")
    names = [n for n in CAMERA_IDS if n in truth] + sorted(set(truth) - set(CAMERA_IDS))
    cams = {n: pose_error(estimated[n], truth[n]) for n in names}
    mae = {a: float(np.mean([abs(cams[n][a]) for n in names])) for a in AXES}
    return {"cameras": cams, "mae": mae}
