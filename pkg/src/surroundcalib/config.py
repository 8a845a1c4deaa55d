"""
Rig configuration and calibration report files (JSON, UTF-8).

Angles are degrees and lengths meters throughout. A camera pose is written
as its placement: Euler angles of the ground-to-camera rotation plus the
camera centre ``(tx, ty, tz)`` in the ground frame. Reports additionally
carry each pose's 3x4 matrix so poses reload bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .bev import DEFAULT_MIN_OVERLAP, BevSpec
from .camera import CameraIntrinsics, FisheyeIntrinsics, PinholeIntrinsics, Pose
from .errors import ConfigError
from .loss import DEFAULT_COVERAGE_FLOOR
from .search import (
    CAMERA_IDS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_SCHEDULE,
    CalibrationOptions,
    CameraSetup,
    CenterPolicy,
    SearchPhase,
)
from .texture import DEFAULT_DELTA, DEFAULT_THETA, MAX_POINTS

SCHEMA_VERSION = 1
PLACEMENT_KEYS = ("roll", "pitch", "yaw", "tx", "ty", "tz")
LUMA_601 = np.array([0.299, 0.587, 0.114])


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


def load_gray(path) -> np.ndarray:
    """Read an image as float grayscale (Rec. 601 luma for colour input)."""
    with Image.open(path) as img:
        if img.mode in ("L", "I;16", "I", "F"):
            return np.asarray(img, dtype=float)
        rgb = np.asarray(img.convert("RGB"), dtype=float)
    return rgb @ LUMA_601


def save_gray(path, image: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.round(np.asarray(image, dtype=float)), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


def save_mask(path, mask: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(mask, dtype=bool)).convert("1").save(path)


# ---------------------------------------------------------------------------
# Intrinsics and poses
# ---------------------------------------------------------------------------


def intrinsics_from_dict(model: str, d: dict) -> CameraIntrinsics:
    try:
        if model == "pinhole":
            return PinholeIntrinsics(
                float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"])
            )
        if model == "fisheye":
            return FisheyeIntrinsics(
                float(d["fx"]),
                float(d["fy"]),
                float(d["cx"]),
                float(d["cy"]),
                float(d.get("k1", 0.0)),
                float(d.get("k2", 0.0)),
                float(d.get("k3", 0.0)),
                float(d.get("k4", 0.0)),
                int(d["width"]),
                int(d["height"]),
                math.radians(float(d["fov_deg"])),
            )
    except KeyError as exc:
        raise ConfigError(f"{model} intrinsics missing field {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid {model} intrinsics: {exc}") from None
    raise ConfigError(f"unknown camera model {model!r}")


def intrinsics_to_dict(intr: CameraIntrinsics) -> dict:
    d = {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy, "width": intr.width, "height": intr.height}
    if isinstance(intr, FisheyeIntrinsics):
        d.update(k1=intr.k1, k2=intr.k2, k3=intr.k3, k4=intr.k4, fov_deg=math.degrees(intr.fov))
    return d


def pose_from_placement(p: dict) -> Pose:
    try:
        return Pose.from_camera_placement(*(float(p[k]) for k in PLACEMENT_KEYS))
    except KeyError as exc:
        raise ConfigError(f"pose missing field {exc}") from None


def pose_to_matrix_list(pose: Pose) -> list[list[float]]:
    return [[float(v) for v in pose.rotation[r]] + [float(pose.translation[r])] for r in range(3)]


def pose_from_matrix_list(m) -> Pose:
    m = np.asarray(m, dtype=float)
    return Pose(m[:, :3], m[:, 3])


# ---------------------------------------------------------------------------
# Rig configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraConfig:
    id: str
    model: str
    intrinsics: dict
    pose: dict
    image: str

    def camera_intrinsics(self) -> CameraIntrinsics:
        return intrinsics_from_dict(self.model, self.intrinsics)

    def initial_pose(self) -> Pose:
        return pose_from_placement(self.pose)


@dataclass(frozen=True)
class RigConfig:
    cameras: tuple[CameraConfig, ...]
    bev: BevSpec = field(default_factory=BevSpec)
    delta: int = DEFAULT_DELTA
    theta: float = DEFAULT_THETA
    max_points: int = MAX_POINTS
    exposure_compensation: bool = False
    exposure_apply_to: str = "j"
    coverage_floor: float = DEFAULT_COVERAGE_FLOOR
    min_overlap: int = DEFAULT_MIN_OVERLAP
    schedule: tuple[SearchPhase, ...] = DEFAULT_SCHEDULE
    batch_size: int = DEFAULT_BATCH_SIZE
    workers: int = 1
    seed: int = 0
    ground_truth: str | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    # -- parsing -------------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RigConfig":
        version = d.get("version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config version {version!r}, expected {SCHEMA_VERSION}")
        cams = []
        for c in d.get("cameras", []):
            try:
                cams.append(CameraConfig(c["id"], c.get("model", "pinhole"), dict(c["intrinsics"]), dict(c["pose"]), c["image"]))
            except KeyError as exc:
                raise ConfigError(f"camera entry missing field {exc}") from None
        ids = [c.id for c in cams]
        if sorted(ids) != sorted(CAMERA_IDS):
            raise ConfigError(f"expected exactly the cameras {list(CAMERA_IDS)}, got {ids}")
        b = d.get("bev", {})
        roi = b.get("ego_roi", (450, 380, 550, 620))
        try:
            bev = BevSpec(
                int(b.get("width", 1000)),
                int(b.get("height", 1000)),
                float(b.get("scale", 0.02)),
                float(b.get("center_x", 500.0)),
                float(b.get("center_y", 500.0)),
                float(b.get("ground_z", 0.0)),
                tuple(roi) if roi is not None else None,
            )
        except ValueError as exc:
            raise ConfigError(f"invalid bev section: {exc}") from None
        tex = d.get("texture", {})
        exp = d.get("exposure", {})
        srch = d.get("search", {})
        phases = srch.get("phases")
        if phases is None:
            schedule = DEFAULT_SCHEDULE
        else:
            try:
                schedule = tuple(
                    SearchPhase(
                        float(p["rot_radius"]),
                        float(p["trans_radius"]),
                        int(p["iterations"]),
                        CenterPolicy(p.get("center_policy", "fixed_initial" if i == 0 else "current_optimal")),
                    )
                    for i, p in enumerate(phases)
                )
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"invalid search phase: {exc}") from None
        apply_to = exp.get("apply_to", "j")
        if apply_to not in ("i", "j"):
            raise ConfigError(f"exposure.apply_to must be 'i' or 'j', got {apply_to!r}")
        return cls(
            cameras=tuple(sorted(cams, key=lambda c: CAMERA_IDS.index(c.id))),
            bev=bev,
            delta=int(tex.get("delta", DEFAULT_DELTA)),
            theta=float(tex.get("theta", DEFAULT_THETA)),
            max_points=int(tex.get("max_points", MAX_POINTS)),
            exposure_compensation=bool(exp.get("enabled", False)),
            exposure_apply_to=apply_to,
            coverage_floor=float(d.get("coverage_floor", DEFAULT_COVERAGE_FLOOR)),
            min_overlap=int(d.get("min_overlap", DEFAULT_MIN_OVERLAP)),
            schedule=schedule,
            batch_size=int(srch.get("batch_size", DEFAULT_BATCH_SIZE)),
            workers=int(srch.get("workers", 1)),
            seed=int(d.get("seed", 0)),
            ground_truth=d.get("ground_truth"),
            base_dir=Path(base_dir),
        )

    @classmethod
    def load(cls, path) -> "RigConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        return cls.from_dict(data, path.parent)

    # -- serialisation -------------------------------------------------------

    def to_dict(self) -> dict:
        b = self.bev
        return {
            "version": SCHEMA_VERSION,
            "cameras": [
                {"id": c.id, "model": c.model, "intrinsics": dict(c.intrinsics), "pose": dict(c.pose), "image": c.image}
                for c in self.cameras
            ],
            "bev": {
                "width": b.width,
                "height": b.height,
                "scale": b.scale,
                "center_x": b.center_x,
                "center_y": b.center_y,
                "ground_z": b.ground_z,
                "ego_roi": list(b.ego_roi) if b.ego_roi is not None else None,
            },
            "texture": {"delta": self.delta, "theta": self.theta, "max_points": self.max_points},
            "exposure": {"enabled": self.exposure_compensation, "apply_to": self.exposure_apply_to},
            "coverage_floor": self.coverage_floor,
            "min_overlap": self.min_overlap,
            "search": {
                "batch_size": self.batch_size,
                "workers": self.workers,
                "phases": [
                    {
                        "rot_radius": p.rot_radius,
                        "trans_radius": p.trans_radius,
                        "iterations": p.iterations,
                        "center_policy": p.center_policy.value,
                    }
                    for p in self.schedule
                ],
            },
            "seed": self.seed,
            "ground_truth": self.ground_truth,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def digest(self) -> str:
        """SHA-256 over the canonical JSON form. Worker count is excluded:
        it cannot change the result."""
        d = self.to_dict()
        d["search"] = {k: v for k, v in d["search"].items() if k != "workers"}
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def with_overrides(self, **changes) -> "RigConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes)

    # -- materialisation -----------------------------------------------------

    def camera(self, name: str) -> CameraConfig:
        return next(c for c in self.cameras if c.id == name)

    def image_path(self, cam: CameraConfig) -> Path:
        p = Path(cam.image)
        return p if p.is_absolute() else self.base_dir / p

    def options(self) -> CalibrationOptions:
        return CalibrationOptions(
            delta=self.delta,
            theta=self.theta,
            max_points=self.max_points,
            exposure_compensation=self.exposure_compensation,
            gamma_on=self.exposure_apply_to,
            coverage_floor=self.coverage_floor,
            min_overlap=self.min_overlap,
            batch_size=self.batch_size,
            workers=self.workers,
        )

    def poses(self) -> dict[str, Pose]:
        return {c.id: c.initial_pose() for c in self.cameras}

    def load_rig(self) -> dict[str, CameraSetup]:
        """Read every image and check it against the declared intrinsics."""
        rig = {}
        for cam in self.cameras:
            intr = cam.camera_intrinsics()
            path = self.image_path(cam)
            if not path.is_file():
                raise ConfigError(f"image for camera {cam.id} not found: {path}")
            img = load_gray(path)
            if img.shape != (intr.height, intr.width):
                raise ConfigError(
                    f"image {path} is {img.shape[1]}x{img.shape[0]}, camera {cam.id} declares {intr.width}x{intr.height}"
                )
            rig[cam.id] = CameraSetup(cam.id, intr, cam.initial_pose(), img)
        return rig

    def ground_truth_path(self) -> Path | None:
        if not self.ground_truth:
            return None
        p = Path(self.ground_truth)
        return p if p.is_absolute() else self.base_dir / p
