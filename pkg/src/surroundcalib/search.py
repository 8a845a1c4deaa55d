"""
Coarse-to-fine random search over pose perturbations, and the rig scheduler.

Each phase draws uniform perturbations within per-axis radii and keeps a
candidate only if it strictly lowers the loss. The first phase composes
every draw onto the initial pose; later phases compose onto the incumbent.
Candidates are drawn in fixed-size batches that all share the batch-start
centre, so a batch can be scored concurrently and reduced deterministically.
With ``batch_size=1`` this is the plain sequential rule.
"""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

import numpy as np

from .bev import BevSpec, overlap_mask, render_bev, DEFAULT_MIN_OVERLAP
from .camera import CameraIntrinsics, Perturbation, Pose, compose_perturbation
from .errors import CalibrationError, NoImprovementWarning, TooFewValid
from .loss import DEFAULT_COVERAGE_FLOOR, CameraContext, LossReport, PairTerm
from .texture import DEFAULT_DELTA, DEFAULT_THETA, MAX_POINTS, ExposureRatio, exposure_ratio, extract_texture_points

log = logging.getLogger(__name__)

CAMERA_IDS = ("front", "left", "right", "rear")
# Refinement order and the already-fixed neighbours each camera is scored against.
NEIGHBOURS = {"left": ("front",), "right": ("front",), "rear": ("left", "right")}
DEFAULT_BATCH_SIZE = 32


class CenterPolicy(str, Enum):
    FIXED_INITIAL = "fixed_initial"
    CURRENT_OPTIMAL = "current_optimal"


@dataclass(frozen=True)
class SearchPhase:
    """Per-axis symmetric search radii: rotation in degrees, translation in meters."""

    rot_radius: float
    trans_radius: float
    iterations: int
    center_policy: CenterPolicy = CenterPolicy.CURRENT_OPTIMAL

    def __post_init__(self):
        if self.rot_radius < 0 or self.trans_radius < 0:
            raise ValueError("search radii must be non-negative")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        object.__setattr__(self, "center_policy", CenterPolicy(self.center_policy))

    @property
    def rot_range(self) -> tuple[float, float]:
        return (-self.rot_radius, self.rot_radius)

    @property
    def trans_range(self) -> tuple[float, float]:
        return (-self.trans_radius, self.trans_radius)

    @property
    def scales(self) -> np.ndarray:
        r, t = self.rot_radius, self.trans_radius
        return np.array([r, r, r, t, t, t])


# Translation is far less observable than rotation from ground texture, so the
# later phases keep a wide translation radius and get most of the budget.
DEFAULT_SCHEDULE = (
    SearchPhase(3.0, 0.10, 2000, CenterPolicy.FIXED_INITIAL),
    SearchPhase(0.6, 0.05, 3500, CenterPolicy.CURRENT_OPTIMAL),
    SearchPhase(0.1, 0.015, 3500, CenterPolicy.CURRENT_OPTIMAL),
)


def validate_schedule(schedule: Iterable[SearchPhase]) -> list[str]:
    """Return the ways ``schedule`` departs from the canonical shape: fixed
    first phase, incumbent-centred later phases, strictly shrinking radii."""
    phases = list(schedule)
    problems = []
    for i, phase in enumerate(phases):
        want = CenterPolicy.FIXED_INITIAL if i == 0 else CenterPolicy.CURRENT_OPTIMAL
        if phase.center_policy is not want:
            problems.append(f"phase {i + 1} uses {phase.center_policy.value}, expected {want.value}")
        if phase.rot_radius <= 0 or phase.trans_radius <= 0:
            problems.append(f"phase {i + 1} has a zero radius")
    for i in range(1, len(phases)):
        a, b = phases[i - 1], phases[i]
        if not (b.rot_radius < a.rot_radius and b.trans_radius < a.trans_radius):
            problems.append(f"phase {i + 1} radii do not shrink")
    return problems


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


def phase_stream(seed: int, camera: str, phase_index: int) -> np.random.Generator:
    """Independent counter-based stream for one (camera, phase)."""
    cam = CAMERA_IDS.index(camera) if camera in CAMERA_IDS else len(CAMERA_IDS)
    ss = np.random.SeedSequence(seed, spawn_key=(cam, phase_index))
    return np.random.Generator(np.random.Philox(ss))


def sample_perturbations(phase: SearchPhase, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` x 6 uniform draws within the phase radii."""
    return rng.uniform(-1.0, 1.0, size=(count, 6)) * phase.scales


def sample_perturbation(phase: SearchPhase, rng: np.random.Generator) -> Perturbation:
    return Perturbation.from_array(sample_perturbations(phase, rng, 1)[0])


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


@dataclass
class TraceRecord:
    phase: int
    k: int
    perturbation: list[float]
    loss: float | None
    accepted: bool
    best_loss: float

    @property
    def rejected(self) -> bool:
        return self.loss is None


@dataclass
class SearchTrace:
    camera: str = ""
    initial_loss: float = math.inf
    records: list[TraceRecord] = field(default_factory=list)

    @property
    def best_loss_history(self) -> list[float]:
        return [self.initial_loss] + [r.best_loss for r in self.records]

    @property
    def final_loss(self) -> float:
        return self.best_loss_history[-1]

    def to_jsonl(self) -> str:
        lines = []
        for r in self.records:
            lines.append(
                json.dumps(
                    {
                        "camera": self.camera,
                        "phase": r.phase,
                        "k": r.k,
                        "perturbation": r.perturbation,
                        "loss": r.loss,
                        "rejected": r.rejected,
                        "accepted": r.accepted,
                        "best_loss": r.best_loss,
                    }
                )
            )
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str, initial_loss: float = math.inf) -> "SearchTrace":
        trace = cls(initial_loss=initial_loss)
        for line in text.splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            trace.camera = d["camera"]
            trace.records.append(
                TraceRecord(d["phase"], d["k"], d["perturbation"], d["loss"], d["accepted"], d["best_loss"])
            )
        return trace


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


LossFn = Callable[[Pose], "LossReport | float"]


def _score(loss_fn: LossFn, pose: Pose) -> float | None:
    try:
        out = loss_fn(pose)
    except TooFewValid:
        return None
    return float(out.mean_loss if isinstance(out, LossReport) else out)


def run_phase(
    phase: SearchPhase,
    initial: Pose,
    best: tuple[Pose, float],
    loss_fn: LossFn,
    rng: np.random.Generator,
    batch_size: int = DEFAULT_BATCH_SIZE,
    executor: ThreadPoolExecutor | None = None,
    phase_index: int = 0,
) -> tuple[Pose, float, list[TraceRecord]]:
    """Run one phase and return the incumbent (pose, loss) and its records.

    ``initial`` is the composition centre under FIXED_INITIAL; under
    CURRENT_OPTIMAL the incumbent at the start of each batch is used.
    """
    best_pose, best_loss = best
    if not math.isfinite(best_loss):
        raise ValueError("the incumbent loss must be finite before searching")
    records: list[TraceRecord] = []
    accepted_any = False
    k = 0
    while k < phase.iterations:
        n = min(batch_size, phase.iterations - k)
        draws = sample_perturbations(phase, rng, n)
        center = initial if phase.center_policy is CenterPolicy.FIXED_INITIAL else best_pose
        candidates = [compose_perturbation(Perturbation.from_array(d), center) for d in draws]
        if executor is not None and n > 1:
            losses = list(executor.map(lambda p: _score(loss_fn, p), candidates))
        else:
            losses = [_score(loss_fn, p) for p in candidates]

        winner = None
        for idx, loss in enumerate(losses):
            if loss is not None and (winner is None or loss < losses[winner]):
                winner = idx
        if winner is not None and losses[winner] < best_loss:
            best_pose, best_loss = candidates[winner], losses[winner]
            accepted_any = True
        else:
            winner = None
        for idx, loss in enumerate(losses):
            records.append(
                TraceRecord(phase_index, k + idx, [float(v) for v in draws[idx]], loss, idx == winner, best_loss)
            )
        k += n
    if phase.iterations > 0 and not accepted_any:
        warnings.warn(f"phase {phase_index + 1} accepted no candidate", NoImprovementWarning, stacklevel=2)
    return best_pose, best_loss, records


def calibrate_camera(
    camera: str,
    initial: Pose,
    schedule: Iterable[SearchPhase],
    loss_fn: LossFn,
    seed: int = 0,
    batch_size: int = DEFAULT_BATCH_SIZE,
    workers: int = 1,
) -> tuple[Pose, SearchTrace]:
    """Thread the incumbent through every phase of ``schedule``."""
    initial_loss = _score(loss_fn, initial)
    if initial_loss is None:
        raise TooFewValid(0, 0, getattr(loss_fn, "coverage_floor", DEFAULT_COVERAGE_FLOOR))
    trace = SearchTrace(camera, initial_loss)
    best = (initial, initial_loss)
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for i, phase in enumerate(schedule):
            rng = phase_stream(seed, camera, i)
            pose, loss, records = run_phase(phase, initial, best, loss_fn, rng, batch_size, executor, i)
            best = (pose, loss)
            trace.records.extend(records)
    finally:
        if executor is not None:
            executor.shutdown()
    return best[0], trace


# ---------------------------------------------------------------------------
# Rig
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CameraSetup:
    name: str
    intrinsics: CameraIntrinsics
    pose: Pose
    image: np.ndarray


@dataclass(frozen=True)
class CalibrationOptions:
    delta: int = DEFAULT_DELTA
    theta: float = DEFAULT_THETA
    max_points: int = MAX_POINTS
    exposure_compensation: bool = False
    gamma_on: str = "j"
    coverage_floor: float = DEFAULT_COVERAGE_FLOOR
    min_overlap: int = DEFAULT_MIN_OVERLAP
    batch_size: int = DEFAULT_BATCH_SIZE
    workers: int = 1


@dataclass
class RigCalibrationResult:
    poses: dict[str, Pose]
    traces: dict[str, SearchTrace]
    failures: dict[str, str]
    texture: dict[tuple[str, str], "object"] = field(default_factory=dict)
    duration: float = 0.0

    @property
    def status(self) -> str:
        refined = [c for c in NEIGHBOURS if c in self.poses]
        failed = [c for c in refined if c in self.failures]
        if not failed:
            return "success"
        return "failure" if len(failed) == len(refined) else "partial"


def build_context(
    camera: CameraSetup,
    fixed: dict[str, tuple[CameraSetup, Pose]],
    spec: BevSpec,
    options: CalibrationOptions,
    bev_j=None,
) -> tuple[CameraContext, dict]:
    """Texture terms for ``camera`` against each fixed neighbour.

    ``fixed`` maps neighbour id to (setup, pose to render it with). Pairs
    that cannot be built are skipped; if none survive the first error is
    re-raised with the pair named.
    """
    if bev_j is None:
        bev_j = render_bev(camera.image, camera.intrinsics, camera.pose, spec)
    terms, texture, errors = [], {}, []
    for other, (setup, pose) in fixed.items():
        pair = (other, camera.name)
        try:
            bev_i = render_bev(setup.image, setup.intrinsics, pose, spec)
            mask, _ = overlap_mask(bev_i, bev_j, spec, options.min_overlap, pair)
            points = extract_texture_points(
                bev_i, mask, options.delta, options.theta, options.max_points, other, pair
            )
            gamma = exposure_ratio(bev_i, bev_j, mask) if options.exposure_compensation else ExposureRatio()
        except CalibrationError as exc:
            errors.append(f"{other}-{camera.name}: {exc}")
            log.warning("pair %s-%s skipped: %s", other, camera.name, exc)
            continue
        terms.append(PairTerm.build(points, spec, gamma))
        texture[pair] = points
    if not terms:
        raise CalibrationError("; ".join(errors) or f"no fixed neighbour for {camera.name}")
    ctx = CameraContext(
        camera.name, camera.image, camera.intrinsics, spec, terms, options.coverage_floor, options.gamma_on
    )
    return ctx, texture


def calibrate_rig(
    rig: dict[str, CameraSetup],
    spec: BevSpec,
    schedule: Iterable[SearchPhase] = DEFAULT_SCHEDULE,
    seed: int = 0,
    options: CalibrationOptions = CalibrationOptions(),
) -> RigCalibrationResult:
    """Keep the front camera fixed and refine left, right, then rear."""
    missing = set(CAMERA_IDS) - set(rig)
    if missing:
        raise ValueError(f"rig lacks cameras {sorted(missing)}")
    schedule = list(schedule)
    start = time.perf_counter()
    poses = {"front": rig["front"].pose}
    traces: dict[str, SearchTrace] = {}
    failures: dict[str, str] = {}
    texture = {}
    for name in NEIGHBOURS:
        setup = rig[name]
        fixed = {n: (rig[n], poses[n]) for n in NEIGHBOURS[name] if n not in failures}
        try:
            if not fixed:
                raise CalibrationError(f"every neighbour of {name} failed")
            ctx, tex = build_context(setup, fixed, spec, options)
            texture.update(tex)
            pose, trace = calibrate_camera(
                name, setup.pose, schedule, ctx, seed, options.batch_size, options.workers
            )
        except CalibrationError as exc:
            log.error("camera %s failed: %s", name, exc)
            failures[name] = str(exc)
            poses[name] = setup.pose
            continue
        poses[name] = pose
        traces[name] = trace
        log.info("camera %s: loss %.3f -> %.3f", name, trace.initial_loss, trace.final_loss)
    return RigCalibrationResult(poses, traces, failures, texture, time.perf_counter() - start)
