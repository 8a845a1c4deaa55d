"""Exposure-compensated photometric loss of a candidate pose."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bev import BevSpec, bev_pixel_to_ground, sample_bilinear
from .camera import CameraIntrinsics, Pose
from .errors import TooFewValid
from .texture import ExposureRatio, TexturePointSet

DEFAULT_COVERAGE_FLOOR = 0.5


@dataclass(frozen=True)
class LossReport:
    mean_loss: float
    valid_count: int
    total_count: int
    sum_sq: float = 0.0


def _residuals(ground, intensity, pose, image, intr, gamma, gamma_on="j"):
    uv, in_view = intr.project(pose.transform(ground))
    sampled, inside = sample_bilinear(image, uv[:, 0], uv[:, 1])
    valid = in_view & inside
    if gamma_on == "j":
        res = intensity[valid] - gamma * sampled[valid]
    else:
        res = intensity[valid] / gamma - sampled[valid]
    return res, int(valid.sum())


def photometric_loss(
    points: TexturePointSet,
    candidate: Pose,
    img_j: np.ndarray,
    intr_j: CameraIntrinsics,
    spec: BevSpec,
    gamma: ExposureRatio = ExposureRatio(),
    coverage_floor: float = DEFAULT_COVERAGE_FLOOR,
    gamma_on: str = "j",
) -> LossReport:
    """Mean squared residual between the fixed camera's BEV intensities and
    camera j's image sampled at the texture points' reprojections.

    Points that leave camera j's view are dropped from the mean; if fewer
    than ``coverage_floor`` of them remain, TooFewValid is raised.
    """
    if len(points) == 0:
        raise ValueError("texture point set is empty")
    ground = bev_pixel_to_ground(points.xy[:, 0], points.xy[:, 1], spec)
    res, valid = _residuals(
        ground, points.intensity, candidate, np.asarray(img_j, dtype=float), intr_j, gamma.gamma, gamma_on
    )
    total = len(points)
    if valid == 0 or valid < coverage_floor * total:
        raise TooFewValid(valid, total, coverage_floor)
    sum_sq = float(np.sum(res * res))
    return LossReport(sum_sq / valid, valid, total, sum_sq)


@dataclass(frozen=True, eq=False)
class PairTerm:
    """One fixed neighbour's texture points with precomputed ground positions."""

    points: TexturePointSet
    gamma: ExposureRatio = ExposureRatio()
    ground: np.ndarray = field(default=None, repr=False)

    @classmethod
    def build(cls, points: TexturePointSet, spec: BevSpec, gamma: ExposureRatio = ExposureRatio()) -> "PairTerm":
        return cls(points, gamma, bev_pixel_to_ground(points.xy[:, 0], points.xy[:, 1], spec))


@dataclass(frozen=True, eq=False)
class CameraContext:
    """Everything needed to score candidate poses of one camera."""

    camera: str
    image: np.ndarray
    intrinsics: CameraIntrinsics
    spec: BevSpec
    terms: list[PairTerm]
    coverage_floor: float = DEFAULT_COVERAGE_FLOOR
    gamma_on: str = "j"

    def __post_init__(self):
        object.__setattr__(self, "image", np.asarray(self.image, dtype=float))
        if not self.terms:
            raise ValueError(f"camera {self.camera} has no fixed neighbour to score against")

    def __call__(self, candidate: Pose) -> LossReport:
        return pair_loss_for_camera(self, candidate)


def pair_loss_for_camera(context: CameraContext, candidate: Pose) -> LossReport:
    """Pool the residuals of every fixed neighbour, weighted by point count.

    A pair whose coverage falls below the floor is left out; TooFewValid is
    raised only if every pair fails.
    """
    sum_sq = 0.0
    valid_total = 0
    total = 0
    failures = []
    for term in context.terms:
        res, valid = _residuals(
            term.ground,
            term.points.intensity,
            candidate,
            context.image,
            context.intrinsics,
            term.gamma.gamma,
            context.gamma_on,
        )
        n = len(term.points)
        if valid == 0 or valid < context.coverage_floor * n:
            failures.append(TooFewValid(valid, n, context.coverage_floor))
            continue
        sum_sq += float(np.sum(res * res))
        valid_total += valid
        total += n
    if len(failures) == len(context.terms):
        raise failures[0]
    return LossReport(sum_sq / valid_total, valid_total, total, sum_sq)
