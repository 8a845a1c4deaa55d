import numpy as np
import pytest

from surroundcalib.bev import BevSpec
from surroundcalib.camera import PinholeIntrinsics, Perturbation, Pose, compose_perturbation
from surroundcalib.errors import TooFewValid
from surroundcalib.loss import CameraContext, PairTerm, pair_loss_for_camera, photometric_loss
from surroundcalib.search import CalibrationOptions, NEIGHBOURS, build_context
from surroundcalib.texture import ExposureRatio, TexturePointSet

GT_LOSS_BOUND = 4.0


def _grid_spec():
    return BevSpec(width=60, height=40, scale=0.05, center_x=30, center_y=20, ego_roi=None)


def _upward_camera(spec, height=2.0):
    """A camera under the ground looking up whose image pixels coincide
    with the BEV grid of ``spec``."""
    f = height / spec.scale
    intr = PinholeIntrinsics(f, f, spec.center_x, spec.center_y, spec.width, spec.height)
    return intr, Pose.from_camera_placement(0, 0, 0, 0, 0, -height)


def _all_points(intensities, spec, margin=2):
    rows, cols = np.mgrid[margin : spec.height - margin, margin : spec.width - margin]
    xy = np.stack([cols.ravel(), rows.ravel()], axis=-1)
    return TexturePointSet(xy, intensities[xy[:, 1], xy[:, 0]].astype(float))


def _context(rig, views, spec, camera, **kw):
    setups = rig.setups(views)
    fixed = {n: (setups[n], rig.poses[n]) for n in NEIGHBOURS[camera]}
    ctx, _ = build_context(setups[camera], fixed, spec, CalibrationOptions(**kw))
    return ctx


def test_constant_residual_of_one_hundred():
    spec = _grid_spec()
    intr, pose = _upward_camera(spec)
    pts = _all_points(np.full((40, 60), 100.0), spec)
    rep = photometric_loss(pts, pose, np.zeros((40, 60)), intr, spec)
    assert rep.mean_loss == 10_000.0
    assert rep.valid_count == rep.total_count == len(pts)


def test_aligned_images_match_direct_pixel_difference():
    spec = _grid_spec()
    intr, pose = _upward_camera(spec)
    rng = np.random.default_rng(0)
    bev_i = rng.uniform(0, 255, size=(40, 60))
    img_j = rng.uniform(0, 255, size=(40, 60))
    pts = _all_points(bev_i, spec)
    oracle = np.mean((bev_i[2:-2, 2:-2] - img_j[2:-2, 2:-2]) ** 2)
    rep = photometric_loss(pts, pose, img_j, intr, spec)
    assert rep.mean_loss == pytest.approx(oracle, rel=1e-9)


def test_gamma_scales_the_sample():
    spec = _grid_spec()
    intr, pose = _upward_camera(spec)
    pts = _all_points(np.full((40, 60), 120.0), spec)
    img = np.full((40, 60), 100.0)
    assert photometric_loss(pts, pose, img, intr, spec, ExposureRatio(1.2)).mean_loss == pytest.approx(0.0, abs=1e-18)
    assert photometric_loss(pts, pose, img, intr, spec, ExposureRatio(1.2), gamma_on="i").mean_loss == pytest.approx(0.0)


def test_turning_away_from_the_ground_is_rejected():
    spec = _grid_spec()
    intr, pose = _upward_camera(spec)
    pts = _all_points(np.full((40, 60), 100.0), spec)
    away = compose_perturbation(Perturbation(d_pitch=90.0), pose)
    with pytest.raises(TooFewValid):
        photometric_loss(pts, away, np.zeros((40, 60)), intr, spec)


def test_partial_coverage_respects_floor():
    spec = _grid_spec()
    intr, pose = _upward_camera(spec)
    pts = _all_points(np.full((40, 60), 100.0), spec)
    # Shift by a third of the width: about two thirds of the points stay in view.
    shifted = compose_perturbation(Perturbation(dx=-20 * spec.scale), pose)
    rep = photometric_loss(pts, shifted, np.zeros((40, 60)), intr, spec)
    assert 0.5 * rep.total_count <= rep.valid_count < rep.total_count
    with pytest.raises(TooFewValid):
        photometric_loss(pts, shifted, np.zeros((40, 60)), intr, spec, coverage_floor=0.9)


def test_duplicated_points_keep_the_mean():
    spec = _grid_spec()
    intr, pose = _upward_camera(spec)
    rng = np.random.default_rng(1)
    bev_i = rng.uniform(0, 255, size=(40, 60))
    img = rng.uniform(0, 255, size=(40, 60))
    pts = _all_points(bev_i, spec)
    doubled = TexturePointSet(np.concatenate([pts.xy, pts.xy]), np.concatenate([pts.intensity, pts.intensity]))
    cand = compose_perturbation(Perturbation(d_yaw=0.7, dx=0.01), pose)
    a = photometric_loss(pts, cand, img, intr, spec).mean_loss
    b = photometric_loss(doubled, cand, img, intr, spec).mean_loss
    assert abs(a - b) <= 1e-12 * max(1.0, a)


def test_pooling_single_and_twin_neighbours():
    spec = _grid_spec()
    intr, pose = _upward_camera(spec)
    rng = np.random.default_rng(2)
    pts = _all_points(rng.uniform(0, 255, size=(40, 60)), spec)
    img = rng.uniform(0, 255, size=(40, 60))
    single = photometric_loss(pts, pose, img, intr, spec)
    ctx = CameraContext("j", img, intr, spec, [PairTerm.build(pts, spec)])
    assert pair_loss_for_camera(ctx, pose) == single
    twin = CameraContext("j", img, intr, spec, [PairTerm.build(pts, spec), PairTerm.build(pts, spec)])
    assert twin(pose).mean_loss == pytest.approx(single.mean_loss, rel=1e-12)


def test_pool_skips_a_failing_pair():
    spec = _grid_spec()
    intr, pose = _upward_camera(spec)
    good = _all_points(np.full((40, 60), 100.0), spec)
    # Points far outside camera j's view.
    far = TexturePointSet(good.xy + 1000, good.intensity)
    img = np.zeros((40, 60))
    ctx = CameraContext("j", img, intr, spec, [PairTerm.build(far, spec), PairTerm.build(good, spec)])
    assert ctx(pose).mean_loss == 10_000.0
    with pytest.raises(TooFewValid):
        CameraContext("j", img, intr, spec, [PairTerm.build(far, spec)])(pose)


def test_no_neighbour_is_an_error():
    spec = _grid_spec()
    intr, _ = _upward_camera(spec)
    with pytest.raises(ValueError):
        CameraContext("j", np.zeros((40, 60)), intr, spec, [])


# -- synthetic rig ----------------------------------------------------------------


@pytest.mark.parametrize("camera", ["left", "right", "rear"])
def test_loss_at_ground_truth_is_small(full_rig, full_views, camera):
    ctx = _context(full_rig, full_views, BevSpec(), camera)
    assert ctx(full_rig.poses[camera]).mean_loss <= GT_LOSS_BOUND


def test_rear_pool_bounded_by_individual_losses(small_rig, small_views, small_spec):
    pooled = _context(small_rig, small_views, small_spec, "rear")
    gt = small_rig.poses["rear"]
    singles = [CameraContext("rear", pooled.image, pooled.intrinsics, small_spec, [t])(gt).mean_loss for t in pooled.terms]
    assert pooled(gt).mean_loss <= max(singles) + 1e-9
    assert pooled(gt).mean_loss >= min(singles) - 1e-9


@pytest.mark.parametrize("camera", ["left", "rear"])
def test_ground_truth_beats_yaw_perturbations(small_rig, small_views, small_spec, camera):
    ctx = _context(small_rig, small_views, small_spec, camera)
    gt = small_rig.poses[camera]
    at_gt = ctx(gt).mean_loss
    rng = np.random.default_rng(11)
    for _ in range(20):
        yaw = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 3.0)
        other = rng.uniform(-1, 1, size=5) * [0.3, 0.3, 0.02, 0.02, 0.02]
        delta = Perturbation(other[0], other[1], yaw, *other[2:])
        assert ctx(compose_perturbation(delta, gt)).mean_loss > at_gt


def test_loss_is_deterministic(small_rig, small_views, small_spec):
    a = _context(small_rig, small_views, small_spec, "right")
    b = _context(small_rig, small_views, small_spec, "right")
    cand = compose_perturbation(Perturbation(1.0, -0.5, 0.3, 0.02, 0.0, -0.01), small_rig.poses["right"])
    assert a(cand) == b(cand)
