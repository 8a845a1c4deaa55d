import math
import warnings

import numpy as np
import pytest

from surroundcalib import harness
from surroundcalib.camera import Perturbation, Pose, compose_perturbation
from surroundcalib.errors import NoImprovementWarning
from surroundcalib.search import (
    DEFAULT_SCHEDULE,
    CalibrationOptions,
    CenterPolicy,
    SearchPhase,
    SearchTrace,
    calibrate_camera,
    calibrate_rig,
    phase_stream,
    run_phase,
    sample_perturbation,
    sample_perturbations,
    validate_schedule,
)

FIXED, CURRENT = CenterPolicy.FIXED_INITIAL, CenterPolicy.CURRENT_OPTIMAL
TINY = (SearchPhase(0.6, 0.03, 64, FIXED), SearchPhase(0.3, 0.015, 64), SearchPhase(0.1, 0.005, 64))
ZERO = (SearchPhase(0, 0, 40, FIXED), SearchPhase(0, 0, 40), SearchPhase(0, 0, 40))


def yaw_loss(target=1.5):
    return lambda pose: (pose.euler()[2] - target) ** 2


def bowl(pose):
    """Convex in every placement axis, minimum at the identity."""
    e = np.asarray(pose.euler())
    return float(np.sum(e**2) + 100.0 * np.sum(pose.center**2))


# -- phases and sampling ------------------------------------------------------------


def test_default_schedule_is_canonical():
    assert validate_schedule(DEFAULT_SCHEDULE) == []
    assert len(DEFAULT_SCHEDULE) == 3


def test_schedule_problems_are_reported():
    bad = [SearchPhase(1, 0.1, 10, CURRENT), SearchPhase(2, 0.05, 10), SearchPhase(0, 0, 10)]
    problems = validate_schedule(bad)
    assert any("phase 1 uses current_optimal" in p for p in problems)
    assert any("phase 2 radii do not shrink" in p for p in problems)
    assert any("phase 3 has a zero radius" in p for p in problems)


def test_negative_radius_is_rejected():
    with pytest.raises(ValueError):
        SearchPhase(-1.0, 0.1, 10)
    with pytest.raises(ValueError):
        SearchPhase(1.0, 0.1, -1)


def test_samples_stay_within_phase_ranges():
    phase = SearchPhase(3.0, 0.1, 10)
    draws = sample_perturbations(phase, phase_stream(0, "left", 0), 20_000)
    assert np.all(np.abs(draws[:, :3]) <= 3.0)
    assert np.all(np.abs(draws[:, 3:]) <= 0.1)
    # Uniform on [-r, r]: mean 0, variance r^2 / 3.
    assert np.abs(draws.mean(axis=0) / phase.scales).max() < 0.02
    assert np.allclose(draws.var(axis=0) / phase.scales**2, 1 / 3, rtol=0.03)
    # Components are independent.
    corr = np.corrcoef(draws.T)
    assert np.abs(corr - np.eye(6)).max() < 0.03


def test_zero_radius_draws_zero():
    p = sample_perturbation(SearchPhase(0, 0, 1), phase_stream(3, "rear", 1))
    assert p.is_zero()


def test_streams_are_split_by_camera_and_phase():
    a = sample_perturbations(TINY[0], phase_stream(7, "left", 0), 4)
    assert np.array_equal(a, sample_perturbations(TINY[0], phase_stream(7, "left", 0), 4))
    assert not np.array_equal(a, sample_perturbations(TINY[0], phase_stream(7, "right", 0), 4))
    assert not np.array_equal(a, sample_perturbations(TINY[0], phase_stream(7, "left", 1), 4))
    assert not np.array_equal(a, sample_perturbations(TINY[0], phase_stream(8, "left", 0), 4))


def test_stream_prefix_does_not_depend_on_chunking():
    rng1, rng2 = phase_stream(1, "left", 2), phase_stream(1, "left", 2)
    whole = sample_perturbations(TINY[0], rng1, 10)
    parts = np.concatenate([sample_perturbations(TINY[0], rng2, n) for n in (3, 4, 3)])
    assert np.array_equal(whole, parts)


# -- run_phase ---------------------------------------------------------------------


def test_convex_yaw_objective_is_found():
    loss = yaw_loss()
    start = Pose.identity()
    pose, best, _ = run_phase(
        SearchPhase(3.0, 0.0, 2000, FIXED), start, (start, loss(start)), loss, phase_stream(0, "left", 0)
    )
    assert abs(pose.euler()[2] - 1.5) < 0.1
    assert best == loss(pose)


def test_zero_iterations_return_the_incumbent():
    start = Pose.identity()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pose, best, records = run_phase(SearchPhase(1, 0.1, 0), start, (start, 2.25), yaw_loss(), phase_stream(0, "left", 0))
    assert pose is start and best == 2.25 and records == []


def test_phase_without_improvement_warns():
    start = Pose.identity()
    with pytest.warns(NoImprovementWarning):
        pose, best, records = run_phase(
            SearchPhase(1, 0.1, 50, FIXED), start, (start, 0.0), lambda p: 0.0, phase_stream(0, "left", 0)
        )
    assert pose is start and best == 0.0
    assert not any(r.accepted for r in records)


def test_batch_winner_is_the_first_minimum():
    # Coarse quantisation of the loss produces ties inside a batch.
    loss = lambda p: float(np.floor(abs(p.euler()[2] - 1.5) * 2))
    start = Pose.identity()
    _, _, records = run_phase(
        SearchPhase(3.0, 0.0, 256, FIXED), start, (start, loss(start)), loss, phase_stream(5, "left", 0), batch_size=16
    )
    for b in range(0, 256, 16):
        batch = records[b : b + 16]
        chosen = [i for i, r in enumerate(batch) if r.accepted]
        assert len(chosen) <= 1
        if chosen:
            losses = [r.loss for r in batch]
            assert chosen[0] == losses.index(min(losses))


def test_rejected_candidates_are_recorded_not_scored():
    def loss(pose):
        from surroundcalib.errors import TooFewValid

        if pose.euler()[2] > 0:
            raise TooFewValid(0, 10, 0.5)
        return abs(pose.euler()[2] + 1.0)

    start = Pose.identity()
    _, best, records = run_phase(
        SearchPhase(3.0, 0.0, 200, FIXED), start, (start, 1.0), loss, phase_stream(0, "left", 0)
    )
    assert any(r.rejected for r in records)
    assert not any(r.accepted and r.rejected for r in records)
    assert best < 1.0


# -- calibrate_camera ----------------------------------------------------------------


def _start():
    return compose_perturbation(Perturbation(1.0, -0.8, 1.2, 0.05, -0.04, 0.03), Pose.identity())


def test_history_is_monotone_and_improves():
    pose, trace = calibrate_camera("left", _start(), TINY, bowl, seed=2)
    hist = trace.best_loss_history
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    assert trace.final_loss == bowl(pose) < trace.initial_loss
    assert len(trace.records) == sum(p.iterations for p in TINY)


def test_zero_radius_schedule_is_identity():
    start = _start()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoImprovementWarning)
        pose, trace = calibrate_camera("rear", start, ZERO, bowl, seed=9)
    assert pose.same_as(start)
    assert trace.final_loss == trace.initial_loss


def test_doubling_final_phase_never_hurts():
    for seed in range(5):
        base = list(TINY)
        longer = base[:2] + [SearchPhase(base[2].rot_radius, base[2].trans_radius, 2 * base[2].iterations)]
        _, t1 = calibrate_camera("right", _start(), base, bowl, seed=seed, batch_size=8)
        _, t2 = calibrate_camera("right", _start(), longer, bowl, seed=seed, batch_size=8)
        assert t2.final_loss <= t1.final_loss


@pytest.mark.parametrize("batch_size", [1, 8, 32])
def test_workers_do_not_change_results(batch_size):
    p1, t1 = calibrate_camera("left", _start(), TINY, bowl, seed=4, batch_size=batch_size, workers=1)
    p2, t2 = calibrate_camera("left", _start(), TINY, bowl, seed=4, batch_size=batch_size, workers=3)
    assert p1.same_as(p2)
    assert t1.to_jsonl() == t2.to_jsonl()


def test_trace_jsonl_round_trip():
    _, trace = calibrate_camera("left", _start(), TINY, bowl, seed=1, batch_size=8)
    back = SearchTrace.from_jsonl(trace.to_jsonl(), trace.initial_loss)
    assert back.camera == "left"
    assert back.records == trace.records
    assert back.best_loss_history == trace.best_loss_history


def test_unscorable_start_is_an_error():
    from surroundcalib.errors import TooFewValid

    def loss(pose):
        raise TooFewValid(0, 1, 0.5)

    with pytest.raises(TooFewValid):
        calibrate_camera("left", Pose.identity(), TINY, loss)


# -- calibrate_rig -----------------------------------------------------------------


def test_rig_from_ground_truth(small_rig, small_views, small_spec):
    setups = small_rig.setups(small_views)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoImprovementWarning)
        result = calibrate_rig(setups, small_spec, TINY, seed=0, options=CalibrationOptions(batch_size=8))
    assert result.status == "success"
    assert result.poses["front"] is setups["front"].pose
    for name in ("left", "right", "rear"):
        trace = result.traces[name]
        assert trace.final_loss <= trace.initial_loss
        err = harness.pose_error(result.poses[name], small_rig.poses[name])
        assert max(abs(err[a]) for a in ("roll", "pitch", "yaw")) <= TINY[0].rot_radius
        assert max(abs(err[a]) for a in ("tx", "ty", "tz")) <= TINY[0].trans_radius + 1e-9


def test_rig_zero_schedule_is_identity(small_rig, small_views, small_spec):
    initial = harness.perturb_rig(small_rig, harness.REFERENCE_PERTURBATIONS)
    setups = initial.setups(small_views)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoImprovementWarning)
        result = calibrate_rig(setups, small_spec, ZERO, seed=3, options=CalibrationOptions(batch_size=8))
    for name, setup in setups.items():
        assert result.poses[name].same_as(setup.pose)


def test_failed_camera_gives_partial_result(small_rig, small_views, small_spec):
    up = Pose.from_camera_placement(0, 0, 0, 2, 0, 1.0)
    rig = small_rig.with_poses({**small_rig.poses, "right": up})
    setups = rig.setups(small_views)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoImprovementWarning)
        result = calibrate_rig(setups, small_spec, TINY, seed=0, options=CalibrationOptions(batch_size=8))
    assert result.status == "partial"
    assert set(result.failures) == {"right"}
    assert result.poses["right"] is up
    assert ("left", "rear") in result.texture and ("right", "rear") not in result.texture


def test_blank_front_fails_everything(small_rig, small_views, small_spec):
    views = {**small_views, "front": np.full_like(small_views["front"], 90.0)}
    result = calibrate_rig(small_rig.setups(views), small_spec, TINY, seed=0)
    assert result.status == "failure"
    assert set(result.failures) == {"left", "right", "rear"}
    assert math.isfinite(result.duration)
