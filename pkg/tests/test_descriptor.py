import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tensemap.descriptor import (PoseSample, behavior_from_stream, read_pose_csv,
                                 repeatability_stats, to_local_behavior, wrap_angle)
from tensemap.repertoire import Behavior, ParameterSet

angles = st.floats(-1e4, 1e4, allow_nan=False)


@pytest.mark.parametrize("deg, expected", [(0, 0), (180, -180), (350, -10), (-180, -180),
                                           (540, -180), (-190, 170), (179.5, 179.5)])
def test_wrap_angle_examples(deg, expected):
    assert wrap_angle(deg) == expected


@given(angles)
def test_wrap_angle_range_and_idempotent(a):
    w = wrap_angle(a)
    assert -180 <= w < 180
    assert wrap_angle(w) == w
    assert math.isclose(math.cos(math.radians(w)), math.cos(math.radians(a)), abs_tol=1e-9)


def test_wrap_angle_arrays_and_tiny_negatives():
    out = wrap_angle(np.array([-1e-17, 360.0, -540.0]))
    assert np.all(out >= -180) and np.all(out < 180)
    with pytest.raises(ValueError):
        wrap_angle(float("nan"))


def test_pose_sample_validation():
    with pytest.raises(ValueError):
        PoseSample(-1.0, 0, 0, 0)
    assert PoseSample(0, 0, 0, 190).yaw == -170
    assert not PoseSample(0, float("nan"), 0, 0).valid


@pytest.mark.parametrize("initial, final, expected", [
    ((0, 0, 0, 0), (1, 50, 25, 0), (50, 25, 0)),
    ((0, 0, 0, 0), (1, 0, 0, 90), (0, 0, 90)),
    ((0, 0, 0, 90), (1, 0, 100, 90), (100, 0, 0)),
    ((0, 10, 10, 170), (1, 10, 10, -170), (0, 0, 20)),
])
def test_local_behavior_examples(initial, final, expected):
    b = to_local_behavior(PoseSample(*initial), PoseSample(*final))
    assert b.as_tuple() == pytest.approx(expected, abs=1e-12)


def test_worked_examples_are_exact():
    assert to_local_behavior(PoseSample(0, 0, 0, 0), PoseSample(10, 50, 25, 0)) == Behavior(50, 25, 0)
    assert to_local_behavior(PoseSample(0, 0, 0, 0), PoseSample(10, 0, 0, 90)) == Behavior(0, 0, 90)


def test_local_behavior_requires_later_final():
    with pytest.raises(ValueError):
        to_local_behavior(PoseSample(1, 0, 0, 0), PoseSample(1, 1, 0, 0))


def test_identical_poses_give_zero():
    p = PoseSample(0, 12.5, -3.0, 33.0)
    q = PoseSample(5, 12.5, -3.0, 33.0)
    assert to_local_behavior(p, q) == Behavior(0.0, 0.0, 0.0)


def _transform(p: PoseSample, theta: float, tx: float, ty: float) -> PoseSample:
    c, s = math.cos(math.radians(theta)), math.sin(math.radians(theta))
    return PoseSample(p.t, c * p.x - s * p.y + tx, s * p.x + c * p.y + ty, p.yaw + theta)


def frame_invariance_violations(n: int, seed: int, rtol: float = 1e-9) -> int:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n):
        p0 = PoseSample(0.0, *rng.uniform(-2000, 2000, 2), rng.uniform(-180, 180))
        p1 = PoseSample(10.0, *rng.uniform(-2000, 2000, 2), rng.uniform(-180, 180))
        theta, tx, ty = rng.uniform(-180, 180), *rng.uniform(-1e4, 1e4, 2)
        b = to_local_behavior(p0, p1)
        bt = to_local_behavior(_transform(p0, theta, tx, ty), _transform(p1, theta, tx, ty))
        scale = max(1.0, abs(b.dx), abs(b.dy))
        dpsi = abs(wrap_angle(bt.dpsi - b.dpsi))
        if (abs(bt.dx - b.dx) > rtol * scale or abs(bt.dy - b.dy) > rtol * scale
                or dpsi > rtol * 180):
            bad += 1
    return bad


def test_frame_invariance_property():
    assert frame_invariance_violations(1000, seed=1) == 0


def test_behavior_from_stream_uses_first_and_last_valid(tmp_path):
    path = tmp_path / "poses.csv"
    path.write_text("t_s,x_mm,y_mm,z_mm,roll_deg,pitch_deg,yaw_deg\n"
                    "0.0,,,0,0,0,\n"
                    "0.1,10,20,50,1,2,90\n"
                    "5.0,11,21,50,1,2,91\n"
                    "10.0,10,120,50,1,2,100\n"
                    "10.1,nan,0,0,0,0,0\n")
    samples = read_pose_csv(path)
    assert len(samples) == 5
    b = behavior_from_stream(samples)
    assert b.as_tuple() == pytest.approx((100, 0, 10))


def test_read_pose_csv_rejects_bad_input(tmp_path):
    bad_header = tmp_path / "a.csv"
    bad_header.write_text("t,x,y\n0,0,0\n")
    with pytest.raises(ValueError):
        read_pose_csv(bad_header)
    backwards = tmp_path / "b.csv"
    backwards.write_text("t_s,x_mm,y_mm,z_mm,roll_deg,pitch_deg,yaw_deg\n1,0,0,0,0,0,0\n0.5,0,0,0,0,0,0\n")
    with pytest.raises(ValueError):
        read_pose_csv(backwards)
    with pytest.raises(ValueError):
        behavior_from_stream([PoseSample(0, 0, 0, 0)])


# -- repeatability ---------------------------------------------------------

P1, P2 = ParameterSet(100, 100, 100), ParameterSet(200, 50, 10)


def test_repeatability_identical_replicates():
    trials = [(P1, 5.0, Behavior(10, 20, 30))] * 4
    rep = repeatability_stats(trials)
    assert rep.groups[0].std == (0.0, 0.0, 0.0)
    assert rep.suggested_widths == (0.0, 0.0, 0.0)


def test_repeatability_hand_computed_yaw_std():
    rep = repeatability_stats([(P1, 10.0, Behavior(0, 0, 10)), (P1, 10.0, Behavior(0, 0, -10))])
    g = rep.groups[0]
    assert g.std[0] == 0 and g.std[1] == 0
    assert g.std[2] == pytest.approx(14.142135623730951, rel=1e-12)


def test_repeatability_yaw_across_the_seam():
    trials = [(P1, 10.0, Behavior(0, 0, 175)), (P1, 10.0, Behavior(0, 0, -175))]
    g = repeatability_stats(trials).groups[0]
    assert g.std[2] == pytest.approx(math.sqrt(50), rel=1e-9)
    assert abs(g.mean[2]) == pytest.approx(180, abs=1e-9) or g.mean[2] == -180


def test_repeatability_recovers_generating_std():
    rng = np.random.default_rng(0)
    sigma = np.array([4.0, 7.0, 3.0])
    errors = []
    for _ in range(200):
        xs = rng.normal([100, -50, 20], sigma, size=(10, 3))
        rep = repeatability_stats([(P1, 10.0, Behavior(*x)) for x in xs])
        errors.append(np.array(rep.groups[0].std) / sigma - 1)
    # the n=10 sample std has about 24% relative spread; its median sits within 15%
    assert np.all(np.abs(np.median(errors, axis=0)) < 0.15)


def test_repeatability_chooses_duration_and_widths():
    rng = np.random.default_rng(3)
    trials = []
    # 5 s: small motion, moderate noise; 10 s: double motion, same noise; 15 s: noisy
    for p in (P1, P2):
        for d, mean, sd in ((5.0, 60, 3), (10.0, 120, 3), (15.0, 150, 30)):
            for _ in range(10):
                trials.append((p, d, Behavior(*rng.normal([mean, 0, 10], [sd, sd, sd / 3]))))
    rep = repeatability_stats(trials)
    assert rep.suggested_duration_s == 10.0
    stds = np.array([g.std for g in rep.groups if g.duration_s == 10.0])
    assert rep.suggested_widths == pytest.approx(tuple(2 * stds.max(axis=0)))
    assert set(rep.duration_scores) == {5.0, 10.0, 15.0}
    assert rep.to_dict()["suggested_duration_s"] == 10.0


def test_repeatability_ties_go_to_shorter_duration():
    trials = [(P1, d, Behavior(100, 0, x)) for d in (15.0, 5.0) for x in (0.0, 2.0)]
    assert repeatability_stats(trials).suggested_duration_s == 5.0


def test_repeatability_needs_replicates():
    with pytest.raises(ValueError):
        repeatability_stats([(P1, 5.0, Behavior(0, 0, 0))])
    with pytest.raises(ValueError):
        repeatability_stats([])
