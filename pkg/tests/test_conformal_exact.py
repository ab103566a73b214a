"""Exact calibration: order-statistic oracle, membership rules, search behavior.

For a constant feature map the whole construction must collapse to classic
split conformal, whose radius is an order statistic we can compute without
any of the machinery under test.  That reduction is the primary oracle here.
"""

import math

import numpy as np
import pytest

from ivconformal.conformal_exact import (
    ExactCalibrator,
    PredictionInterval,
    compute_scores,
    conditioning_input,
)
from ivconformal.data import DataSet
from ivconformal.dgp import generate_dataset
from ivconformal.npiv import SieveSpec, fit_sieve_2sls
from ivconformal.rng import RngStream
from ivconformal.shifts import build_feature_map


def split_conformal_radius(scores, alpha):
    """Independent oracle: k-th order statistic, k = ceil((m+1)(1-alpha))."""
    m = len(scores)
    k = math.ceil((m + 1) * (1.0 - alpha))
    if k > m:
        return math.inf
    return float(np.sort(scores)[k - 1])


def constant_calibrator(scores, alpha):
    m = len(scores)
    return ExactCalibrator(
        feature_map=None,
        indexing="z",
        features=np.ones((m, 1)),
        scores=np.asarray(scores, dtype=float),
        alpha=alpha,
    )


def test_constant_map_reduces_to_split_conformal():
    rng = np.random.default_rng(0)
    for _ in range(60):
        m = int(rng.integers(5, 80))
        alpha = float(rng.choice([0.05, 0.1, 0.2, 0.32]))
        scores = np.abs(rng.standard_normal(m)) * float(rng.uniform(0.5, 4.0))
        want = split_conformal_radius(scores, alpha)
        got = constant_calibrator(scores, alpha).calibrate_radius(np.array([1.0]))
        if math.isinf(want):
            assert math.isinf(got)
        else:
            assert abs(got - want) <= 1e-6 * (1.0 + want)


def test_small_sample_gives_unbounded_radius():
    # m = 5, alpha = 0.1: ceil(6 * 0.9) = 6 > 5, no finite valid radius
    cal = constant_calibrator([1.0, 2.0, 3.0, 4.0, 5.0], 0.1)
    assert math.isinf(cal.calibrate_radius(np.array([1.0])))


def test_membership_brackets_the_radius():
    rng = np.random.default_rng(1)
    scores = np.abs(rng.standard_normal(40))
    cal = constant_calibrator(scores, 0.2)
    r = cal.calibrate_radius(np.array([1.0]))
    f = np.array([1.0])
    assert cal.membership(f, r - 1e-7)
    assert not cal.membership(f, r + 1e-7)
    assert cal.membership(f, 0.0)


def test_membership_detail_fields_are_consistent():
    rng = np.random.default_rng(2)
    scores = np.abs(rng.standard_normal(30))
    feats = np.column_stack([np.ones(30), rng.uniform(-1, 1, 30)])
    cal = ExactCalibrator(
        feature_map=None, indexing="z", features=feats, scores=scores, alpha=0.1
    )
    for s in [0.0, 0.3, 1.0, 2.5, 10.0]:
        det = cal.membership_detail(np.array([1.0, 0.2]), s)
        assert det.accepted == (det.dual_ok and det.primal_ok)
        assert cal.membership(np.array([1.0, 0.2]), s) == det.accepted


def test_translation_equivariance():
    rng = np.random.default_rng(3)
    for _ in range(15):
        m = int(rng.integers(12, 40))
        scores = np.abs(rng.standard_normal(m))
        feats = np.column_stack([np.ones(m), rng.uniform(-1, 1, m)])
        cal0 = ExactCalibrator(None, "z", feats, scores, 0.1)
        c = float(rng.uniform(0.5, 3.0))
        cal1 = ExactCalibrator(None, "z", feats, scores + c, 0.1)
        f = np.array([1.0, float(rng.uniform(-1, 1))])
        r0 = cal0.calibrate_radius(f)
        r1 = cal1.calibrate_radius(f)
        if math.isinf(r0):
            assert math.isinf(r1)
        else:
            assert abs(r1 - (r0 + c)) <= 1e-6


def test_constant_map_radius_monotone_in_scores():
    """With the constant map the radius is an order statistic, so raising any
    single calibration score can never shrink it."""
    rng = np.random.default_rng(4)
    for _ in range(25):
        m = int(rng.integers(10, 40))
        scores = np.abs(rng.standard_normal(m))
        alpha = float(rng.choice([0.1, 0.2, 0.3]))
        base = constant_calibrator(scores, alpha).calibrate_radius(np.array([1.0]))
        bumped = scores.copy()
        bumped[int(rng.integers(m))] += float(rng.uniform(0.1, 2.0))
        r = constant_calibrator(bumped, alpha).calibrate_radius(np.array([1.0]))
        if math.isinf(base):
            assert math.isinf(r)
        else:
            assert r >= base - 1e-9


def test_leverage_bump_can_shrink_radius_elsewhere():
    """With non-constant classes the radius is NOT coordinatewise monotone in
    the calibration scores.  Raising the score at a high-leverage feature tilts
    the fitted quantile plane upward there and downward at features on the
    opposite side of the mass, which can shrink the radius at such a point.
    This pins a concrete instance of that effect (decisions verified against a
    standalone LP solve of the augmented pinball program)."""
    z = np.array([-1.04286, 0.613123, -0.20033, -0.436868,
                  0.519842, -0.476579, 1.38898, 0.351455])
    scores = np.array([0.711499, 2.916397, 1.96163, 1.630246,
                       0.075906, 0.424688, 2.464877, 1.923974])
    feats = np.column_stack([np.ones_like(z), z])
    f = np.array([1.0, -0.72127345])
    base = ExactCalibrator(None, "z", feats, scores, 0.3).calibrate_radius(f)
    bumped = scores.copy()
    bumped[6] += 1.0  # the z = 1.389 leverage point
    shrunk = ExactCalibrator(None, "z", feats, bumped, 0.3).calibrate_radius(f)
    assert abs(base - 1.796675) < 1e-3
    assert abs(shrunk - 1.468895) < 1e-3
    assert shrunk < base - 0.3


def test_zero_scores_give_zero_radius():
    cal = constant_calibrator(np.zeros(30), 0.1)
    r = cal.calibrate_radius(np.array([1.0]))
    assert 0.0 <= r <= 1e-8


def test_linear_map_radius_tracks_feature_direction():
    """Scores that grow with the feature should produce a growing radius."""
    rng = np.random.default_rng(5)
    m = 120
    t = rng.uniform(-1, 1, m)
    scores = 1.0 + 0.8 * t + 0.05 * np.abs(rng.standard_normal(m))
    feats = np.column_stack([np.ones(m), t])
    cal = ExactCalibrator(None, "z", feats, np.abs(scores), 0.1)
    r_low = cal.calibrate_radius(np.array([1.0, -0.9]))
    r_high = cal.calibrate_radius(np.array([1.0, 0.9]))
    assert r_high > r_low + 0.5


def test_interval_contains_is_closed():
    iv = PredictionInterval(center=1.0, radius=0.5)
    assert iv.lower == 0.5 and iv.upper == 1.5
    assert iv.length == 1.0
    assert iv.contains(1.5) and iv.contains(0.5)
    assert not iv.contains(1.5 + 1e-9)


def test_compute_scores_definition():
    class Flat:
        def predict(self, x):
            x = np.atleast_2d(x)
            return np.full(x.shape[0], 2.0)

    data = DataSet(y=np.array([1.0, 2.0, 4.5]), x=np.zeros((3, 1)), z=np.zeros((3, 1)))
    s = compute_scores(Flat(), data)
    assert np.allclose(s, [1.0, 0.0, 2.5])


def test_conditioning_input_layouts():
    x = np.array([[1.0, 2.0]])
    z = np.array([[3.0]])
    assert np.allclose(conditioning_input("z", x, z), [[3.0]])
    assert np.allclose(conditioning_input("xz", x, z), [[1.0, 2.0, 3.0]])
    with pytest.raises(ValueError):
        conditioning_input("x", x, z)


def test_pipeline_roundtrip_coverage():
    """End-to-end on a small draw: interval coverage near the nominal level."""
    data = generate_dataset(1, 900, RngStream(11, 0))
    train = data.take(np.arange(500))
    calset = data.take(np.arange(500, 700))
    test = data.take(np.arange(700, 900))
    model = fit_sieve_2sls(train, SieveSpec())
    scores = compute_scores(model, calset)
    fmap = build_feature_map("linear", calset.z)
    cal = ExactCalibrator.from_data(fmap, "z", calset, scores, alpha=0.1)
    hit = 0
    for i in range(test.n):
        iv = cal.predict_interval(model, test.x[i], test.z[i])
        hit += iv.contains(test.y[i])
    cover = hit / test.n
    assert 0.85 <= cover <= 0.99


def test_validation_errors():
    with pytest.raises(ValueError):
        constant_calibrator([1.0, -2.0, 3.0], 0.1)  # negative score
    with pytest.raises(ValueError):
        constant_calibrator([1.0, 2.0, 3.0], 1.2)  # alpha out of range
    feats = np.column_stack([np.zeros(5), np.ones(5)])  # first column not 1
    with pytest.raises(ValueError):
        ExactCalibrator(None, "z", feats, np.ones(5), 0.1)
