from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nafvdetect.baseline import Baseline
from nafvdetect.features import (
    A_CAP,
    EQUAL_WEIGHTS,
    FeatureVector,
    WeightConfigError,
    WeightVector,
    feature_a,
    feature_f,
    feature_n,
    feature_v,
    features,
    nafv,
    nafv_weighted,
    pca_weights,
    score_window,
)
from nafvdetect.ipd import IpBitmap


@dataclass
class Win:
    access_counts: dict
    index: int = 0
    start: float = 0.0


def make_baseline(old=(), max_old=9, mean_new=10.0, unit_time=0.8):
    bm = IpBitmap()
    for s in old:
        bm.mark(s)
    return Baseline(bm.freeze(), max_old, mean_new, unit_time, 5)


def window(n_old, n_new, old_packets=1, new_packets=1):
    counts = {i: old_packets for i in range(n_old)}
    counts.update({1000 + i: new_packets for i in range(n_new)})
    return Win(counts)


OLD = range(200)


def test_n_at_historical_max_is_zero():
    assert feature_n(window(10, 0), make_baseline(OLD, max_old=9)) == 0.0


def test_n_without_old_users_is_minus_one():
    assert feature_n(window(0, 5), make_baseline(OLD, max_old=9)) == -1.0


def test_n_half_of_max():
    assert feature_n(window(5, 0), make_baseline(OLD, max_old=9)) == pytest.approx(-0.5)


def test_a_examples():
    assert feature_a(window(0, 10), make_baseline(OLD, mean_new=10)) == 0.0
    assert feature_a(window(0, 110), make_baseline(OLD, mean_new=10)) == pytest.approx(10.0)
    assert feature_a(window(3, 0), make_baseline(OLD, mean_new=0)) == 0.0
    assert feature_a(window(3, 2), make_baseline(OLD, mean_new=0)) == A_CAP
    assert feature_a(window(3, 2), make_baseline(OLD, mean_new=0), cap=50.0) == 50.0


def test_f_examples():
    assert feature_f(window(0, 2), make_baseline(OLD, max_old=99)) == pytest.approx(0.02)
    assert feature_f(window(4, 0), make_baseline(OLD, max_old=9)) == pytest.approx(-0.1)
    assert feature_f(window(0, 1000), make_baseline(OLD, max_old=9)) == pytest.approx(100.0)


def test_v_examples():
    assert feature_v(window(0, 2, new_packets=4), make_baseline(OLD, unit_time=0.8)) == pytest.approx(5.0)
    assert feature_v(window(3, 0), make_baseline(OLD)) == 0.0
    assert feature_v(window(0, 1), make_baseline(OLD, unit_time=1.0)) == 1.0


def test_v_ignores_old_user_packets():
    assert feature_v(window(3, 1, old_packets=50, new_packets=2), make_baseline(OLD, unit_time=1.0)) == 2.0


@pytest.mark.parametrize(
    "fv, expected",
    [
        (FeatureVector(0, 3.0, 7.0, 11.0), 0.0),
        (FeatureVector(-1, 10, 100, 50), 50000.0),
        (FeatureVector(0.5, 3, 2, 4), -12.0),
    ],
)
def test_nafv_examples(fv, expected):
    assert nafv(fv) == expected


def test_weighted_examples():
    assert nafv_weighted(FeatureVector(-1, 10, 100, 50), EQUAL_WEIGHTS) == pytest.approx(195.3125)
    assert nafv_weighted(FeatureVector(-1, 0, 100, 50), EQUAL_WEIGHTS) == 0.0


def test_degenerate_weights_policy():
    fv = FeatureVector(-1, 10, 100, 50)
    with pytest.raises(WeightConfigError):
        nafv_weighted(fv, WeightVector(1, 0, 0, 0))
    with pytest.warns(UserWarning):
        assert nafv_weighted(fv, WeightVector(1, 0, 0, 0), strict=False) == 0.0


@pytest.mark.parametrize("bad", [(0.5, 0.5, 0.5, -0.5), (0.3, 0.3, 0.3, 0.3), (0.25, 0.25, 0.25, 0.2500001)])
def test_weight_vector_validation(bad):
    with pytest.raises(WeightConfigError):
        WeightVector(*bad)


def test_weight_vector_parse():
    assert WeightVector.parse("0.4,0.3,0.2,0.1") == WeightVector(0.4, 0.3, 0.2, 0.1)
    with pytest.raises(WeightConfigError):
        WeightVector.parse("0.5,0.5")


finite = st.floats(-1e3, 1e3, allow_nan=False)
# magnitudes kept away from the subnormal range so the product cannot underflow to 0
signed = st.one_of(st.just(0.0), st.floats(1e-3, 1e3), st.floats(-1e3, -1e-3))


@given(signed, signed, signed, st.one_of(st.just(0.0), st.floats(1e-3, 1e3)))
def test_sign_algebra(n, a, f, v):
    fv = FeatureVector(n, a, f, v)
    sign = lambda x: (x > 0) - (x < 0)
    assert sign(nafv(fv)) == -sign(n) * sign(a) * sign(f) * sign(v)


weight_vectors = st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4).map(
    lambda ws: WeightVector(*(w / sum(ws) for w in ws[:3]), 1 - sum(w / sum(ws) for w in ws[:3]))
)


@given(finite, finite, finite, st.floats(0, 1e3), weight_vectors)
def test_weighted_is_positive_rescaling(n, a, f, v, w):
    fv = FeatureVector(n, a, f, v)
    scale = w.w1 * w.w2 * w.w3 * w.w4
    assert nafv_weighted(fv, w) == pytest.approx(scale * nafv(fv), rel=1e-9, abs=1e-300)
    assert w.scale == pytest.approx(scale)


@given(
    st.dictionaries(st.integers(0, 300), st.integers(1, 20), max_size=40),
    st.randoms(use_true_random=False),
)
def test_features_invariant_under_record_order(counts, rnd):
    base = make_baseline(range(0, 300, 2), max_old=20, mean_new=5.0)
    items = list(counts.items())
    rnd.shuffle(items)
    assert features(Win(dict(items)), base) == features(Win(counts), base)


@given(st.dictionaries(st.integers(0, 300), st.integers(1, 20), max_size=40), st.floats(0, 30))
def test_feature_ranges(counts, mean_new):
    fv = features(Win(counts), make_baseline(range(0, 300, 3), max_old=12, mean_new=mean_new))
    assert fv.n >= -1 and fv.v >= 0
    if mean_new > 0:
        assert fv.a >= -1


def test_score_window_carries_both_scores():
    base = make_baseline(OLD, max_old=9, mean_new=10.0, unit_time=0.8)
    point = score_window(Win(window(0, 110, new_packets=8).access_counts, index=7, start=5.6), base)
    assert (point.k, point.start) == (7, 5.6)
    assert point.value == nafv(point.features) > 0
    assert point.weighted == pytest.approx(nafv(point.features) * 0.25**4)


# -- pca weights ------------------------------------------------------------------


def test_pca_central_variable_gets_largest_weight(rng):
    n = rng.normal(0, 3, 2000)
    rows = np.column_stack([n, n + rng.normal(0, 3, 2000), n + rng.normal(0, 3, 2000), n + rng.normal(0, 3, 2000)])
    w = pca_weights(rows).as_tuple()
    assert w[0] == max(w) and all(w[0] > x for x in w[1:])


def test_pca_uncorrelated_equal_variance_gives_equal_weights():
    h = np.array([[1, 1], [1, -1]])
    h8 = np.kron(np.kron(h, h), h)[:, 1:5].astype(float)
    with pytest.warns(UserWarning):
        w = pca_weights(h8)
    assert w.as_tuple() == pytest.approx((0.25, 0.25, 0.25, 0.25))


def test_pca_weights_normalised(rng):
    # four centred rows span at most three dimensions, so this is the fallback path
    with pytest.warns(UserWarning, match="rank"):
        w = pca_weights(rng.normal(size=(4, 4)))
    assert sum(w.as_tuple()) == pytest.approx(1.0, abs=1e-9)
    for _ in range(20):
        w = pca_weights(rng.normal(size=(50, 4)) @ rng.normal(size=(4, 4)))
        assert sum(w.as_tuple()) == pytest.approx(1.0, abs=1e-9)
        assert min(w.as_tuple()) >= 0


def test_pca_constant_column_falls_back(rng):
    rows = rng.normal(size=(20, 4))
    rows[:, 2] = 3.0
    with pytest.warns(UserWarning, match="constant"):
        assert pca_weights(rows) == EQUAL_WEIGHTS


def test_pca_rank_deficient_falls_back(rng):
    rows = rng.normal(size=(30, 4))
    rows[:, 3] = rows[:, 0] + rows[:, 1]
    with pytest.warns(UserWarning, match="rank"):
        assert pca_weights(rows) == EQUAL_WEIGHTS


def test_pca_needs_four_rows():
    with pytest.raises(ValueError):
        pca_weights(np.ones((3, 4)))
