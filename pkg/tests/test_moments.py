import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lrssb.model import NoiseSpec, RegressorSet, SampleBatch, generate, orthogonal_regressors
from lrssb.moments import (EmptyEvent, LocalizationEvent, batch_conditional_stats, conditional_stats,
                           event_bounds, event_probability_analytic, save_stats_csv)
from lrssb.oracles import truncated_gaussian_mean


def unit_regressor(n=2):
    return RegressorSet(np.eye(n)[:1], 1.0, 2.0)


def test_event_bounds_examples():
    assert event_bounds(1.0, 1, math.exp(-4)) == pytest.approx((2.0, 4.0))
    assert event_bounds(2.0, 1, math.exp(-1)) == pytest.approx((2.0, 4.0))
    lo, hi = event_bounds(1.5, 4, 0.01)
    assert lo == pytest.approx(3.672, abs=1e-3) and hi == pytest.approx(7.344, abs=1e-3)


def test_event_bounds_domain():
    with pytest.raises(ValueError):
        event_bounds(0.0, 2, 0.1)
    with pytest.raises(ValueError):
        event_bounds(1.0, 2, 1.0)


@given(st.floats(0.05, 5), st.integers(1, 50), st.floats(1e-6, 0.9))
def test_event_upper_is_twice_lower(t, k, delta):
    lo, hi = event_bounds(t, k, delta)
    assert lo > 0 and hi == 2 * lo


def test_event_probability_examples():
    assert event_probability_analytic(0.0, math.inf) == 0.5
    assert event_probability_analytic(2.0, 4.0) == pytest.approx(0.0227185, abs=5e-8)
    assert event_probability_analytic(-4.0, -2.0) == event_probability_analytic(2.0, 4.0)
    assert event_probability_analytic(-1.0, 1.0) == pytest.approx(0.6826894921370859, rel=1e-14)


def test_event_probability_deep_tail_relative_accuracy():
    # upper tail at 8 is about 6.22e-16; a 1 - cdf evaluation would lose it entirely
    assert event_probability_analytic(8.0, math.inf) == pytest.approx(6.220960574271785e-16, rel=1e-12)


def test_event_validates_direction():
    with pytest.raises(ValueError):
        LocalizationEvent(np.array([1.0, 1.0]), 1.0, 2.0)
    ev = LocalizationEvent.for_vector([3.0, 4.0], 1.0, 1, math.exp(-4))
    np.testing.assert_allclose(ev.direction, [0.6, 0.8])


def test_exact_model_gives_zero_moments():
    ws = unit_regressor()
    b = generate(ws, NoiseSpec.zero(1), 50000, 0)
    ev = LocalizationEvent.for_vector([1.0, 0.0], 1.0, 1, math.exp(-4))
    cs = conditional_stats(b, [1.0, 0.0], ev)
    assert cs.m1 == 0.0 and cs.m2_plus == 0.0 and cs.count > 0


def test_gaussian_noise_limits():
    ws = unit_regressor()
    b = generate(ws, NoiseSpec.gaussian(1.0, 1), 6_000_000, 1)
    ev = LocalizationEvent.for_vector([1.0, 0.0], 1.0, 1, math.exp(-1 / 4))  # event (0.5, 1)
    cs = conditional_stats(b, [1.0, 0.0], ev)
    assert cs.count >= 10**5
    assert abs(cs.m1) < 0.01 and abs(cs.m2_plus - 0.5) < 0.01
    assert cs.m2_full == pytest.approx(1.0, abs=0.02)


def test_shrunken_candidate_matches_truncated_mean():
    ws = unit_regressor()
    b = generate(ws, NoiseSpec.zero(1), 2_000_000, 2)
    ev = LocalizationEvent.for_vector([1.0, 0.0], 1.0, 1, math.exp(-4))
    cs = conditional_stats(b, [0.5, 0.0], ev)
    expected = 0.5 * truncated_gaussian_mean(2.0, 4.0)
    assert expected == pytest.approx(1.1854, abs=1e-4)
    assert abs(cs.m1 - expected) < 4 * cs.m1_se


def test_empty_event_is_signalled():
    b = SampleBatch(np.zeros((10, 2)), np.zeros(10))
    ev = LocalizationEvent.for_vector([1.0, 0.0], 1.0, 1, math.exp(-4))
    with pytest.raises(EmptyEvent) as info:
        conditional_stats(b, [1.0, 0.0], ev)
    assert info.value.batch_size == 10
    assert info.value.probability == pytest.approx(event_probability_analytic(2.0, 4.0))


def test_direction_mismatch_rejected():
    b = SampleBatch(np.zeros((10, 2)), np.zeros(10))
    ev = LocalizationEvent.for_vector([1.0, 0.0], 1.0, 1, math.exp(-4))
    with pytest.raises(ValueError):
        conditional_stats(b, [0.0, 1.0], ev)


def test_closed_interval_membership():
    b = SampleBatch(np.array([[2.0, 0.0], [4.0, 0.0], [4.0000001, 0.0]]), np.zeros(3))
    ev = LocalizationEvent.for_vector([1.0, 0.0], 1.0, 1, math.exp(-4))
    assert ev.contains(b.xs).tolist() == [True, True, False]


def test_batch_stats_exact_model_zero():
    ws = unit_regressor()
    b = generate(ws, NoiseSpec.zero(1), 200000, 3)
    st_ = batch_conditional_stats(b, np.array([[1.0, 0.0]]), 0.5, 0.5, 1, count_floor=1)
    assert st_.m1_t[0] == 0 and st_.m1_4t[0] == 0 and st_.m2_t[0] == 0


def test_batch_stats_empty_batch_flags_all():
    b = SampleBatch(np.zeros((0, 2)), np.zeros(0))
    st_ = batch_conditional_stats(b, np.array([[1.0, 0.0], [0.0, 1.5]]), 1.0, 0.1, 2)
    assert st_.undersampled.tolist() == [True, True]
    assert np.isnan(st_.m1_t).all()


def test_batch_stats_agree_with_single_candidate_path():
    ws = orthogonal_regressors(3, 2, 1.5, 1.0, 2.0)
    b = generate(ws, NoiseSpec.gaussian(0.3, 2), 100000, 5)
    cands = np.array([[1.5, 0.0, 0.0], [0.3, 1.2, 0.1], [1.0, 1.0, 0.0]])
    st_ = batch_conditional_stats(b, cands, 0.5, 0.1, 2, chunk_size=2)
    for i, v in enumerate(cands):
        cs = conditional_stats(b, v, LocalizationEvent.for_vector(v, 0.5, 2, 0.1))
        assert st_.m1_t[i] == pytest.approx(cs.m1, rel=1e-10, abs=1e-12)
        assert st_.m2_t[i] == pytest.approx(cs.m2_plus, rel=1e-10, abs=1e-12)
        assert st_.count_t[i] == cs.count
        assert st_.m1_t_se[i] == pytest.approx(cs.m1_se, rel=1e-6)
        cs4 = conditional_stats(b, v, LocalizationEvent.for_vector(v, 2.0, 2, 0.1))
        assert st_.m1_4t[i] == pytest.approx(cs4.m1, rel=1e-10, abs=1e-12)


def test_batch_stats_thread_invariant():
    ws = orthogonal_regressors(3, 2, 1.5, 1.0, 2.0)
    b = generate(ws, NoiseSpec.gaussian(0.3, 2), 50000, 6)
    cands = np.random.default_rng(0).normal(size=(40, 3))
    a = batch_conditional_stats(b, cands, 0.5, 0.1, 2, n_threads=1)
    c = batch_conditional_stats(b, cands, 0.5, 0.1, 2, n_threads=8)
    for name in ("m1_t", "m1_4t", "m2_t", "count_t", "count_4t"):
        assert np.array_equal(getattr(a, name), getattr(c, name), equal_nan=True)


def test_m2_nonnegative_and_counts_bounded():
    ws = orthogonal_regressors(3, 2, 1.5, 1.0, 2.0)
    b = generate(ws, NoiseSpec.gaussian(0.3, 2), 20000, 7)
    cands = np.random.default_rng(1).normal(size=(30, 3))
    st_ = batch_conditional_stats(b, cands, 0.3, 0.1, 2)
    ok = st_.count_t > 0
    assert np.all(st_.m2_t[ok] >= 0)
    assert np.all(st_.count_t <= b.m)


def test_in_event_tails_are_subgaussian_scale():
    # max |Y| over the event stays within a few multiples of its spread
    ws = orthogonal_regressors(3, 2, 1.5, 1.0, 2.0)
    b = generate(ws, NoiseSpec.gaussian(0.3, 2), 200000, 8)
    v = np.array([1.5, 0.0, 0.0])
    ev = LocalizationEvent.for_vector(v, 0.5, 2, 0.1)
    mask = ev.contains(b.xs)
    y = b.zs[mask] - b.xs[mask] @ v
    q = np.quantile(np.abs(y - y.mean()), 0.99)
    assert np.max(np.abs(y - y.mean())) < 3 * q


def test_save_stats(tmp_path):
    ws = orthogonal_regressors(3, 2, 1.5, 1.0, 2.0)
    b = generate(ws, NoiseSpec.gaussian(0.3, 2), 5000, 9)
    st_ = batch_conditional_stats(b, np.array([[1.5, 0, 0], [0, 1.5, 0]]), 0.3, 0.1, 2)
    save_stats_csv(st_, tmp_path / "s.csv")
    table = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    assert table.shape == (2, 7)
    np.testing.assert_array_equal(table[:, 5], st_.count_t)
