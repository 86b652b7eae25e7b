import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lrssb.model import (GAUSSIAN_PSI2, RADEMACHER_PSI2, UNIFORM_PSI2, NoiseSpec, ProblemParams,
                         RegimeWarning, RegressorSet, SampleBatch, StructuralError,
                         empirical_observation_probability, generate, hidden_path, k_tight_regressors,
                         load_batch, observation_frequency, observe, orthogonal_regressors,
                         random_valid_regressors, save_batch, validate_regressors)
from lrssb.oracles import psi2_norm


def test_problem_params_domain():
    with pytest.raises(StructuralError):
        ProblemParams(n=2, k=3, delta=1, bound_b=2, epsilon=0.1)
    with pytest.raises(StructuralError):
        ProblemParams(n=3, k=2, delta=3, bound_b=2, epsilon=0.1)
    with pytest.raises(StructuralError):
        ProblemParams(n=3, k=2, delta=1, bound_b=2, epsilon=0.0)


def test_regime_warning_only_above_thresholds():
    with pytest.warns(RegimeWarning):
        ProblemParams(6, 2, 1.0, 2.0, 0.3)
    p = ProblemParams(6, 2, 1.0, 2.0, 0.01)
    assert p.regime_warnings() == []


def test_observe_picks_max_and_lowest_tie():
    xs = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    ws = np.array([[1.0, 0.0], [0.0, 1.0]])
    z, idx = observe(xs, ws, np.zeros((3, 2)))
    assert z.tolist() == [1.0, 1.0, 1.0]
    assert idx.tolist() == [0, 1, 0]


def test_validate_orthogonal_ok():
    ws = orthogonal_regressors(6, 2, 1.5, 1.0, 2.0)
    assert validate_regressors(ws) == []


def test_validate_flags_each_kind():
    ws = RegressorSet(np.array([[0.5, 0.0], [3.0, 0.0]]), 1.0, 2.0)
    kinds = {v.kind for v in validate_regressors(ws)}
    assert {"norm_below_delta", "norm_above_b", "covered"} <= kinds
    close = RegressorSet(np.array([[1.5, 0.0], [1.5, 0.1]]), 1.0, 2.0)
    assert "separation" in {v.kind for v in validate_regressors(close)}


def test_k_tight_validity_depends_on_b():
    bad = validate_regressors(k_tight_regressors(4, 2.0, 1.0))
    assert bad and all(v.kind == "covered" for v in bad)
    assert {v.indices for v in bad} == {(j, 0) for j in range(1, 4)}
    assert validate_regressors(k_tight_regressors(4, 3.0, 1.0)) == []


def test_k_tight_shape():
    ws = k_tight_regressors(3, 2.0, 1.0)
    np.testing.assert_allclose(ws.vectors, [[2.0, 0, 0], [1.0, 1.0, 0], [1.0, 0, 1.0]])


@given(st.integers(3, 8), st.integers(1, 3), st.integers(0, 2**31))
def test_random_valid_regressors_are_valid(n, k, seed):
    k = min(k, n)
    ws = random_valid_regressors(n, k, 1.0, 2.0, np.random.default_rng(seed))
    assert validate_regressors(ws) == []


def test_psi2_constants_match_numeric_oracle():
    assert GAUSSIAN_PSI2 == pytest.approx(psi2_norm("gaussian"), rel=1e-8)
    assert UNIFORM_PSI2 == pytest.approx(psi2_norm("uniform"), rel=1e-8)
    assert RADEMACHER_PSI2 == pytest.approx(psi2_norm("scaled_rademacher"), rel=1e-8)


def test_noise_subgaussian_check():
    with pytest.raises(StructuralError):
        NoiseSpec.gaussian(2.0, 2, bound_b=2.0)
    NoiseSpec.gaussian(1.0, 2, bound_b=2.0)


def test_noise_shared_repeats_column():
    eta = NoiseSpec.shared("uniform", 0.5, 3).sample(np.random.default_rng(1), 100)
    assert eta.shape == (100, 3)
    assert np.all(eta == eta[:, :1])
    assert np.all(np.abs(eta) <= 0.5)


def test_noise_variances():
    assert NoiseSpec.uniform(0.3 * math.sqrt(3), 2).variances() == pytest.approx([0.09, 0.09])
    assert NoiseSpec.rademacher(0.3, 1).positive_second_moments() == pytest.approx([0.045])


def test_noise_roundtrip():
    spec = NoiseSpec.shared("gaussian", 0.3, 2)
    assert NoiseSpec.from_dict(spec.to_dict()) == spec


def test_generate_zero_noise_is_exact_max():
    ws = orthogonal_regressors(4, 2, 1.5, 1.0, 2.0)
    b = generate(ws, NoiseSpec.zero(2), 1000, 3)
    np.testing.assert_array_equal(b.zs, np.max(b.xs @ ws.vectors.T, axis=1))


def test_generate_independent_of_threads():
    ws = orthogonal_regressors(3, 2, 1.5, 1.0, 2.0)
    a = generate(ws, NoiseSpec.gaussian(0.3, 2), 5000, 9, n_threads=1, block_size=1000)
    b = generate(ws, NoiseSpec.gaussian(0.3, 2), 5000, 9, n_threads=4, block_size=1000)
    np.testing.assert_array_equal(a.xs, b.xs)
    np.testing.assert_array_equal(a.zs, b.zs)


def test_generate_rejects_mismatch():
    ws = orthogonal_regressors(3, 2, 1.5, 1.0, 2.0)
    with pytest.raises(StructuralError):
        generate(ws, NoiseSpec.gaussian(0.3, 3), 10, 0)


def test_streamed_frequency_matches_batch():
    ws = orthogonal_regressors(3, 3, 1.5, 1.0, 2.0)
    noise = NoiseSpec.gaussian(0.3, 3)
    b = generate(ws, noise, 20000, 5, block_size=4096)
    assert empirical_observation_probability(ws, noise, 20000, 5, 1, block_size=4096) == \
        observation_frequency(b, 1)


def test_symmetric_instance_observation_probability():
    ws = orthogonal_regressors(2, 2, 1.5, 1.0, 2.0)
    p = empirical_observation_probability(ws, NoiseSpec.gaussian(0.3, 2), 200000, 1, 0)
    assert abs(p - 0.5) < 4 * math.sqrt(0.25 / 200000)


def test_observed_strips_hidden():
    ws = orthogonal_regressors(3, 2, 1.5, 1.0, 2.0)
    b = generate(ws, NoiseSpec.zero(2), 10, 0)
    assert b.observed().hidden is None
    with pytest.raises(StructuralError):
        observation_frequency(b.observed(), 0)


@pytest.mark.parametrize("suffix", [".csv", ".npz"])
def test_batch_roundtrip(tmp_path, suffix):
    ws = orthogonal_regressors(3, 2, 1.5, 1.0, 2.0)
    b = generate(ws, NoiseSpec.gaussian(0.3, 2), 50, 4)
    path = save_batch(b, tmp_path / f"batch{suffix}")
    assert hidden_path(path).exists()
    back = load_batch(path, with_hidden=True)
    np.testing.assert_array_equal(back.xs, b.xs)
    np.testing.assert_array_equal(back.zs, b.zs)
    np.testing.assert_array_equal(back.hidden.index, b.hidden.index)
    assert (back.seed, back.k, back.noise_kind) == (4, 2, "independent_gaussian")


def test_batch_shape_check():
    with pytest.raises(StructuralError):
        SampleBatch(np.zeros((3, 2)), np.zeros(4))


@given(st.integers(1, 4), st.integers(0, 10**6), st.sampled_from([997, 4096, 1 << 16]))
def test_generate_independent_of_thread_count(threads, seed, block):
    ws = orthogonal_regressors(3, 2, 1.5, 1.0, 2.0)
    noise = NoiseSpec.gaussian(0.3, 2)
    a = generate(ws, noise, 5000, seed, n_threads=1, block_size=block)
    b = generate(ws, noise, 5000, seed, n_threads=threads, block_size=block)
    assert a.xs.tobytes() == b.xs.tobytes() and a.zs.tobytes() == b.zs.tobytes()
