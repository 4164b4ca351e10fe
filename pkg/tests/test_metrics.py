import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivasep.core import InvalidInputError
from ivasep.metrics import SDR_CAP, best_permutation, filtered_sdr, sdr_improvement, si_sdr


def test_si_sdr_cap_and_scale(rng):
    s = rng.standard_normal(1000)
    assert si_sdr(s, s) == SDR_CAP
    assert si_sdr(2 * s, s) == SDR_CAP


def test_si_sdr_equal_energy_orthogonal_noise(rng):
    s = rng.standard_normal(1000)
    n = rng.standard_normal(1000)
    n -= n @ s / (s @ s) * s
    n *= np.linalg.norm(s) / np.linalg.norm(n)
    assert si_sdr(s + n, s) == pytest.approx(0.0, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(scale=st.floats(1e-6, 1e6), sign=st.sampled_from([-1.0, 1.0]), seed=st.integers(0, 2**32 - 1))
def test_si_sdr_scale_invariance(scale, sign, seed):
    rng = np.random.default_rng(seed)
    s, e = rng.standard_normal((2, 256))
    e = e + 2 * s
    assert si_sdr(sign * scale * e, s) == pytest.approx(si_sdr(e, s), abs=1e-9)


def test_si_sdr_errors():
    with pytest.raises(InvalidInputError):
        si_sdr(np.ones(3), np.zeros(3))
    with pytest.raises(InvalidInputError):
        si_sdr(np.ones(3), np.ones(4))


@pytest.mark.parametrize("seed", range(5))
def test_filtered_single_tap_is_si_sdr(seed):
    rng = np.random.default_rng(seed)
    s, n = rng.standard_normal((2, 2000))
    e = 0.7 * s + 0.5 * n
    assert filtered_sdr(e, s, 1) == pytest.approx(si_sdr(e, s), abs=1e-9)


def test_filtered_delayed_reference(rng):
    s = rng.standard_normal(4000)
    e = np.concatenate([np.zeros(20), s[:-20]])
    assert filtered_sdr(e, s, 64) >= 60.0


def test_filtered_independent_noise():
    vals = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        s, e = rng.standard_normal((2, 4000))
        vals.append(filtered_sdr(e, s, 64))
    assert np.median(vals) <= 0.0


def test_filtered_non_decreasing_in_taps(rng):
    s = rng.standard_normal(3000)
    e = np.convolve(s, rng.standard_normal(40))[:3000] + 0.3 * rng.standard_normal(3000)
    vals = [filtered_sdr(e, s, L) for L in (1, 2, 4, 8, 16, 32, 64, 128)]
    assert np.all(np.diff(vals) >= -1e-9)


def test_filtered_degenerate_reference_does_not_fail():
    s = np.zeros(500)
    s[10] = 1.0
    assert np.isfinite(filtered_sdr(np.roll(s, 3), s, 16))
    with pytest.raises(InvalidInputError):
        filtered_sdr(s, s, 500)


def make_problem(seed, K=3, T=2000):
    rng = np.random.default_rng(seed)
    refs = rng.standard_normal((K, T))
    return refs, refs.sum(axis=0)


def test_improvement_perfect_outputs():
    refs, mix = make_problem(0)
    res = sdr_improvement(refs, mix, refs)
    np.testing.assert_allclose(res.improvement, SDR_CAP - res.baseline)
    assert res.permutation == (0, 1, 2)


def test_improvement_mixture_baseline():
    refs, mix = make_problem(1)
    res = sdr_improvement(np.tile(mix, (3, 1)), mix, refs)
    np.testing.assert_allclose(res.improvement, 0.0, atol=0.1)


def test_improvement_permutation_invariant():
    refs, mix = make_problem(2)
    rng = np.random.default_rng(3)
    est = refs + 0.2 * rng.standard_normal(refs.shape)
    a = sdr_improvement(est, mix, refs)
    b = sdr_improvement(est[[2, 0, 1]], mix, refs)
    np.testing.assert_allclose(a.improvement, b.improvement)
    assert b.permutation == (1, 2, 0)


@pytest.mark.parametrize("K", [1, 2, 3, 4])
def test_best_permutation_is_exhaustive_optimum(K):
    rng = np.random.default_rng(K)
    for _ in range(20):
        scores = rng.normal(size=(K, K))
        perm = best_permutation(scores)
        best = max(np.mean(scores[np.arange(K), p]) for p in itertools.permutations(range(K)))
        assert np.mean(scores[np.arange(K), perm]) == best


def test_improvement_filtered_metric():
    refs, mix = make_problem(4, K=2)
    res = sdr_improvement(refs, mix, refs, metric="filtered_sdr", filter_taps=8)
    assert np.all(res.sdr >= 60)


def test_improvement_errors():
    refs, mix = make_problem(0, K=2)
    with pytest.raises(InvalidInputError):
        sdr_improvement(refs[:1], mix, refs)
    with pytest.raises(InvalidInputError):
        sdr_improvement(refs, mix, refs, metric="pesq")
    big = np.random.default_rng(0).standard_normal((9, 50))
    with pytest.raises(InvalidInputError):
        sdr_improvement(big, big.sum(0), big)
