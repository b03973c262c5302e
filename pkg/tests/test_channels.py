import math

import numpy as np
import pytest

from qcdtradeoff.channels import (
    DiscreteSensingPair,
    MimoGaussianPair,
    ScalarGaussianPair,
    StateSequence,
    llr,
    passive_radar_model,
    passive_radar_preprocess,
    sample_discrete,
    sample_observation,
)
from qcdtradeoff.prob_core import AlphabetMismatch, kl_divergence


def test_blind_symbol_always_outputs_zero(binary_pair, rng):
    for state in (0, 1):
        ys = [sample_observation(binary_pair, state, 0, rng) for _ in range(200)]
        assert set(ys) == {0}


def test_noiseless_gain_model_returns_input(rng):
    m = ScalarGaussianPair(variant="gain", power=1.0, gain=2.0, pre_gain=1.0, noise_scale=0.0)
    x = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(m.sample(x, np.zeros(3, dtype=int), rng, 1)[0], x)
    assert np.array_equal(m.sample(x, np.ones(3, dtype=int), rng, 1)[0], 2.0 * x)


def test_bsc_row_empirical_law(rng):
    pair = DiscreteSensingPair([[0.7, 0.3], [0.3, 0.7]], [[0.7, 0.3], [0.3, 0.7]])
    n = 100_000
    y = pair.sample(np.zeros(n, dtype=int), np.zeros(n, dtype=int), rng, 1)[0]
    frac = y.mean()
    assert abs(frac - 0.3) <= 3 * math.sqrt(0.3 * 0.7 / n)


def test_sample_discrete_matches_rows(rng):
    ch = [[0.2, 0.5, 0.3], [1.0, 0.0, 0.0]]
    y = sample_discrete(ch, np.array([0, 1]), rng, 50_000)
    assert np.all(y[:, 1] == 0)
    freq = np.bincount(y[:, 0], minlength=3) / y.shape[0]
    se = np.sqrt(np.array(ch[0]) * (1 - np.array(ch[0])) / y.shape[0])
    assert np.all(np.abs(freq - ch[0]) <= 3 * se)


def test_sample_discrete_rejects_unknown_symbol(rng):
    with pytest.raises(ValueError):
        sample_discrete([[0.5, 0.5]], [1], rng, 1)


def test_llr_z_channel(binary_pair):
    assert llr(binary_pair, 1, 0) == pytest.approx(math.log(5.0), abs=1e-12)
    assert llr(binary_pair, 1, 1) == pytest.approx(math.log(0.5 / 0.9), abs=1e-12)
    assert llr(binary_pair, 0, 0) == 0.0


def test_llr_zero_for_identical_laws():
    rows = [[0.2, 0.8], [0.6, 0.4]]
    pair = DiscreteSensingPair(rows, rows)
    for x in (0, 1):
        for y in (0, 1):
            assert llr(pair, x, y) == 0.0
    assert pair.llr_bound == 0.0


def test_llr_zero_for_unit_gain(rng):
    m = ScalarGaussianPair(variant="gain", power=1.0, gain=1.0, pre_gain=1.0)
    x = rng.standard_normal(20)
    y = rng.standard_normal((3, 20))
    assert np.all(m.llr(x, y) == 0.0)


def test_llr_bound_and_unbounded_flag(binary_pair):
    assert binary_pair.llr_bound == pytest.approx(math.log(5.0))
    assert not binary_pair.unbounded_llr
    hard = DiscreteSensingPair([[1.0, 0.0]], [[0.5, 0.5]])
    assert hard.unbounded_llr


def test_alphabet_mismatch():
    with pytest.raises(AlphabetMismatch):
        DiscreteSensingPair([[0.5, 0.5]], [[0.2, 0.3, 0.5]])


def test_out_of_alphabet_symbol(binary_pair, rng):
    with pytest.raises(ValueError):
        binary_pair.sample(np.array([2]), np.array([0]), rng, 1)


def test_likelihood_ratio_normalization():
    p0 = np.array([[0.2, 0.3, 0.5], [0.6, 0.3, 0.1]])
    p1 = np.array([[0.1, 0.1, 0.8], [0.3, 0.3, 0.4]])
    pair = DiscreteSensingPair(p0, p1)
    for x in range(2):
        total = np.sum(np.exp(pair.llr_table[x]) * p0[x])
        assert abs(total - 1.0) <= 1e-10


@pytest.mark.parametrize("state", [0, 1])
def test_llr_means_match_divergences(state):
    p0 = np.array([[0.2, 0.3, 0.5], [0.6, 0.3, 0.1]])
    p1 = np.array([[0.1, 0.1, 0.8], [0.3, 0.3, 0.4]])
    pair = DiscreteSensingPair(p0, p1)
    rng = np.random.default_rng(state)
    n = 200_000
    for x in range(2):
        xs = np.full(n, x)
        y = pair.sample(xs, np.full(n, state), rng, 1)[0]
        z = pair.llr(xs, y)
        want = kl_divergence(p1[x], p0[x]) if state == 1 else -kl_divergence(p0[x], p1[x])
        assert abs(z.mean() - want) <= 3 * z.std() / math.sqrt(n)
    assert np.all(pair.pre_change_mean([0, 1]) <= 0)


def test_gaussian_symbol_cost_matches_monte_carlo():
    m = ScalarGaussianPair(variant="gain", power=4.0, gain=2.0, pre_gain=1.0)
    rng = np.random.default_rng(3)
    x = np.full(100_000, 1.5)
    z = m.llr(x, m.sample(x, np.ones(x.size, dtype=int), rng, 1)[0])
    assert abs(z.mean() - m.symbol_cost(np.array([1.5]))[0]) <= 3 * z.std() / math.sqrt(x.size)


def test_variance_model_divergence_matches_monte_carlo():
    m = ScalarGaussianPair(variant="variance", power=1.0, sigma0_sq=1.0, sigma1_sq=3.0)
    rng = np.random.default_rng(4)
    x = np.zeros(100_000)
    z = m.llr(x, m.sample(x, np.ones(x.size, dtype=int), rng, 1)[0])
    assert abs(z.mean() - m.variance_divergence) <= 3 * z.std() / math.sqrt(x.size)


def test_gaussian_parameter_validation():
    with pytest.raises(ValueError):
        ScalarGaussianPair(power=0.0)
    with pytest.raises(ValueError):
        ScalarGaussianPair(variant="variance", sigma0_sq=0.0)
    with pytest.raises(ValueError):
        ScalarGaussianPair(variant="phase")


def test_mimo_symbol_cost_and_llr_mean():
    m = MimoGaussianPair(np.zeros((2, 2)), np.diag([2.0, 1.0]), np.eye(2), 10.0)
    x = np.tile([1.0, 2.0], (50_000, 1))
    assert m.symbol_cost(x[:1])[0] == pytest.approx(0.5 * (4.0 + 4.0))
    rng = np.random.default_rng(5)
    y = m.sample(x, np.ones(x.shape[0], dtype=int), rng, 1)[0]
    z = m.llr(x, y)
    assert abs(z.mean() - 4.0) <= 3 * z.std() / math.sqrt(z.size)


def test_state_sequence():
    assert StateSequence(3, 5).states().tolist() == [0, 0, 1, 1, 1]
    assert StateSequence(math.inf, 3).states().tolist() == [0, 0, 0]
    assert StateSequence(1, 2).states().tolist() == [1, 1]
    with pytest.raises(ValueError):
        StateSequence(0, 3)


def _radar_echo(x, h0, tau_d, h, f, tau, changed):
    n = x.size
    i = np.arange(n + tau)
    direct = np.where((i - tau_d >= 0) & (i - tau_d < n), x[np.clip(i - tau_d, 0, n - 1)], 0)
    target = np.where((i - tau >= 0) & (i - tau < n), x[np.clip(i - tau, 0, n - 1)], 0)
    raw = h0 * direct
    if changed:
        raw = raw + h * np.exp(2j * np.pi * f * i) * target
    return raw


def test_passive_radar_recovers_target_gain(rng):
    x = rng.standard_normal(40) + 1j * rng.standard_normal(40)
    h0, h, f = 0.9 - 0.2j, 0.3 + 0.4j, 0.037
    raw = _radar_echo(x, h0, 2, h, f, 5, changed=True)
    y = passive_radar_preprocess(raw, x, h0, 2, f, 5)
    assert y.size == 40
    assert np.allclose(y, h * x, atol=1e-12, rtol=0)


def test_passive_radar_pre_change_is_silent(rng):
    x = rng.standard_normal(30) + 1j * rng.standard_normal(30)
    raw = _radar_echo(x, 0.7, 3, 0.5, 0.01, 4, changed=False)
    y = passive_radar_preprocess(raw, x, 0.7, 3, 0.01, 4)
    assert np.allclose(y, 0.0, atol=1e-12)


def test_passive_radar_identity_parameters(rng):
    raw = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    x = rng.standard_normal(12)
    assert np.array_equal(passive_radar_preprocess(raw, x, 0.0, 0, 0.0, 0), raw)


def test_passive_radar_model_is_complex_gain_change():
    m = passive_radar_model(0.6 + 0.8j, 10.0)
    assert m.complex_valued and m.pre_gain == 0.0
    assert m.capacity == pytest.approx(math.log(11.0))
    assert m.symbol_cost(np.array([math.sqrt(10.0)]))[0] == pytest.approx(10.0)
