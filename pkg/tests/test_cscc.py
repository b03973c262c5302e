import itertools
import math

import numpy as np
import pytest

from qcdtradeoff.cscc import (
    CodebookTooLarge,
    CsccCodebook,
    SubblockType,
    generate_codebook,
    quantize_type,
    rate_penalty,
    read_codebook,
    sample_subblock,
    sliding_window_check,
    write_codebook,
)
from qcdtradeoff.prob_core import mutual_information

# chi-square 99% quantiles (scipy.stats.chi2.ppf)
CHI2_99_DF1 = 6.6348966010212145
CHI2_99_DF5 = 15.08627246938899
# ln(4 pi)/4 + 2 ln(1/2)/4 + 2/(24 ln 2)
PENALTY_UNIFORM_L2 = 0.40640705820309697


@pytest.mark.parametrize(
    "px, L, counts",
    [((0.5, 0.5), 2, (1, 1)), ((0.3, 0.7), 10, (3, 7)), ((1 / 3, 2 / 3), 4, (1, 3)), ((0.25, 0.25, 0.5), 2, (1, 0, 1))],
)
def test_quantize_type(px, L, counts):
    t = quantize_type(px, L)
    assert t.counts == counts
    assert t.L == L
    assert t.distribution.probs.sum() == pytest.approx(1.0)


def test_quantize_type_rejects_bad_length():
    with pytest.raises(ValueError):
        quantize_type([0.5, 0.5], 0)


def test_class_size():
    assert SubblockType((2, 2)).class_size() == 6
    assert SubblockType((3, 0)).class_size() == 1


def test_singleton_type_class(rng):
    t = SubblockType((2, 0))
    for _ in range(20):
        assert sample_subblock(t, rng).tolist() == [0, 0]


def _chi2(counts, probs, n):
    expected = np.asarray(probs) * n
    return float(np.sum((np.asarray(counts) - expected) ** 2 / expected))


def test_sample_subblock_uniform_two_outcomes():
    rng = np.random.default_rng(101)
    t = SubblockType((1, 1))
    n = 10_000
    first = np.array([sample_subblock(t, rng)[0] for _ in range(n)])
    counts = np.bincount(first, minlength=2)
    assert _chi2(counts, [0.5, 0.5], n) < CHI2_99_DF1


def test_sample_subblock_uniform_six_outcomes():
    rng = np.random.default_rng(202)
    t = SubblockType((2, 2))
    arrangements = sorted(set(itertools.permutations([0, 0, 1, 1])))
    index = {a: i for i, a in enumerate(arrangements)}
    n = 60_000
    counts = np.zeros(6)
    for _ in range(n):
        counts[index[tuple(sample_subblock(t, rng).tolist())]] += 1
    assert _chi2(counts, [1 / 6] * 6, n) < CHI2_99_DF5


def test_generate_codebook_composition():
    cb = generate_codebook(SubblockType((1, 1)), 3, 4, 9)
    assert cb.codewords.shape == (4, 6)
    assert np.all(cb.codewords.sum(axis=1) == 3)
    assert np.all(cb.codewords.reshape(4, 3, 2).sum(axis=2) == 1)
    assert cb.composition_exact()


def test_codebook_arrangements_are_uniform():
    cb = generate_codebook(SubblockType((2, 2)), 1000, 60, 5)
    blocks = cb.codewords.reshape(-1, 4)
    keys = blocks @ np.array([8, 4, 2, 1])
    _, counts = np.unique(keys, return_counts=True)
    assert counts.size == 6
    assert _chi2(counts, [1 / 6] * 6, blocks.shape[0]) < CHI2_99_DF5


def test_generate_codebook_is_deterministic():
    t = SubblockType((2, 1, 1))
    a = generate_codebook(t, 5, 7, 42)
    b = generate_codebook(t, 5, 7, np.random.default_rng(42))
    assert np.array_equal(a.codewords, b.codewords)


def test_duplicates_allowed_when_messages_exceed_class():
    cb = generate_codebook(SubblockType((1, 1)), 1, 10, 0)
    assert cb.num_messages == 10
    assert len({tuple(r) for r in cb.codewords.tolist()}) <= 2


def test_codebook_cap():
    with pytest.raises(CodebookTooLarge):
        generate_codebook(SubblockType((1, 1)), 1000, 1000, 0, symbol_cap=10_000)


def test_codebook_is_immutable():
    cb = generate_codebook(SubblockType((1, 1)), 2, 2, 0)
    with pytest.raises(ValueError):
        cb.codewords[0, 0] = 1


def test_codebook_shape_validation():
    with pytest.raises(ValueError):
        CsccCodebook(SubblockType((1, 1)), 2, np.zeros((3, 5), dtype=int))


def test_rate_penalty_uniform_binary():
    assert rate_penalty(SubblockType((1, 1))) == pytest.approx(PENALTY_UNIFORM_L2, abs=1e-12)


def test_rate_penalty_decreases_when_doubling_length():
    for L in range(8, 257, 2):
        assert rate_penalty(SubblockType((L, L))) < rate_penalty(SubblockType((L // 2, L // 2)))


def test_rate_penalty_point_mass():
    for L in (1, 3, 10):
        t = SubblockType((0, L))
        assert rate_penalty(t) == pytest.approx(1 / (12 * L * math.log(2)))
        assert rate_penalty(t, u=0.0) == pytest.approx(0.0)


def test_window_check_two_subblocks_suffice():
    for counts in ((2, 2), (2, 1, 1), (3, 1)):
        t = SubblockType(counts)
        cb = generate_codebook(t, 50, 3, 1)
        eps = t.alphabet_size / t.L
        for cw in cb.codewords:
            L0 = sliding_window_check(cw, t.distribution, eps)
            assert L0 is not None and L0 <= 2 * t.L


def test_window_check_constant_codeword_fails():
    for eps in (0.1, 0.5, 0.99):
        assert sliding_window_check(np.zeros(20, dtype=int), [0.5, 0.5], eps) is None


def test_window_check_vacuous_eps():
    cw = generate_codebook(SubblockType((1, 3)), 5, 1, 0).codewords[0]
    assert sliding_window_check(cw, [0.25, 0.75], 3.0) == 1


def test_window_check_rejects_symbols_outside_support():
    with pytest.raises(ValueError):
        sliding_window_check(np.array([0, 1]), [1.0, 0.0], 0.5)


def test_quantized_mutual_information_converges(bsc03):
    px = [0.37, 0.63]
    target = mutual_information(px, bsc03)
    gaps = {L: abs(mutual_information(quantize_type(px, L).distribution, bsc03) - target) for L in (2, 5, 50, 500, 5000)}
    assert gaps[5000] < 1e-5
    assert gaps[500] < 1e-4
    for L, g in gaps.items():
        # |q_L - p| <= 1/L and |dI/dp| <= 1 on this channel
        assert g <= 1.0 / L + 1e-15


def test_codebook_file_round_trip(tmp_path):
    cb = generate_codebook(SubblockType((2, 1, 1)), 6, 5, 3)
    path = tmp_path / "cb.txt"
    write_codebook(path, cb, comments=["test"])
    back = read_codebook(path)
    assert np.array_equal(back.codewords, cb.codewords)
    assert back.subblock_type == cb.subblock_type
    assert back.seed == 3


def test_codebook_file_composition_verified(tmp_path):
    cb = generate_codebook(SubblockType((1, 1)), 2, 2, 3)
    path = tmp_path / "cb.txt"
    write_codebook(path, cb)
    lines = path.read_text().splitlines()
    lines[-1] = "0 0 1 1"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="composition"):
        read_codebook(path)
