"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary) before
asserting.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from qcdtradeoff.channels import DiscreteSensingPair
from qcdtradeoff.cli import main
from qcdtradeoff.config import build_models, load
from qcdtradeoff.cscc import SubblockType, generate_codebook, quantize_type
from qcdtradeoff.detectors import run_scs, run_sprt
from qcdtradeoff.prob_core import ChannelMatrix, conditional_kl, kl_divergence, mutual_information
from qcdtradeoff.simulator import (
    ExperimentConfig,
    estimate_far,
    fit_delay_slope,
    max_error_probability,
    wald_identity_harness,
)
from qcdtradeoff.tradeoff import blahut_arimoto_constrained, region_sweep

from test_mimo import grid_oracle

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
DATA = Path(__file__).resolve().parent / "data"

COMM = ChannelMatrix([[0.7, 0.3], [0.3, 0.7]])
PAIR = DiscreteSensingPair([[1.0, 0.0], [0.1, 0.9]], [[1.0, 0.0], [0.5, 0.5]])
UNIFORM = SubblockType((1, 1))


def region_rows(out):
    lines = [l for l in (out / "region.csv").read_text().splitlines() if not l.startswith("#")][1:]
    return np.array([[float(v) for v in l.split(",")[1:]] for l in lines])


@pytest.fixture(scope="module")
def delay_fit():
    book = generate_codebook(UNIFORM, 200, 16, 2024)
    cfg = ExperimentConfig(book, PAIR, threshold=4.0, runs=10_000, seed=11, codewords=16)
    start = time.perf_counter()
    fit = fit_delay_slope(cfg, [4.0, 6.0, 8.0, 10.0])
    return fit, time.perf_counter() - start


def test_c1_binary_region(tmp_path, criterion):
    start = time.perf_counter()
    code = main(["region", "--config", str(CONFIGS / "binary.toml"), "--out", str(tmp_path)])
    elapsed = time.perf_counter() - start
    reg = json.loads((tmp_path / "region.json").read_text())["region"]
    errs = [
        abs(reg["capacity"] - 0.082283),
        abs(reg["delta_at_capacity"] - 0.255413),
        abs(reg["delta_star"] - 0.510826),
    ]
    curve = region_rows(tmp_path)
    ref = np.loadtxt(DATA / "binary_region_reference.csv", delimiter=",", skiprows=1)
    d, r = curve[:, 0], curve[:, 1]
    # below delta(C) the boundary is flat at capacity
    got = np.where(ref[:, 0] <= d[0], r[0], np.interp(ref[:, 0], d, r))
    curve_err = float(np.max(np.abs(got - ref[:, 1])))
    ok = code == 0 and max(errs) <= 1e-4 and curve_err <= 1e-3 and elapsed < 5.0
    criterion(
        1,
        "binary rate-delay region",
        ok,
        f"endpoint err {max(errs):.2e} (<=1e-4), curve err {curve_err:.2e} (<=1e-3), {elapsed:.2f}s (<5s)",
    )
    assert ok


def test_c2_mimo_region(tmp_path, criterion):
    start = time.perf_counter()
    code = main(["region", "--config", str(CONFIGS / "mimo.toml"), "--out", str(tmp_path)])
    elapsed = time.perf_counter() - start
    curve = region_rows(tmp_path)
    end_err = max(
        abs(curve[0, 0] - 12.5), abs(curve[0, 1] - 1.791759), abs(curve[-1, 0] - 20.0), abs(curve[-1, 1] - 1.198948)
    )
    _, model = build_models(load(CONFIGS / "mimo.toml")["channel"])
    oracle = grid_oracle(model, curve[:, 0])
    seen = ~np.isnan(oracle)
    grid_err = float(np.max(np.abs(curve[seen, 1] - oracle[seen])))
    ok = code == 0 and end_err <= 1e-3 and grid_err <= 1e-3 and seen.sum() >= len(curve) - 1 and elapsed < 30.0
    criterion(
        2,
        "MIMO rate-delay region",
        ok,
        f"endpoint err {end_err:.2e} (<=1e-3), grid-oracle err {grid_err:.2e} over {seen.sum()} knots (<=1e-3), "
        f"{elapsed:.2f}s (<30s)",
    )
    assert ok


def test_c3_scalar_no_tradeoff(tmp_path, criterion):
    spans = {}
    for name in ("scalar_gain", "scalar_variance"):
        out = tmp_path / name
        assert main(["region", "--config", str(CONFIGS / f"{name}.toml"), "--out", str(out)]) == 0
        rates = region_rows(out)[:, 1]
        spans[name] = float(np.ptp(rates))
    ok = max(spans.values()) <= 1e-6
    criterion(3, "scalar Gaussian flat region", ok, ", ".join(f"{k} span {v:.1e}" for k, v in spans.items()) + " (<=1e-6)")
    assert ok


def test_c4_delay_slope(delay_fit, criterion):
    fit, elapsed = delay_fit
    D = conditional_kl(PAIR.p1, PAIR.p0, [0.5, 0.5])
    runs = min(e.runs // (16 * 4) for e in fit.estimates)
    product = fit.slope * D
    ok = fit.fitted and 0.85 <= product <= 1.25 and runs >= 10_000 and elapsed < 300
    criterion(
        4,
        "delay slope",
        ok,
        f"slope*D = {product:.4f} in [0.85, 1.25], {runs} runs per cell, {elapsed:.1f}s (<300s)",
    )
    assert ok


@pytest.mark.parametrize("alpha", [0.1, 0.01])
def test_c5_far_calibration(alpha, criterion):
    book = generate_codebook(UNIFORM, 200, 8, 99)
    cfg = ExperimentConfig(book, PAIR, alpha=alpha, runs=2000, seed=5, codewords=8)
    far = estimate_far(cfg)
    ok = not far.lower_bound_only and far.ci_high <= alpha
    criterion(
        5,
        f"FAR calibration alpha={alpha}",
        ok,
        f"b={far.threshold:.3f}, FAR={far.far:.2e}, 95% upper bound {far.ci_high:.2e} (<= {alpha})",
    )
    assert ok


def test_c6_scs_sprt_decomposition(criterion):
    rng = np.random.default_rng(606)
    violations = 0
    for _ in range(1000):
        L = int(rng.integers(1, 5))
        k = int(rng.integers(1, 25))
        t = SubblockType(tuple(rng.multinomial(L, [0.5, 0.5])))
        cw = generate_codebook(t, k, 1, int(rng.integers(2**32))).codewords[0]
        nu = int(rng.integers(1, k * L + 2))
        states = (np.arange(1, k * L + 1) >= nu).astype(int)
        y = PAIR.sample(cw, states, rng, 1)[0]
        b = float(rng.uniform(0.1, 6.0))
        n_scs = run_scs(cw, y, PAIR, L, b)
        starts = [run_sprt(cw[(j - 1) * L :], y[(j - 1) * L :], PAIR, L, b) + j - 1 for j in range(1, k + 1)]
        best = min(starts)
        expected = k * L + 1 if best == math.inf else best * L
        violations += n_scs != expected
    ok = violations == 0
    criterion(6, "SCS equals min of restarted SPRTs", ok, f"{violations} violations on 1000 traces (need 0)")
    assert ok


def test_c7_wald_identity(criterion):
    reports = {
        "iid first block": wald_identity_harness(PAIR, [0, 1], 3.0, 20_000, seed=1),
        "perturbed first block": wald_identity_harness(PAIR, [1, 1, 0], 4.0, 20_000, seed=2, pre_samples=1),
        "deterministic N": wald_identity_harness(PAIR, [1, 0], -math.inf, 20_000, seed=3, pre_samples=1),
    }
    parts = []
    for name, rep in reports.items():
        parts.append(f"{name} |lhs-rhs|={abs(rep.lhs - rep.rhs) / rep.combined_se:.2f} SE")
    ok = all(rep.agrees for rep in reports.values())
    criterion(7, "modified Wald identity", ok, "; ".join(parts) + " (<=3 SE)")
    assert ok


def _ba_monotone():
    rng = np.random.default_rng(808)
    for _ in range(50):
        w = rng.dirichlet(np.ones(4), size=3)
        pt = blahut_arimoto_constrained(w, rng.uniform(0, 2, 3), float(rng.uniform(0, 4)), record=True, tol=1e-12)
        h = np.asarray(pt.objective_history)
        if np.any(np.diff(h) < -1e-12 * np.maximum(1.0, np.abs(h[1:]))):
            return False
    pt = blahut_arimoto_constrained(COMM, PAIR.costs, 1.0, record=True, tol=1e-12)
    h = np.asarray(pt.objective_history)
    return bool(np.all(np.diff(h) >= -1e-15))


def _region_invariants(tmp_path):
    bad = region_sweep(COMM, PAIR).invariant_violations()
    for name in ("mimo", "scalar_gain", "scalar_variance"):
        out = tmp_path / name
        main(["region", "--config", str(CONFIGS / f"{name}.toml"), "--out", str(out)])
        bad += json.loads((out / "region.json").read_text())["invariant_violations"]
    return not bad


def _composition():
    rng = np.random.default_rng(909)
    for _ in range(50):
        counts = tuple(rng.integers(0, 5, size=int(rng.integers(1, 5))) + (np.arange(1) == 0))
        if not generate_codebook(SubblockType(counts), int(rng.integers(1, 40)), 8, int(rng.integers(2**32))).composition_exact():
            return False
    return generate_codebook(quantize_type([0.3, 0.7], 10), 50, 16, 1).composition_exact()


def _delay_uniformity(fit):
    # at subblock-boundary change points every codeword sees identically distributed block sums
    est = fit.estimates[-1]
    boundary = {nu for nu in est.per_nu if (nu - 1) % 2 == 0}
    worst = 0.0
    by_word = {}
    for c in est.cells:
        if c.nu in boundary:
            by_word.setdefault(c.codeword, []).append(c)
    means = {m: np.mean([c.mean for c in cs]) for m, cs in by_word.items()}
    ses = {m: math.sqrt(sum(c.se**2 for c in cs)) / len(cs) for m, cs in by_word.items()}
    grand = float(np.mean(list(means.values())))
    grand_se = math.sqrt(sum(s**2 for s in ses.values())) / len(ses)
    for m in means:
        worst = max(worst, abs(means[m] - grand) / math.sqrt(ses[m] ** 2 + grand_se**2))
    return worst


def _information_measures():
    rng = np.random.default_rng(1010)
    for _ in range(200):
        n = int(rng.integers(1, 6))
        p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        if kl_divergence(p, q) < 0 or kl_divergence(p, p) > 1e-12:
            return False
        w = rng.dirichlet(np.ones(3), size=n)
        i = mutual_information(p, w)
        if not -1e-12 <= i <= min(-np.sum(p * np.log(p)), math.log(3)) + 1e-12:
            return False
    return True


def test_c8_invariant_suites(tmp_path, delay_fit, criterion):
    checks = {
        "BA monotone": _ba_monotone(),
        "region nonincreasing/concave/above chord": _region_invariants(tmp_path),
        "CSCC composition": _composition(),
        "kl/MI properties": _information_measures(),
    }
    spread = _delay_uniformity(delay_fit[0])
    checks["codeword delay uniformity"] = spread <= 3.0
    ok = all(checks.values())
    detail = ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items())
    criterion(8, "invariant suites", ok, f"{detail} (max codeword deviation {spread:.2f} pooled SE, <=3)")
    assert ok


def test_c9_decoding_trend(criterion):
    errors = []
    for k in (8, 16, 32, 64):
        book = generate_codebook(UNIFORM, k, 4, 4000 + k)
        worst, _ = max_error_probability(book, COMM, 20_000, seed=k)
        errors.append(worst)
    ok = all(a >= b for a, b in zip(errors, errors[1:]))
    criterion(9, "ML decoding trend", ok, "max error over k=8,16,32,64: " + ", ".join(f"{e:.4f}" for e in errors))
    assert ok
