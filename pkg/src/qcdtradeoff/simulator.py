"""Monte Carlo harness: false-alarm rate, worst-case delay, delay-slope fits,
ML decoding of the communication branch, and the modified Wald identity.

Random streams are keyed by ``(seed, codeword index, change point, tag)`` so
results do not depend on how cells are scheduled across threads.  The change
point ``inf`` is keyed as 0.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .channels import DiscreteSensingPair, SensingModel, StateSequence, sample_discrete
from .detectors import block_llrs, run_scs, threshold_for_far
from .prob_core import ChannelLike, as_channel

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "DetectorRun",
    "CellDelay",
    "DelayEstimate",
    "CodewordFar",
    "FarEstimate",
    "SlopeFit",
    "WaldReport",
    "default_change_points",
    "simulate_run",
    "estimate_far",
    "estimate_wadd",
    "fit_delay_slope",
    "ml_decode",
    "max_error_probability",
    "wald_identity_harness",
]

Nu = Union[int, float]

_TAG_WADD = 1
_TAG_FAR = 2
FULL_SWEEP_LIMIT = 1 << 8


def _stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def _nu_key(nu: Nu) -> int:
    return 0 if nu == math.inf else int(nu)


def default_change_points(L: int, n: int, blocks: Sequence[int] = (0, 1)) -> List[int]:
    """Boundary offsets ``jL + 1`` and mid-subblock offsets ``jL + floor(L/2) + 1``."""
    out = set()
    for j in blocks:
        for off in ((1, L // 2 + 1) if L > 1 else (1,)):
            nu = j * L + off
            if nu <= n:
                out.add(nu)
    return sorted(out)


@dataclass
class ExperimentConfig:
    """One simulation campaign.

    ``codebook`` needs ``codewords`` (messages by positions) and ``L``.
    ``threshold`` wins over ``alpha``; with only ``alpha`` the threshold is
    ``|log alpha| + log L``.  ``codewords`` is a count of sampled codewords,
    an explicit index list, or ``"all"`` (at most 256 messages).
    """

    codebook: object
    model: SensingModel
    comm: Optional[ChannelLike] = None
    threshold: Optional[float] = None
    alpha: Optional[float] = None
    change_points: Optional[Sequence[Nu]] = None
    runs: int = 1000
    seed: int = 0
    codewords: Union[int, str, Sequence[int]] = 16
    horizon_cap: int = 1_000_000
    max_censored_fraction: float = 0.01
    threads: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.threshold is None and self.alpha is None:
            raise ValueError("need a threshold or a target false-alarm rate")
        cw = np.asarray(self.codebook.codewords)
        if cw.shape[0] < 1:
            raise ValueError("codebook has no codewords")
        if cw.shape[1] % self.L:
            raise ValueError(f"codeword length {cw.shape[1]} is not a multiple of L={self.L}")
        for nu in self.change_points or ():
            if not (nu == math.inf or (int(nu) == nu and 1 <= nu <= self.n)):
                raise ValueError(f"change point {nu} outside [1, {self.n}] and not inf")
        if not 0 <= self.max_censored_fraction <= 1:
            raise ValueError("max_censored_fraction must lie in [0, 1]")
        if self.horizon_cap < 1 or self.threads < 1:
            raise ValueError("horizon_cap and threads must be >= 1")

    @property
    def L(self) -> int:
        return int(self.codebook.L)

    @property
    def n(self) -> int:
        return int(np.asarray(self.codebook.codewords).shape[1])

    @property
    def b(self) -> float:
        return float(self.threshold) if self.threshold is not None else threshold_for_far(self.alpha, self.L)

    def codeword_indices(self) -> List[int]:
        M = np.asarray(self.codebook.codewords).shape[0]
        if isinstance(self.codewords, str):
            if self.codewords != "all":
                raise ValueError(f"unknown codeword selection {self.codewords!r}")
            if M > FULL_SWEEP_LIMIT:
                raise ValueError(f"full sweep limited to {FULL_SWEEP_LIMIT} messages, codebook has {M}")
            return list(range(M))
        if isinstance(self.codewords, (int, np.integer)):
            if self.codewords < 1:
                raise ValueError("need at least one codeword")
            if self.codewords >= M:
                return list(range(M))
            pick = _stream(self.seed, 0, 0, 0).choice(M, size=int(self.codewords), replace=False)
            return sorted(int(i) for i in pick)
        idx = sorted({int(i) for i in self.codewords})
        if not idx or idx[0] < 0 or idx[-1] >= M:
            raise ValueError(f"codeword indices must lie in [0, {M})")
        return idx

    def sweep(self) -> List[Nu]:
        if self.change_points is None:
            return default_change_points(self.L, self.n)
        return list(self.change_points)


# --------------------------------------------------------------------------
# batch SCS engine


def _clamped_path(z: np.ndarray, W0: np.ndarray, b: float):
    """Clamped recursion over rows of block llrs ``z``; returns (first firing column or -1, final W)."""
    rows, c = z.shape
    first = np.full(rows, -1, dtype=np.int64)
    final = np.empty(rows)
    finite = np.all(np.isfinite(z), axis=1)
    if finite.any():
        zf = z[finite]
        S = np.cumsum(zf, axis=1)
        # W_j = S_j - min(-W0, min_{i<=j} S_i)
        floor = np.minimum.accumulate(np.concatenate([-W0[finite, None], S], axis=1), axis=1)[:, 1:]
        W = S - floor
        hit = W >= b
        any_hit = hit.any(axis=1)
        first[np.flatnonzero(finite)[any_hit]] = np.argmax(hit[any_hit], axis=1)
        final[finite] = W[:, -1]
    for r in np.flatnonzero(~finite):
        w = W0[r]
        for j in range(c):
            w = max(w + z[r, j], 0.0)
            if w >= b:
                first[r] = j
                break
        final[r] = w
    return first, final


def _scs_batch(model, codeword, L, b, nu, runs, rng, start_block=0, max_chunk=256):
    """Stopping subblock (1-based, absolute) per run from ``W = 0`` at ``start_block``; 0 when it never fires."""
    codeword = np.asarray(codeword)
    k = codeword.shape[0] // L
    stop = np.zeros(runs, dtype=np.int64)
    W = np.zeros(runs)
    active = np.arange(runs)
    j = start_block
    chunk = 8
    while j < k and active.size:
        c = min(chunk, k - j)
        chunk = min(2 * chunk, max_chunk)
        seg = codeword[j * L : (j + c) * L]
        states = (np.arange(j * L, (j + c) * L) >= nu - 1).astype(np.int64)
        y = model.sample(seg, states, rng, active.size)
        z = block_llrs(model, seg, y, L)
        first, final = _clamped_path(z, W[active], b)
        fired = first >= 0
        stop[active[fired]] = j + first[fired] + 1
        W[active] = final
        active = active[~fired]
        j += c
    return stop


@dataclass
class DetectorRun:
    nu: Nu
    N: int
    trace: List[Tuple[int, float]]
    observations: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, DetectorRun):
            return NotImplemented
        return (
            self.nu == other.nu
            and self.N == other.N
            and self.trace == other.trace
            and np.array_equal(self.observations, other.observations)
        )


def simulate_run(codeword, model: SensingModel, nu: Nu, L: int, b: float, rng: np.random.Generator) -> DetectorRun:
    """Sample one trace with the change at ``nu`` and run SCS on it."""
    codeword = np.asarray(codeword)
    n = codeword.shape[0]
    if n % L:
        raise ValueError(f"codeword length {n} is not a multiple of L={L}")
    if nu != math.inf and not 1 <= nu <= n:
        raise ValueError(f"change point {nu} outside [1, {n}]")
    states = StateSequence(nu, n).states()
    y = model.sample(codeword, states, rng, 1)[0]
    N, trace = run_scs(codeword, y, model, L, b, trace=True)
    return DetectorRun(nu, N, trace, y)


# --------------------------------------------------------------------------
# worst-case delay


@dataclass
class CellDelay:
    codeword: int
    nu: Nu
    mean: float
    se: float
    censored: int
    runs: int


@dataclass
class DelayEstimate:
    """Worst cell over (codeword, change point); means exclude censored runs.

    A cell whose runs are all censored reports the lower bound
    ``n + 2 - nu`` in place of a mean.
    """

    mean: float
    se: float
    censored: int
    runs: int
    per_nu: Dict[Nu, float]
    worst_nu: Optional[Nu]
    worst_codeword: Optional[int]
    threshold: float
    cells: List[CellDelay] = field(default_factory=list)
    flagged: bool = False

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.runs if self.runs else 0.0

    def to_dict(self) -> dict:
        return {
            "wadd": self.mean,
            "se": self.se,
            "threshold": self.threshold,
            "censored": self.censored,
            "runs": self.runs,
            "flagged": self.flagged,
            "worst_nu": _nu_json(self.worst_nu),
            "worst_codeword": self.worst_codeword,
            "per_nu": {str(_nu_json(k)): v for k, v in self.per_nu.items()},
        }


def _nu_json(nu):
    return "inf" if nu == math.inf else nu


def _delay_cell(config: ExperimentConfig, b: float, m: int, nu: int) -> CellDelay:
    L, n = config.L, config.n
    cw = np.asarray(config.codebook.codewords)[m]
    rng = _stream(config.seed, m, _nu_key(nu), _TAG_WADD)
    j0 = (nu - 1) // L
    stop = _scs_batch(config.model, cw, L, b, nu, config.runs, rng, start_block=j0)
    ok = stop > 0
    delays = stop[ok] * L - nu + 1
    cens = int(config.runs - ok.sum())
    if delays.size:
        mean = float(delays.mean())
        se = float(delays.std(ddof=1) / math.sqrt(delays.size)) if delays.size > 1 else 0.0
    else:
        mean, se = float(n + 2 - nu), math.inf
    return CellDelay(m, nu, mean, se, cens, config.runs)


def _map(config: ExperimentConfig, fn, items):
    if config.threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            return list(pool.map(lambda a: fn(*a), items))
    return [fn(*a) for a in items]


def estimate_wadd(config: ExperimentConfig, threshold: Optional[float] = None) -> DelayEstimate:
    """Worst-case mean delay ``(N - nu + 1)^+`` over sampled codewords and change points.

    The statistic starts from 0 at the last subblock boundary before the
    change; earlier history can only raise it.  Pre-change samples inside the
    straddling subblock are drawn from the pre-change law.
    """
    b = config.b if threshold is None else float(threshold)
    nus = [nu for nu in config.sweep() if nu != math.inf]
    if not nus:
        raise ValueError("delay estimation needs at least one finite change point")
    items = [(b, m, nu) for m in config.codeword_indices() for nu in nus]
    cells = _map(config, lambda b_, m, nu: _delay_cell(config, b_, m, nu), items)

    per_nu: Dict[Nu, float] = {}
    for c in cells:
        per_nu[c.nu] = max(per_nu.get(c.nu, -math.inf), c.mean)
    worst = max(cells, key=lambda c: (c.mean, -c.codeword))
    censored = sum(c.censored for c in cells)
    runs = sum(c.runs for c in cells)
    flagged = censored > config.max_censored_fraction * runs or any(c.censored == c.runs for c in cells)
    if flagged:
        log.warning("delay estimate at b=%g: %d of %d runs censored", b, censored, runs)
    return DelayEstimate(worst.mean, worst.se, censored, runs, per_nu, worst.nu, worst.codeword, b, cells, flagged)


# --------------------------------------------------------------------------
# false-alarm rate


@dataclass
class CodewordFar:
    codeword: int
    mean_run_length: float
    se: float
    censored: int
    runs: int

    @property
    def far(self) -> float:
        return 1.0 / self.mean_run_length


@dataclass
class FarEstimate:
    """Largest per-codeword ``1 / E_inf(N)``.

    Censored runs enter the mean at their cap, so the mean run length is a
    lower bound and the rate an upper bound whenever ``censored > 0``.  With
    no alarm at all, ``far`` is 0 and ``lower_bound_only`` is set.
    """

    far: float
    ci_low: float
    ci_high: float
    mean_run_length: float
    se: float
    censored: int
    runs: int
    worst_codeword: int
    threshold: float
    per_codeword: List[CodewordFar] = field(default_factory=list)
    lower_bound_only: bool = False
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            "far": self.far,
            "ci95": [self.ci_low, self.ci_high],
            "mean_run_length": self.mean_run_length,
            "se": self.se,
            "threshold": self.threshold,
            "censored": self.censored,
            "runs": self.runs,
            "worst_codeword": self.worst_codeword,
            "lower_bound_only": self.lower_bound_only,
            "flagged": self.flagged,
        }


def _far_cell(config: ExperimentConfig, b: float, m: int) -> CodewordFar:
    L, n = config.L, config.n
    cw = np.asarray(config.codebook.codewords)[m]
    rng = _stream(config.seed, m, 0, _TAG_FAR)
    total = np.zeros(config.runs, dtype=np.int64)
    active = np.arange(config.runs)
    offset = 0
    # no alarm within the horizon: the statistic restarts from 0 on a fresh pass
    while active.size and offset < config.horizon_cap:
        stop = _scs_batch(config.model, cw, L, b, math.inf, active.size, rng)
        fired = stop > 0
        total[active[fired]] = offset + stop[fired] * L
        active = active[~fired]
        offset += n
    total[active] = offset
    se = float(total.std(ddof=1) / math.sqrt(total.size)) if total.size > 1 else 0.0
    return CodewordFar(m, float(total.mean()), se, int(active.size), config.runs)


def estimate_far(config: ExperimentConfig, threshold: Optional[float] = None, z: float = 1.959964) -> FarEstimate:
    """False-alarm rate with a delta-method confidence interval on the mean run length."""
    b = config.b if threshold is None else float(threshold)
    items = [(b, m) for m in config.codeword_indices()]
    cells = _map(config, lambda b_, m: _far_cell(config, b_, m), items)
    worst = min(cells, key=lambda c: (c.mean_run_length, c.codeword))
    censored = sum(c.censored for c in cells)
    runs = sum(c.runs for c in cells)
    no_alarm = all(c.censored == c.runs for c in cells)

    def upper(c):
        lo = c.mean_run_length - z * c.se
        return 1.0 / lo if lo > 0 else math.inf

    if no_alarm:
        far, lo, hi = 0.0, 0.0, max(1.0 / c.mean_run_length for c in cells)
    else:
        far = worst.far
        lo = 1.0 / (worst.mean_run_length + z * worst.se)
        hi = max(upper(c) for c in cells)
    flagged = no_alarm or censored > config.max_censored_fraction * runs
    return FarEstimate(
        far, lo, hi, worst.mean_run_length, worst.se, censored, runs, worst.codeword, b, cells, no_alarm, flagged
    )


# --------------------------------------------------------------------------
# delay slope


@dataclass
class SlopeFit:
    """Least-squares ``WADD ~ slope * b + intercept`` (delay in samples, ``b`` in nats)."""

    thresholds: np.ndarray
    wadd: np.ndarray
    slope: float
    intercept: float
    residuals: np.ndarray
    divergence: float
    estimates: List[DelayEstimate]
    fitted: bool = True
    reason: str = ""

    @property
    def normalized_slope(self) -> float:
        """``slope * D``; 1 matches the delay law ``|log alpha| / D``."""
        return self.slope * self.divergence

    @property
    def reference_slope(self) -> float:
        return 1.0 / self.divergence if self.divergence > 0 else math.inf

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds.tolist(),
            "wadd": self.wadd.tolist(),
            "slope": self.slope,
            "intercept": self.intercept,
            "residuals": self.residuals.tolist(),
            "divergence": self.divergence,
            "reference_slope": self.reference_slope,
            "normalized_slope": self.normalized_slope,
            "fitted": self.fitted,
            "reason": self.reason,
        }


def _per_symbol_divergence(config: ExperimentConfig) -> float:
    cw = np.asarray(config.codebook.codewords)[0]
    return float(np.mean(config.model.symbol_cost(cw[: config.L])))


def fit_delay_slope(config: ExperimentConfig, b_grid: Sequence[float]) -> SlopeFit:
    b = np.asarray(b_grid, dtype=float)
    if b.ndim != 1 or b.size < 3:
        raise ValueError("need at least 3 thresholds")
    if np.any(np.diff(b) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    D = _per_symbol_divergence(config)
    estimates = [estimate_wadd(config, threshold=t) for t in b]
    wadd = np.array([e.mean for e in estimates])
    bad = [float(t) for t, e in zip(b, estimates) if e.flagged]
    if bad:
        nan = np.full(b.size, math.nan)
        return SlopeFit(b, wadd, math.nan, math.nan, nan, D, estimates, False, f"censoring at b={bad}")
    slope, intercept = np.polyfit(b, wadd, 1)
    resid = wadd - (slope * b + intercept)
    return SlopeFit(b, wadd, float(slope), float(intercept), resid, D, estimates)


# --------------------------------------------------------------------------
# communication branch


def _log_rows(comm: ChannelLike) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(as_channel(comm).rows)


def _codeword_matrix(codebook) -> np.ndarray:
    return np.asarray(getattr(codebook, "codewords", codebook), dtype=np.int64)


def ml_decode(codebook, comm: ChannelLike, observations) -> Union[int, np.ndarray]:
    """Maximum-likelihood message index; ties go to the smaller index.

    A 2-D ``observations`` array decodes one row at a time.
    """
    cw = _codeword_matrix(codebook)
    if cw.shape[0] > 1 << 16:
        raise ValueError("ML decoding is limited to 2^16 codewords")
    logw = _log_rows(comm)
    y = np.asarray(observations, dtype=np.int64)
    if y.shape[-1] != cw.shape[1]:
        raise ValueError(f"{y.shape[-1]} observations for length-{cw.shape[1]} codewords")
    if y.ndim == 1:
        return int(np.argmax(logw[cw, y[None, :]].sum(axis=1)))
    out = np.empty(y.shape[0], dtype=np.int64)
    step = max(1, (1 << 22) // max(cw.size, 1))
    for s in range(0, y.shape[0], step):
        chunk = y[s : s + step]
        scores = logw[cw[None, :, :], chunk[:, None, :]].sum(axis=2)
        out[s : s + step] = np.argmax(scores, axis=1)
    return out


def max_error_probability(codebook, comm: ChannelLike, trials: int, seed: int = 0) -> Tuple[float, np.ndarray]:
    """Empirical maximal (over messages) ML decoding error and the per-message rates."""
    cw = _codeword_matrix(codebook)
    errs = np.empty(cw.shape[0])
    for m in range(cw.shape[0]):
        y = sample_discrete(comm, cw[m], _stream(seed, m), trials)
        errs[m] = np.mean(ml_decode(cw, comm, y) != m)
    return float(errs.max()), errs


# --------------------------------------------------------------------------
# modified Wald identity


@dataclass
class WaldReport:
    """Both sides of ``E[sum_1^N Z] = E[Z2] E[N] + (E[Z1] - E[Z2]) P(N >= 1)``."""

    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    mean_N: float
    mean_first: float
    mean_rest: float
    bound: float
    runs: int
    censored: int

    @property
    def combined_se(self) -> float:
        return math.hypot(self.lhs_se, self.rhs_se)

    @property
    def agrees(self) -> bool:
        return abs(self.lhs - self.rhs) <= max(3.0 * self.combined_se, 1e-9 * max(1.0, abs(self.rhs)))

    @property
    def bound_holds(self) -> bool:
        """``E[sum Z] >= E[Z2] E[N] - 2 gamma L`` up to 3 standard errors."""
        return self.lhs + 3.0 * self.combined_se + 1e-9 >= self.bound


def wald_identity_harness(
    pair: DiscreteSensingPair,
    subblock,
    b: float,
    runs: int,
    seed: int = 0,
    pre_samples: int = 0,
    max_blocks: int = 100_000,
) -> WaldReport:
    """Monte Carlo check of the identity for a one-sided SPRT over subblocks.

    Every subblock uses the symbols ``subblock``; the first ``pre_samples``
    positions of the first subblock come from the pre-change law, all others
    from the post-change law.  ``b = -inf`` forces ``N = 1``.  The block means
    ``E[Z1]`` and ``E[Z2]`` are computed exactly.
    """
    if not isinstance(pair, DiscreteSensingPair):
        raise TypeError("the identity harness needs a discrete sensing pair")
    if pair.unbounded_llr:
        raise ValueError("log-likelihood ratio is unbounded")
    x = np.asarray(subblock, dtype=np.int64)
    L = x.size
    if not 0 <= pre_samples <= L:
        raise ValueError(f"pre_samples must lie in [0, {L}]")
    if runs < 2:
        raise ValueError("need at least 2 runs")
    rng = _stream(seed, 0, 0, 3)

    cost = pair.symbol_cost(x)
    ez2 = float(cost.sum())
    ez1 = float(pair.pre_change_mean(x[:pre_samples]).sum() + cost[pre_samples:].sum())

    first_states = (np.arange(L) >= pre_samples).astype(np.int64)
    ones = np.ones(L, dtype=np.int64)
    S = block_llrs(pair, x, pair.sample(x, first_states, rng, runs), L)[:, 0]
    N = np.ones(runs, dtype=np.int64)
    active = np.flatnonzero(S < b)
    j = 1
    while active.size and j < max_blocks:
        z = block_llrs(pair, x, pair.sample(x, ones, rng, active.size), L)[:, 0]
        S[active] += z
        j += 1
        N[active] = j
        active = active[S[active] < b]
    if active.size:
        log.warning("%d SPRT runs reached %d blocks without stopping", active.size, max_blocks)

    lhs_se = float(S.std(ddof=1) / math.sqrt(runs))
    n_se = float(N.std(ddof=1) / math.sqrt(runs))
    mean_N = float(N.mean())
    rhs = ez2 * mean_N + (ez1 - ez2)  # P(N >= 1) = 1
    bound = ez2 * mean_N - 2.0 * pair.llr_bound * L
    return WaldReport(float(S.mean()), lhs_se, rhs, abs(ez2) * n_se, mean_N, ez1, ez2, bound, runs, int(active.size))
