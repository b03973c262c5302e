"""Achievable rate-delay regions.

A point ``(R, Delta)`` is achievable when some input law ``px`` gives
``R <= I(px, comm)`` and ``Delta <= sum_x px(x) c(x)`` with
``c(x) = D(p1(.|x) || p0(.|x))``.  The boundary ``R(Delta)`` is traced by a
Blahut-Arimoto iteration that rewards the expected sensing cost with a
multiplier ``lambda >= 0``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence

import numpy as np

from .channels import DiscreteSensingPair, ScalarGaussianPair
from .prob_core import ChannelLike, Distribution, as_channel, mutual_information

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000

__all__ = [
    "TradeoffPoint",
    "TimesharingChord",
    "RegionCurve",
    "NoFiniteCost",
    "blahut_arimoto_constrained",
    "default_lambda_grid",
    "region_sweep",
    "delta_star",
    "timesharing_chord",
    "scalar_gaussian_region",
]


class NoFiniteCost(ValueError):
    pass


@dataclass
class TradeoffPoint:
    rate: float
    delta: float
    px: Any = None
    lam: Optional[float] = None
    converged: bool = True
    iterations: int = 0
    objective_history: Optional[List[float]] = field(default=None, repr=False)


@dataclass(frozen=True)
class TimesharingChord:
    """Segment from ``(Delta=0, R=C)`` to ``(Delta=Delta*, R=0)``."""

    capacity: float
    delta_star: float

    def point(self, lam: float):
        """``(rate, delta)`` when a fraction ``lam`` of the time carries data."""
        if not 0 <= lam <= 1:
            raise ValueError("timesharing fraction must lie in [0, 1]")
        return lam * self.capacity, (1 - lam) * self.delta_star

    def rate_at(self, delta):
        delta = np.asarray(delta, dtype=float)
        if self.delta_star == 0:
            return np.where(delta <= 0, self.capacity, 0.0)
        return np.clip(self.capacity * (1 - delta / self.delta_star), 0.0, self.capacity)


def timesharing_chord(capacity: float, delta_star: float) -> TimesharingChord:
    if capacity < 0 or delta_star < 0:
        raise ValueError("capacity and delta_star must be non-negative")
    return TimesharingChord(capacity, delta_star)


@dataclass
class RegionCurve:
    """Upper boundary of the region, sorted by ``delta``.

    For ``delta <= delta_at_capacity`` the boundary is flat at ``capacity``.
    """

    points: List[TradeoffPoint]
    capacity: float
    delta_at_capacity: float
    delta_star: float
    rate_at_delta_star: float
    chord: TimesharingChord
    infinite_cost_symbols: tuple = ()

    @property
    def deltas(self) -> np.ndarray:
        return np.array([p.delta for p in self.points])

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    @property
    def converged(self) -> bool:
        return all(p.converged for p in self.points)

    def rate_at(self, delta):
        """Interpolated ``R(delta)``; ``nan`` beyond ``delta_star``."""
        d = np.asarray(delta, dtype=float)
        xs, ys = self.deltas, self.rates
        beyond = d > self.delta_star * (1 + 1e-12) + 1e-15
        out = np.interp(np.minimum(d, xs[-1]), xs, ys, left=self.capacity)
        out = np.where(d <= self.delta_at_capacity, self.capacity, out)
        return np.where(beyond, np.nan, out)

    def invariant_violations(self, slack: float = 1e-9) -> List[str]:
        d, r = self.deltas, self.rates
        bad = []
        if np.any(np.diff(d) < -slack):
            bad.append("not sorted by delta")
        if np.any(np.diff(r) > slack):
            bad.append("rate increases with delta")
        for i in range(len(d) - 2):
            span = d[i + 2 :] - d[i]
            ok = span > 0
            for k in np.flatnonzero(ok) + i + 2:
                t = (d[i + 1 : k] - d[i]) / (d[k] - d[i])
                chord = r[i] + t * (r[k] - r[i])
                if np.any(r[i + 1 : k] < chord - slack):
                    bad.append(f"concavity broken between knots {i} and {k}")
                    break
        below = r < self.chord.rate_at(d) - slack
        if np.any(below):
            bad.append("curve dips below the timesharing chord")
        return bad

    def rows(self):
        for p in self.points:
            yield (p.lam, p.delta, p.rate)

    def write_csv(self, path, scale: float = 1.0, header_comment: Optional[str] = None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["lambda", "delta_nats" if scale == 1 else "delta_bits", "rate_nats" if scale == 1 else "rate_bits"])
            for lam, d, r in self.rows():
                w.writerow(["" if lam is None else repr(float(lam)), repr(float(d * scale)), repr(float(r * scale))])

    def summary(self, scale: float = 1.0) -> dict:
        return {
            "capacity": self.capacity * scale,
            "delta_at_capacity": self.delta_at_capacity * scale,
            "delta_star": self.delta_star * scale,
            "rate_at_delta_star": self.rate_at_delta_star * scale,
            "num_points": len(self.points),
            "converged": self.converged,
            "non_converged_lambdas": [p.lam for p in self.points if not p.converged],
            "infinite_cost_symbols": list(self.infinite_cost_symbols),
            "timesharing_chord": {
                "from": {"delta": 0.0, "rate": self.capacity * scale},
                "to": {"delta": self.delta_star * scale, "rate": 0.0},
            },
        }


# --------------------------------------------------------------------------
# Blahut-Arimoto with a sensing reward


def _log(a: np.ndarray) -> np.ndarray:
    return np.log(a, where=a > 0, out=np.full(a.shape, -np.inf))


# floor on log r relative to its max; keeps every input strictly positive
_LOG_FLOOR = 700.0


def blahut_arimoto_constrained(
    comm: ChannelLike,
    costs: Sequence[float],
    lam: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    init: Optional[Sequence[float]] = None,
    record: bool = False,
    accelerate: bool = True,
) -> TradeoffPoint:
    """Maximize ``I(r, comm) + lam * sum_x r(x) c(x)`` over input laws ``r``.

    Alternates the posterior step ``q(x|y) ∝ r(x) p(y|x)`` and the input step
    ``r(x) ∝ exp(sum_y p(y|x) log q(x|y) + lam c(x))``.  Symbols with infinite
    cost are kept out of the support.  Iteration stops once the gap between
    ``max_x [D(p(.|x)||q_Y) + lam c(x)]`` (an upper bound on the optimum) and
    the current objective drops below ``tol``.

    With ``accelerate`` each iteration also tries the over-relaxed step
    ``r(x) * exp(s * f(x))`` and keeps it when its objective beats the plain
    step; ``s`` doubles after a win and halves after a loss.
    """
    w = as_channel(comm).rows
    c = np.asarray(costs, dtype=float)
    if c.shape != (w.shape[0],):
        raise ValueError(f"need one cost per input symbol ({w.shape[0]}), got {c.shape}")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    finite = np.isfinite(c)
    if not finite.any():
        raise NoFiniteCost("every input symbol has infinite sensing cost")
    w_f, c_f = w[finite], c[finite]

    if init is None:
        r = np.full(w_f.shape[0], 1.0 / w_f.shape[0])
    else:
        r = np.asarray(init, dtype=float)[finite]
        r = r / r.sum()

    logw = _log(w_f)

    def evaluate(r):
        # log-domain output law: r @ w can underflow where a row still has mass
        log_py = np.logaddexp.reduce(_log(r)[:, None] + logw, axis=0)
        with np.errstate(invalid="ignore"):
            f = np.where(w_f > 0, w_f * (logw - log_py[None, :]), 0.0).sum(axis=1) + lam * c_f
        return float(np.dot(r[r > 0], f[r > 0])), f

    def step(r, f, size):
        logr = _log(r) + size * f
        logr -= logr.max()
        out = np.exp(np.maximum(logr, -_LOG_FLOOR))
        return out / out.sum()

    history = [] if record else None
    r = step(r, np.zeros_like(r), 0.0)
    J, f = evaluate(r)
    prev_J = -math.inf
    relax = 2.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if J < prev_J - 1e-12 * max(1.0, abs(J)):
            raise AssertionError(f"Blahut-Arimoto objective decreased at iteration {it}: {prev_J} -> {J}")
        prev_J = J
        if record:
            history.append(J)
        if np.max(f) - J < tol:
            converged = True
            break
        r_next = step(r, f, 1.0)
        J_next, f_next = evaluate(r_next)
        if accelerate:
            r_fast = step(r, f, relax)
            J_fast, f_fast = evaluate(r_fast)
            if J_fast > J_next:
                r_next, J_next, f_next = r_fast, J_fast, f_fast
                relax = min(2.0 * relax, 1e6)
            else:
                relax = max(0.5 * relax, 2.0)
        r, J, f = r_next, J_next, f_next

    if not converged:
        log.warning("Blahut-Arimoto did not converge for lambda=%g after %d iterations", lam, max_iter)
    full = np.zeros(w.shape[0])
    full[finite] = r
    px = Distribution(full)
    rate = mutual_information(px, w)
    delta = float(np.dot(full[finite], c_f))
    return TradeoffPoint(rate, delta, px, lam, converged, it, history)


def default_lambda_grid(num: int = 60, lo: float = 1e-3, hi: float = 1e3) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(lo, hi, num)])


def delta_star(pair) -> tuple:
    """``(max_x c(x), argmax)`` with ties resolved to the smallest symbol index."""
    if isinstance(pair, DiscreteSensingPair):
        c = pair.costs
    else:
        c = np.asarray(pair, dtype=float)
    if not np.isfinite(c).any():
        raise NoFiniteCost("every input symbol has infinite sensing cost")
    x = int(np.argmax(c))  # argmax returns the first maximizer
    return float(c[x]), x


def region_sweep(
    comm: ChannelLike,
    pair: DiscreteSensingPair,
    lambda_grid: Optional[Sequence[float]] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    refine_fraction: float = 0.02,
    max_refinements: int = 12,
    check: bool = True,
) -> RegionCurve:
    """Trace ``R(Delta)`` for a discrete communication channel and sensing pair."""
    comm = as_channel(comm)
    if comm.n_inputs != pair.n_inputs:
        raise ValueError("communication channel and sensing pair disagree on the input alphabet")
    grid = default_lambda_grid() if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    costs = pair.costs
    finite = np.isfinite(costs)
    inf_syms = tuple(int(x) for x in np.flatnonzero(~finite))
    if inf_syms:
        log.warning("symbols %s have infinite sensing cost and are excluded from the sweep", inf_syms)

    solve = lambda lam: blahut_arimoto_constrained(comm, costs, lam, tol=tol, max_iter=max_iter)
    pts = {float(l): solve(float(l)) for l in np.unique(grid)}

    d_star_finite = float(np.max(costs[finite]))
    gap_limit = refine_fraction * d_star_finite
    for _ in range(max_refinements):
        lams = sorted(pts)
        new = []
        for a, b in zip(lams, lams[1:]):
            if abs(pts[b].delta - pts[a].delta) > gap_limit:
                new.append(b / 2 if a == 0 else math.sqrt(a * b))
        if not new:
            break
        for l in new:
            pts[l] = solve(l)

    # rate at the best pure-sensing operating point: capacity restricted to maximizers
    top = np.flatnonzero(finite & (costs >= d_star_finite - 1e-15))
    sub_costs = np.full(comm.n_inputs, math.inf)
    sub_costs[top] = 0.0
    top_pt = blahut_arimoto_constrained(comm, sub_costs, 0.0, tol=tol, max_iter=max_iter)
    top_pt = TradeoffPoint(top_pt.rate, d_star_finite, top_pt.px, math.inf, top_pt.converged, top_pt.iterations)

    ordered = sorted(pts.values(), key=lambda p: (p.delta, -p.rate))
    ordered.append(top_pt)
    points: List[TradeoffPoint] = []
    for p in ordered:
        if points and abs(p.delta - points[-1].delta) < 1e-12 and abs(p.rate - points[-1].rate) < 1e-12:
            continue
        points.append(p)

    cap_pt = pts[min(pts)]
    d_star_value = math.inf if inf_syms else d_star_finite
    curve = RegionCurve(
        points=points,
        capacity=cap_pt.rate,
        delta_at_capacity=cap_pt.delta,
        delta_star=d_star_value,
        rate_at_delta_star=top_pt.rate,
        chord=TimesharingChord(cap_pt.rate, d_star_finite),
        infinite_cost_symbols=inf_syms,
    )
    if check:
        bad = curve.invariant_violations()
        if bad:
            raise ArithmeticError("region invariants violated: " + "; ".join(bad))
    return curve


# --------------------------------------------------------------------------
# scalar Gaussian


def scalar_gaussian_region(model: ScalarGaussianPair, knots: int = 51, power_grid: int = 2001) -> RegionCurve:
    """Boundary for Gaussian inputs ``N(0, s)`` with ``s <= P``.

    Each ``Delta`` knot maximizes the rate over input powers whose sensing
    divergence still reaches ``Delta``.
    """
    P = model.power
    s = np.linspace(0.0, P, power_grid)
    if model.complex_valued:
        rate = np.log1p(s)
    else:
        rate = 0.5 * np.log1p(s)
    if model.variant == "variance":
        div = np.full_like(s, model.variance_divergence)
    else:
        div = model.symbol_cost(np.sqrt(s))  # E|X|^2 = s

    d_star = float(div.max())
    deltas = np.linspace(0.0, d_star, knots)
    points = []
    for d in deltas:
        feasible = div >= d - 1e-12 * max(1.0, d_star)
        i = int(np.argmax(np.where(feasible, rate, -np.inf)))
        points.append(TradeoffPoint(float(rate[i]), float(d), {"input": "gaussian", "power": float(s[i])}))
    cap = float(rate.max())
    i_cap = int(np.argmax(rate))
    return RegionCurve(
        points=points,
        capacity=cap,
        delta_at_capacity=float(div[i_cap]),
        delta_star=d_star,
        rate_at_delta_star=points[-1].rate,
        chord=TimesharingChord(cap, d_star),
    )
