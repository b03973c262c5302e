"""Rate-delay boundary for the MIMO Gaussian example.

For an input covariance ``S`` with ``tr S <= P``:

    rate(S)  = 1/2 log det(I + Gt S Gt^T)
    delta(S) = 1/2 tr(Gamma S),   Gamma = (G1 - G0)^T (G1 - G0)

``R(delta)`` maximizes the rate over ``delta(S) >= delta``.  The rate is
increasing in ``S`` so the power constraint is active, and each knot is a
concave program over the spectraplex cut by one halfspace, solved by
projected-gradient ascent with Barzilai-Borwein steps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .channels import MimoGaussianPair
from .tradeoff import RegionCurve, TimesharingChord, TradeoffPoint

log = logging.getLogger(__name__)

__all__ = ["waterfilling", "mimo_rate", "mimo_delta", "mimo_capacity", "mimo_region", "KnotSolution"]


def waterfilling(gains, power: float) -> np.ndarray:
    """Powers ``(mu - 1/g)^+`` over parallel channels with power gains ``g``, summing to ``power``."""
    g = np.asarray(gains, dtype=float)
    p = np.zeros_like(g)
    active = np.flatnonzero(g > 1e-15)
    if active.size == 0:
        return p
    inv = np.sort(1.0 / g[active])
    for m in range(inv.size, 0, -1):
        mu = (power + inv[:m].sum()) / m
        if mu > inv[m - 1]:
            break
    p[active] = np.maximum(mu - 1.0 / g[active], 0.0)
    return p


def mimo_rate(model: MimoGaussianPair, S: np.ndarray) -> float:
    gt = model.Gtilde
    sign, logdet = np.linalg.slogdet(np.eye(gt.shape[0]) + gt @ S @ gt.T)
    return 0.5 * logdet


def mimo_delta(model: MimoGaussianPair, S: np.ndarray) -> float:
    return 0.5 * float(np.trace(model.gamma @ S))


def _sym(a):
    return 0.5 * (a + a.T)


def _project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto ``{p >= 0, sum p = total}``."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


class _Space:
    """Feasible set ``{S psd, tr S = P, <Gamma, S> >= 2 delta}`` in a chosen parameterization.

    ``diagonal=True`` works with power vectors in a fixed orthonormal basis
    ``U`` (``S = U diag(p) U^T``); otherwise with full symmetric matrices.
    """

    def __init__(self, model: MimoGaussianPair, U: Optional[np.ndarray]):
        self.model = model
        self.P = model.power
        self.U = U
        self.diagonal = U is not None
        if self.diagonal:
            self.gamma = np.diag(U.T @ model.gamma @ U).copy()
            self.H = model.Gtilde @ U
        else:
            self.gamma = model.gamma
            self.H = model.Gtilde

    def to_matrix(self, v):
        return self.U @ np.diag(v) @ self.U.T if self.diagonal else v

    def inner(self, a, b):
        return float(np.sum(a * b))

    def delta(self, v):
        return 0.5 * self.inner(self.gamma, v)

    def rate(self, v):
        H = self.H
        M = H @ (H * v).T if self.diagonal else H @ v @ H.T
        return 0.5 * np.linalg.slogdet(np.eye(H.shape[0]) + M)[1]

    def grad(self, v):
        H = self.H
        M = H @ (H * v).T if self.diagonal else H @ v @ H.T
        K = np.linalg.solve(np.eye(H.shape[0]) + M, H)
        G = 0.5 * H.T @ K
        return np.diag(G).copy() if self.diagonal else _sym(G)

    def _proj_base(self, v):
        if self.diagonal:
            return _project_simplex(v, self.P)
        w, V = np.linalg.eigh(_sym(v))
        return (V * _project_simplex(w, self.P)) @ V.T

    def project(self, v, delta):
        x = self._proj_base(v)
        target = 2.0 * delta
        if self.inner(self.gamma, x) >= target:
            return x
        # the halfspace multiplier eta >= 0 is found by bisection; <Gamma, proj(v + eta Gamma)> is monotone
        lo, hi = 0.0, 1.0
        while self.inner(self.gamma, self._proj_base(v + hi * self.gamma)) < target:
            hi *= 2.0
            if hi > 1e18:
                raise ValueError(f"delta={delta} is not attainable")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.inner(self.gamma, self._proj_base(v + mid * self.gamma)) < target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * max(1.0, hi):
                break
        return self._proj_base(v + hi * self.gamma)


@dataclass
class KnotSolution:
    delta: float
    rate: float
    covariance: np.ndarray
    converged: bool
    iterations: int


def _spg(space: _Space, x0, delta, tol=1e-9, max_iter=5000):
    """Nonmonotone spectral projected-gradient ascent."""
    x = space.project(x0, delta)
    f = space.rate(x)
    g = space.grad(x)
    step = 1.0
    recent = [f]
    for it in range(1, max_iter + 1):
        d = space.project(x + step * g, delta) - x
        if math.sqrt(space.inner(d, d)) <= tol * (1.0 + space.P):
            return x, f, True, it
        slope = space.inner(g, d)
        fref = max(recent[-10:])
        t = 1.0
        while True:
            xn = x + t * d
            fn = space.rate(xn)
            if fn >= fref + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        gn = space.grad(xn)
        s = xn - x
        y = g - gn  # ascent: curvature of -f
        sy = space.inner(s, y)
        step = min(max(space.inner(s, s) / sy, 1e-10), 1e10) if sy > 0 else 1e10
        x, f, g = xn, fn, gn
        recent.append(f)
    return x, f, False, max_iter


def _common_basis(model: MimoGaussianPair, tol=1e-10) -> Optional[np.ndarray]:
    """Orthonormal basis diagonalizing both Gamma and Gt^T Gt, if they commute."""
    A = model.gamma
    B = model.Gtilde.T @ model.Gtilde
    scale = max(np.abs(A).max(), np.abs(B).max(), 1.0)
    if np.abs(A @ B - B @ A).max() > tol * scale**2:
        return None
    # generic combination separates any shared degeneracy
    _, U = np.linalg.eigh(A + math.pi * B)
    for M in (A, B):
        off = U.T @ M @ U
        if np.abs(off - np.diag(np.diag(off))).max() > 1e-8 * scale:
            return None
    return U


def mimo_capacity(model: MimoGaussianPair):
    """``(C, S_C)`` by waterfilling over the eigenmodes of ``Gt^T Gt``."""
    s2, V = np.linalg.eigh(model.Gtilde.T @ model.Gtilde)
    p = waterfilling(s2, model.power)
    S = (V * p) @ V.T
    return mimo_rate(model, S), S


def _top_eigenspace(model: MimoGaussianPair, rtol=1e-9):
    w, V = np.linalg.eigh(model.gamma)
    top = w >= w[-1] - rtol * max(abs(w[-1]), 1.0)
    return float(w[-1]), V[:, top]


def _rate_at_delta_star(model: MimoGaussianPair):
    lam1, Q = _top_eigenspace(model)
    H = model.Gtilde @ Q
    s2, V = np.linalg.eigh(H.T @ H)
    p = waterfilling(s2, model.power)
    S = Q @ ((V * p) @ V.T) @ Q.T
    return mimo_rate(model, S), S


def mimo_region(
    model: MimoGaussianPair,
    resolution: int = 41,
    starts: int = 4,
    seed: int = 0,
    force_full: bool = False,
) -> RegionCurve:
    """Boundary knots from ``(delta(C), C)`` to ``(Delta*, R(Delta*))``.

    ``resolution`` knots are spaced evenly in delta on that interval; below
    ``delta(C)`` the boundary is flat at the capacity.
    """
    P = model.power
    C, S_C = mimo_capacity(model)
    d_C = mimo_delta(model, S_C)
    lam1, _ = _top_eigenspace(model)
    d_star = 0.5 * lam1 * P
    R_star, S_star = _rate_at_delta_star(model)

    U = None if force_full else _common_basis(model)
    space = _Space(model, U)
    rng = np.random.default_rng(seed)

    def encode(S):
        return np.diag(U.T @ S @ U).copy() if space.diagonal else S

    base_starts = [encode(S_C), encode(S_star), encode(np.eye(model.dim) * P / model.dim)]
    for _ in range(max(starts - len(base_starts), 0)):
        A = rng.standard_normal((model.dim, model.dim))
        base_starts.append(encode(A @ A.T))

    points: List[TradeoffPoint] = [TradeoffPoint(C, d_C, S_C, None, True, 0)]
    if d_star - d_C > 1e-12 * max(1.0, d_star):
        for d in np.linspace(d_C, d_star, resolution)[1:-1]:
            sols = []
            for x0 in base_starts:
                x, f, ok, it = _spg(space, x0, d)
                sols.append(KnotSolution(float(d), f, space.to_matrix(x), ok, it))
            top = max(s.rate for s in sols)
            # a converged start within solver noise of the best rate is preferred
            best = max(sols, key=lambda s: (s.converged and s.rate >= top - 1e-9, s.rate))
            if not best.converged:
                log.warning("MIMO knot delta=%g did not converge", d)
            points.append(TradeoffPoint(best.rate, best.delta, best.covariance, None, best.converged, best.iterations))
        points.append(TradeoffPoint(R_star, d_star, S_star, None, True, 0))

    return RegionCurve(
        points=points,
        capacity=C,
        delta_at_capacity=d_C,
        delta_star=d_star,
        rate_at_delta_star=R_star,
        chord=TimesharingChord(C, d_star),
    )
