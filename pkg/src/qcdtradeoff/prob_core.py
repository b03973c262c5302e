"""Finite-alphabet probability primitives.

All quantities are in nats. Infinite divergences are returned as
``math.inf`` (IEEE +inf), which saturates under addition and never
masquerades as a large finite number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

SUM_TOL = 1e-12

__all__ = [
    "Distribution",
    "ChannelMatrix",
    "AlphabetMismatch",
    "as_distribution",
    "as_channel",
    "entropy",
    "kl_divergence",
    "conditional_kl",
    "mutual_information",
    "symbol_costs",
]


class AlphabetMismatch(ValueError):
    """Raised when two objects are defined over different alphabets."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability vector over ``{0, ..., size-1}``.

    Vectors whose sum is within ``SUM_TOL`` of one are renormalized;
    anything further off is rejected.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("distribution must be a non-empty 1-D vector")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError(f"distribution has negative or non-finite entries: {p}")
        s = p.sum()
        if abs(s - 1.0) > SUM_TOL:
            raise ValueError(f"distribution sums to {s!r}, not 1")
        object.__setattr__(self, "probs", _frozen(p / s))

    @property
    def size(self) -> int:
        return self.probs.size

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    @classmethod
    def uniform(cls, size: int) -> "Distribution":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def point_mass(cls, size: int, symbol: int) -> "Distribution":
        p = np.zeros(size)
        p[symbol] = 1.0
        return cls(p)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __len__(self):
        return self.size

    def __repr__(self):
        return f"Distribution({np.array2string(self.probs, precision=6)})"


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    """Row-stochastic conditional law ``p(y|x)``; row ``x`` is a Distribution."""

    rows: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.rows, dtype=float)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise ValueError("channel matrix must be 2-D and non-empty")
        m = np.vstack([Distribution(row).probs for row in m])
        object.__setattr__(self, "rows", _frozen(m))

    @property
    def n_inputs(self) -> int:
        return self.rows.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.rows.shape[1]

    def row(self, x: int) -> Distribution:
        return Distribution(self.rows[x])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.rows, dtype=dtype)

    def __repr__(self):
        return f"ChannelMatrix({self.rows.tolist()})"


DistLike = Union[Distribution, np.ndarray, list, tuple]
ChannelLike = Union[ChannelMatrix, np.ndarray, list, tuple]


def as_distribution(p: DistLike) -> Distribution:
    return p if isinstance(p, Distribution) else Distribution(p)


def as_channel(ch: ChannelLike) -> ChannelMatrix:
    return ch if isinstance(ch, ChannelMatrix) else ChannelMatrix(ch)


def _xlogy_ratio(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Elementwise p*log(p/q) with 0*log(0/q) = 0 and p>0, q=0 -> +inf."""
    out = np.zeros(np.broadcast(p, q).shape)
    p, q = np.broadcast_arrays(p, q)
    pos = p > 0
    with np.errstate(divide="ignore"):
        out[pos] = p[pos] * (np.log(p[pos]) - np.log(q[pos]))
    return out


def entropy(p: DistLike) -> float:
    """Shannon entropy in nats."""
    p = as_distribution(p).probs
    nz = p[p > 0]
    return float(max(-np.sum(nz * np.log(nz)), 0.0))


def kl_divergence(p: DistLike, q: DistLike) -> float:
    """``D(p||q)`` in nats; ``math.inf`` when p is not absolutely continuous wrt q."""
    p = as_distribution(p).probs
    q = as_distribution(q).probs
    if p.size != q.size:
        raise AlphabetMismatch(f"alphabet sizes differ: {p.size} vs {q.size}")
    terms = _xlogy_ratio(p, q)
    if np.isinf(terms).any():
        return math.inf
    return float(max(terms.sum(), 0.0))


def symbol_costs(p1: ChannelLike, p0: ChannelLike) -> np.ndarray:
    """Per-input divergence ``c(x) = D(p1(.|x) || p0(.|x))``; entries may be inf."""
    p1 = as_channel(p1)
    p0 = as_channel(p0)
    if p1.rows.shape != p0.rows.shape:
        raise AlphabetMismatch(f"channel shapes differ: {p1.rows.shape} vs {p0.rows.shape}")
    return np.array([kl_divergence(p1.rows[x], p0.rows[x]) for x in range(p1.n_inputs)])


def conditional_kl(p1: ChannelLike, p0: ChannelLike, px: DistLike) -> float:
    """``D(p1 || p0 | px) = sum_x px(x) c(x)``.

    Infinite row divergences only count when ``px(x) > 0``.
    """
    px = as_distribution(px).probs
    c = symbol_costs(p1, p0)
    if c.size != px.size:
        raise AlphabetMismatch(f"input alphabet {c.size} vs distribution size {px.size}")
    active = px > 0
    if np.isinf(c[active]).any():
        return math.inf
    return float(np.dot(px[active], c[active]))


def mutual_information(px: DistLike, ch: ChannelLike) -> float:
    """``I(px, p(y|x))`` in nats."""
    px = as_distribution(px).probs
    w = as_channel(ch).rows
    if w.shape[0] != px.size:
        raise AlphabetMismatch(f"channel has {w.shape[0]} inputs, distribution has {px.size}")
    # rows with px(x) = 0 may put mass where py = 0; they carry no weight
    active = px > 0
    wa = w[active]
    pos = wa > 0
    logw = np.log(wa, where=pos, out=np.full(wa.shape, -np.inf))
    # log-domain output law: px @ w underflows for subnormal entries
    log_py = np.logaddexp.reduce(np.log(px[active])[:, None] + logw, axis=0)
    with np.errstate(invalid="ignore"):
        terms = np.where(pos, wa * (logw - log_py[None, :]), 0.0)
    return float(max(np.dot(px[active], terms.sum(axis=1)), 0.0))
