"""Observation models for the state-dependent sensing channel.

Every model exposes the same vectorized surface used by the detectors and
the Monte Carlo harness:

``sample(x, states, rng, runs)``
    Draw ``runs`` independent observation sequences for the input sequence
    ``x``; ``states[i]`` selects the pre-change (0) or post-change (1) law at
    position ``i``.  Output has shape ``(runs, len(x), ...)``.

``llr(x, y)``
    Per-position log-likelihood ratio ``log p1(y|x) - log p0(y|x)``,
    broadcast over leading axes of ``y``.

``symbol_cost(x)``
    ``D(p1(.|x) || p0(.|x))`` for each position of ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .prob_core import (
    AlphabetMismatch,
    ChannelLike,
    ChannelMatrix,
    as_channel,
    kl_divergence,
    symbol_costs,
)

__all__ = [
    "SensingModel",
    "DiscreteSensingPair",
    "ScalarGaussianPair",
    "MimoGaussianPair",
    "StateSequence",
    "sample_observation",
    "llr",
    "passive_radar_preprocess",
    "passive_radar_model",
    "sample_discrete",
]


class SensingModel(Protocol):
    def sample(self, x, states, rng: np.random.Generator, runs: int) -> np.ndarray: ...

    def llr(self, x, y) -> np.ndarray: ...

    def symbol_cost(self, x) -> np.ndarray: ...


# --------------------------------------------------------------------------
# discrete pair


def sample_discrete(ch: ChannelLike, x, rng: np.random.Generator, runs: int) -> np.ndarray:
    """Draw ``runs`` output sequences of a discrete memoryless channel for inputs ``x``."""
    rows = as_channel(ch).rows
    x = np.asarray(x, dtype=np.int64)
    if x.size and (x.min() < 0 or x.max() >= rows.shape[0]):
        raise ValueError(f"input symbol outside alphabet [0, {rows.shape[0]})")
    cdf = np.cumsum(rows, axis=1)[:, :-1]
    u = rng.random((runs, x.size))
    return (u[..., None] >= cdf[x][None]).sum(axis=-1)


def _llr_table(p1: np.ndarray, p0: np.ndarray) -> np.ndarray:
    table = np.zeros_like(p1)
    with np.errstate(divide="ignore"):
        both = (p1 > 0) & (p0 > 0)
        table[both] = np.log(p1[both]) - np.log(p0[both])
    table[(p1 > 0) & (p0 == 0)] = math.inf
    table[(p1 == 0) & (p0 > 0)] = -math.inf
    # outputs impossible under both laws are never sampled; they contribute 0
    return table


@dataclass(frozen=True, eq=False)
class DiscreteSensingPair:
    """Pre-/post-change conditional laws over finite alphabets."""

    p0: ChannelMatrix
    p1: ChannelMatrix

    def __post_init__(self):
        p0, p1 = as_channel(self.p0), as_channel(self.p1)
        if p0.rows.shape != p1.rows.shape:
            raise AlphabetMismatch(f"p0 shape {p0.rows.shape} != p1 shape {p1.rows.shape}")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "_table", _llr_table(p1.rows, p0.rows))
        cdf = np.cumsum(np.stack([p0.rows, p1.rows]), axis=-1)[..., :-1]
        object.__setattr__(self, "_cdf", cdf)

    @property
    def n_inputs(self) -> int:
        return self.p0.n_inputs

    @property
    def n_outputs(self) -> int:
        return self.p0.n_outputs

    @property
    def llr_table(self) -> np.ndarray:
        return self._table

    @property
    def llr_bound(self) -> float:
        """``max |llr(x, y)|`` over outputs reachable under either law."""
        reach = (self.p0.rows > 0) | (self.p1.rows > 0)
        return float(np.max(np.abs(self._table[reach])))

    @property
    def unbounded_llr(self) -> bool:
        return math.isinf(self.llr_bound)

    @property
    def costs(self) -> np.ndarray:
        return symbol_costs(self.p1, self.p0)

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x)
        if not np.issubdtype(x.dtype, np.integer):
            if not np.all(np.equal(np.mod(x, 1), 0)):
                raise ValueError("discrete inputs must be integer symbols")
            x = x.astype(np.int64)
        if x.size and (x.min() < 0 or x.max() >= self.n_inputs):
            raise ValueError(f"input symbol outside alphabet [0, {self.n_inputs})")
        return x

    def sample(self, x, states, rng: np.random.Generator, runs: int) -> np.ndarray:
        x = self._check_x(x)
        states = np.asarray(states, dtype=np.int64)
        thresholds = self._cdf[states, x]  # (m, ny-1)
        u = rng.random((runs, x.size))
        return (u[..., None] >= thresholds[None]).sum(axis=-1)

    def llr(self, x, y) -> np.ndarray:
        x = self._check_x(x)
        return self._table[x, np.asarray(y)]

    def symbol_cost(self, x) -> np.ndarray:
        return self.costs[self._check_x(x)]

    def pre_change_mean(self, x) -> np.ndarray:
        """``E_0[llr(x, Y)] = -D(p0(.|x) || p1(.|x))`` per position."""
        x = self._check_x(x)
        neg = np.array([-kl_divergence(self.p0.rows[a], self.p1.rows[a]) for a in range(self.n_inputs)])
        return neg[x]


# --------------------------------------------------------------------------
# Gaussian pairs


@dataclass(frozen=True)
class ScalarGaussianPair:
    """Scalar Gaussian sensing channel with an average power budget.

    ``variant="gain"``: ``Y = g0*x + Z`` before the change and ``Y = h*x + Z``
    after, ``Z`` standard normal (circular ``CN(0,1)`` when ``complex_valued``).

    ``variant="variance"``: ``Y = x + Z_s`` with ``Z_s ~ N(0, sigma_s^2)``.

    ``noise_scale`` multiplies the sampled noise only; setting it to zero gives
    noiseless draws for testing while the likelihoods keep the nominal law.
    """

    variant: str = "gain"
    power: float = 1.0
    gain: complex = 1.0
    pre_gain: complex = 1.0
    sigma0_sq: float = 1.0
    sigma1_sq: float = 1.0
    complex_valued: bool = False
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.variant not in ("gain", "variance"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.power > 0:
            raise ValueError("power must be positive")
        if not (self.sigma0_sq > 0 and self.sigma1_sq > 0):
            raise ValueError("noise variances must be positive")
        if self.variant == "variance" and self.complex_valued:
            raise ValueError("variance-change model is real-valued")
        if not self.complex_valued and (np.iscomplexobj(self.gain) or np.iscomplexobj(self.pre_gain)):
            if complex(self.gain).imag or complex(self.pre_gain).imag:
                raise ValueError("complex gains require complex_valued=True")
            object.__setattr__(self, "gain", complex(self.gain).real)
            object.__setattr__(self, "pre_gain", complex(self.pre_gain).real)

    def _noise(self, rng, shape, states=None):
        if self.complex_valued:
            z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
        else:
            z = rng.standard_normal(shape)
        if self.variant == "variance":
            sd = np.where(np.asarray(states) == 1, math.sqrt(self.sigma1_sq), math.sqrt(self.sigma0_sq))
            z = z * sd
        return self.noise_scale * z

    def sample(self, x, states, rng: np.random.Generator, runs: int) -> np.ndarray:
        x = np.asarray(x)
        states = np.asarray(states)
        z = self._noise(rng, (runs, x.size), states)
        if self.variant == "variance":
            return x[None, :] + z
        g = np.where(states == 1, self.gain, self.pre_gain)
        return (g * x)[None, :] + z

    def llr(self, x, y) -> np.ndarray:
        x = np.asarray(x)
        y = np.asarray(y)
        if self.variant == "variance":
            e2 = np.abs(y - x) ** 2
            s0, s1 = self.sigma0_sq, self.sigma1_sq
            return 0.5 * math.log(s0 / s1) - e2 / (2 * s1) + e2 / (2 * s0)
        if self.complex_valued:
            return np.abs(y - self.pre_gain * x) ** 2 - np.abs(y - self.gain * x) ** 2
        h, g0 = self.gain, self.pre_gain
        return (h - g0) * x * y + x**2 * (g0**2 - h**2) / 2

    def symbol_cost(self, x) -> np.ndarray:
        x = np.asarray(x)
        if self.variant == "variance":
            return np.full(x.shape, self.variance_divergence)
        scale = 1.0 if self.complex_valued else 0.5
        return scale * abs(self.gain - self.pre_gain) ** 2 * np.abs(x) ** 2

    @property
    def variance_divergence(self) -> float:
        s0, s1 = self.sigma0_sq, self.sigma1_sq
        return 0.5 * math.log(s0 / s1) + s1 / (2 * s0) - 0.5

    @property
    def capacity(self) -> float:
        c = math.log1p(self.power)
        return c if self.complex_valued else 0.5 * c


@dataclass(frozen=True, eq=False)
class MimoGaussianPair:
    """``Y = G_s x + Z`` with identity noise covariance; ``Ytilde = Gt x + Z'``."""

    G0: np.ndarray
    G1: np.ndarray
    Gtilde: np.ndarray
    power: float

    def __post_init__(self):
        g0, g1, gt = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (self.G0, self.G1, self.Gtilde))
        if g0.shape != g1.shape:
            raise ValueError(f"G0 shape {g0.shape} != G1 shape {g1.shape}")
        if gt.shape[1] != g0.shape[1]:
            raise ValueError("communication and sensing matrices must share the input dimension")
        if not self.power > 0:
            raise ValueError("power must be positive")
        for name, a in (("G0", g0), ("G1", g1), ("Gtilde", gt)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def dim(self) -> int:
        return self.G0.shape[1]

    @property
    def gain_difference(self) -> np.ndarray:
        return self.G1 - self.G0

    @property
    def gamma(self) -> np.ndarray:
        d = self.gain_difference
        return d.T @ d

    def sample(self, x, states, rng: np.random.Generator, runs: int) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))  # (m, dim)
        states = np.asarray(states)
        mean = np.where(states[:, None] == 1, x @ self.G1.T, x @ self.G0.T)
        return mean[None] + rng.standard_normal((runs,) + mean.shape)

    def llr(self, x, y) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float)
        r0 = y - x @ self.G0.T
        r1 = y - x @ self.G1.T
        return 0.5 * (np.sum(r0**2, axis=-1) - np.sum(r1**2, axis=-1))

    def symbol_cost(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return 0.5 * np.einsum("ij,jk,ik->i", x, self.gamma, x)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StateSequence:
    """Deterministic state path with change point ``nu`` (1-based; ``inf`` = never)."""

    nu: Union[int, float]
    n: int

    def __post_init__(self):
        if not (self.nu == math.inf or (int(self.nu) == self.nu and self.nu >= 1)):
            raise ValueError(f"change point must be a positive integer or inf, got {self.nu}")
        if self.n < 0:
            raise ValueError("horizon must be non-negative")

    def states(self) -> np.ndarray:
        i = np.arange(1, self.n + 1)
        return (i >= self.nu).astype(np.int64)


def sample_observation(model: SensingModel, state: int, x, rng: np.random.Generator):
    """One draw from ``p^(state)(.|x)``."""
    if state not in (0, 1):
        raise ValueError("state must be 0 or 1")
    if isinstance(model, MimoGaussianPair):
        return model.sample(np.atleast_2d(x), np.array([state]), rng, 1)[0, 0]
    return model.sample(np.atleast_1d(x), np.array([state]), rng, 1)[0, 0]


def llr(model: SensingModel, x, y) -> float:
    """Scalar ``log p1(y|x) - log p0(y|x)`` for a single observation."""
    if isinstance(model, MimoGaussianPair):
        return float(model.llr(np.atleast_2d(x), np.atleast_2d(y))[0])
    return float(np.asarray(model.llr(np.atleast_1d(x), np.atleast_1d(y)))[0])


# --------------------------------------------------------------------------
# passive radar


def passive_radar_preprocess(
    raw: Sequence[complex],
    x: Sequence[complex],
    h0: complex,
    tau_d: int,
    f: float,
    tau: int,
) -> np.ndarray:
    """Cancel the direct path and undo the target delay and Doppler.

    Returns ``Y[i] = exp(-j 2 pi f (i + tau)) * (raw[i + tau] - h0 * x[i + tau - tau_d])``
    with 0-based indices.  Transmit symbols outside ``[0, len(x))`` are taken
    as zero (the transmitter is silent there).  The output has length
    ``min(len(raw) - tau, len(x))``: samples whose delayed echo falls past the
    end of ``raw`` are dropped.
    """
    raw = np.asarray(raw, dtype=complex)
    x = np.asarray(x, dtype=complex)
    if tau < 0 or tau_d < 0:
        raise ValueError("delays must be non-negative")
    m = max(min(raw.size - tau, x.size), 0)
    i = np.arange(m)
    src = i + tau - tau_d
    direct = np.zeros(m, dtype=complex)
    ok = (src >= 0) & (src < x.size)
    direct[ok] = x[src[ok]]
    return np.exp(-2j * np.pi * f * (i + tau)) * (raw[i + tau] - h0 * direct)


def passive_radar_model(h: complex, power: float) -> ScalarGaussianPair:
    """Model seen after :func:`passive_radar_preprocess`: ``CN(0,1)`` then ``CN(h x, 1)``."""
    return ScalarGaussianPair(variant="gain", power=power, gain=h, pre_gain=0.0, complex_valued=True)
