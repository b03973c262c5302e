"""Sequential change detectors: CuSum, subblock CuSum (SCS), parallel SCS, one-sided SPRT.

Stopping indices are 1-based sample indices. A rule that never fires on a
length-``n`` codeword reports ``n + 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .channels import SensingModel

__all__ = [
    "DetectorStopped",
    "CusumState",
    "ScsState",
    "cusum_step",
    "scs_update",
    "block_llrs",
    "scs_stopping_block",
    "sprt_stopping_block",
    "run_scs",
    "run_multi_state_scs",
    "run_sprt",
    "threshold_for_far",
    "write_trace_csv",
]


class DetectorStopped(RuntimeError):
    """Raised when a stopped detector is asked to update."""


@dataclass(frozen=True)
class CusumState:
    W: float = 0.0
    i: int = 0
    b: float = math.inf
    stopped_at: Optional[int] = None


def cusum_step(state: CusumState, llr: float) -> CusumState:
    if state.stopped_at is not None:
        raise DetectorStopped(f"CuSum already stopped at {state.stopped_at}")
    i = state.i + 1
    W = max(state.W + llr, 0.0)
    return CusumState(W, i, state.b, i if W >= state.b else None)


@dataclass(frozen=True)
class ScsState:
    """SCS statistic; ``j`` counts completed subblocks, so the sample index is ``j*L``."""

    L: int
    b: float
    W: float = 0.0
    j: int = 0
    stopped_at: Optional[int] = None

    @property
    def i(self) -> int:
        return self.j * self.L


def scs_update(state: ScsState, block_llr: float) -> ScsState:
    if state.stopped_at is not None:
        raise DetectorStopped(f"SCS already stopped at {state.stopped_at}")
    j = state.j + 1
    W = max(state.W + block_llr, 0.0)
    return replace(state, W=W, j=j, stopped_at=j * state.L if W >= state.b else None)


def block_llrs(model: SensingModel, codeword, observations, L: int) -> np.ndarray:
    """Per-subblock sums of the per-sample log-likelihood ratios."""
    codeword = np.asarray(codeword)
    z = np.asarray(model.llr(codeword, observations), dtype=float)
    if z.shape[-1] % L:
        raise ValueError(f"length {z.shape[-1]} is not a multiple of L={L}")
    return z.reshape(z.shape[:-1] + (-1, L)).sum(axis=-1)


def scs_stopping_block(blocks: Sequence[float], b: float, W0: float = 0.0) -> Optional[int]:
    """First 1-based subblock index where the clamped statistic reaches ``b``."""
    W = W0
    for j, z in enumerate(blocks, start=1):
        W = max(W + z, 0.0)
        if W >= b:
            return j
    return None


def sprt_stopping_block(blocks: Sequence[float], b: float) -> float:
    """First ``j`` with unclamped cumulative sum ``>= b``; ``math.inf`` if never."""
    s = 0.0
    for j, z in enumerate(blocks, start=1):
        s += z
        if s >= b:
            return j
    return math.inf


def _scs_trace(blocks: np.ndarray, L: int, b: float) -> Tuple[Optional[int], List[Tuple[int, float]]]:
    state = ScsState(L=L, b=b)
    trace = [(0, 0.0)]
    for z in blocks:
        state = scs_update(state, float(z))
        trace.append((state.i, state.W))
        if state.stopped_at is not None:
            break
    return state.stopped_at, trace


def _check_lengths(codeword, observations, L):
    n = len(codeword)
    if len(observations) != n:
        raise ValueError(f"{len(observations)} observations for a length-{n} codeword")
    if n % L:
        raise ValueError(f"codeword length {n} is not a multiple of L={L}")
    return n


def run_scs(codeword, observations, model: SensingModel, L: int, b: float, trace: bool = False):
    """SCS stopping time on one trace; ``n + 1`` when the threshold is never reached.

    With ``trace=True`` returns ``(N, [(i, W_i), ...])`` listing the statistic
    at every subblock boundary up to the stop.
    """
    n = _check_lengths(codeword, observations, L)
    blocks = block_llrs(model, codeword, np.asarray(observations), L)
    stop, tr = _scs_trace(blocks, L, b)
    N = n + 1 if stop is None else stop
    return (N, tr) if trace else N


def run_multi_state_scs(codeword, observations, models: Sequence[SensingModel], L: int, b: float) -> int:
    """Parallel SCS tests, one per alternative state; stops at the earliest alarm."""
    if not models:
        raise ValueError("need at least one alternative state")
    return min(run_scs(codeword, observations, m, L, b) for m in models)


def run_sprt(codeword, observations, model: SensingModel, L: int, b: float) -> float:
    """One-sided SPRT over subblocks; returns the stopping subblock index or ``math.inf``."""
    _check_lengths(codeword, observations, L)
    return sprt_stopping_block(block_llrs(model, codeword, np.asarray(observations), L), b)


def threshold_for_far(alpha: float, L: int) -> float:
    """SCS threshold ``b = |log alpha| + log L`` targeting false-alarm rate ``alpha``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return abs(math.log(alpha)) + math.log(L)


def write_trace_csv(path, trace: Iterable[Tuple[int, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "W"])
        for i, W in trace:
            w.writerow([i, repr(float(W))])
