"""Constant subblock-composition codes (CSCC).

A codeword of length ``n = k*L`` is ``k`` subblocks of length ``L``; every
subblock of every codeword is a permutation of the same multiset of symbols.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .prob_core import Distribution, DistLike, as_distribution

DEFAULT_SYMBOL_CAP = 1 << 26

__all__ = [
    "SubblockType",
    "CsccCodebook",
    "CodebookTooLarge",
    "quantize_type",
    "sample_subblock",
    "generate_codebook",
    "rate_penalty",
    "sliding_window_check",
    "write_codebook",
    "read_codebook",
]


class CodebookTooLarge(MemoryError):
    pass


@dataclass(frozen=True)
class SubblockType:
    """Symbol counts of one subblock; ``counts`` sums to ``L``."""

    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if not counts or any(c < 0 for c in counts) or sum(counts) < 1:
            raise ValueError(f"invalid subblock counts {self.counts}")
        object.__setattr__(self, "counts", counts)

    @property
    def L(self) -> int:
        return sum(self.counts)

    @property
    def alphabet_size(self) -> int:
        return len(self.counts)

    @property
    def distribution(self) -> Distribution:
        return Distribution(np.asarray(self.counts, dtype=float) / self.L)

    @property
    def multiset(self) -> np.ndarray:
        return np.repeat(np.arange(self.alphabet_size), self.counts)

    def class_size(self) -> int:
        """Number of distinct arrangements, ``L! / prod(counts!)``."""
        size = math.factorial(self.L)
        for c in self.counts:
            size //= math.factorial(c)
        return size


def quantize_type(px: DistLike, L: int) -> SubblockType:
    """Largest-remainder rounding of ``L * px``; ties go to the lower symbol index."""
    if L < 1:
        raise ValueError("subblock length must be >= 1")
    p = as_distribution(px).probs
    scaled = L * p
    counts = np.floor(scaled + 1e-12).astype(int)
    short = L - counts.sum()
    if short > 0:
        rem = scaled - counts
        # stable sort on -rem keeps index order among ties
        order = np.argsort(-rem, kind="stable")
        counts[order[:short]] += 1
    return SubblockType(tuple(counts))


def sample_subblock(t: SubblockType, rng: np.random.Generator) -> np.ndarray:
    # every arrangement is hit by exactly prod(counts!) permutations -> uniform
    return rng.permutation(t.multiset)


@dataclass(frozen=True, eq=False)
class CsccCodebook:
    subblock_type: SubblockType
    k: int
    codewords: np.ndarray  # (num_messages, k*L) int
    seed: Optional[int] = None

    def __post_init__(self):
        cw = np.asarray(self.codewords, dtype=np.int64)
        if cw.ndim != 2 or cw.shape[1] != self.k * self.L:
            raise ValueError(f"codewords must have shape (M, {self.k * self.L}), got {cw.shape}")
        cw.setflags(write=False)
        object.__setattr__(self, "codewords", cw)

    @property
    def L(self) -> int:
        return self.subblock_type.L

    @property
    def n(self) -> int:
        return self.k * self.L

    @property
    def num_messages(self) -> int:
        return self.codewords.shape[0]

    @property
    def alphabet_size(self) -> int:
        return self.subblock_type.alphabet_size

    def __len__(self):
        return self.num_messages

    def __getitem__(self, m):
        return self.codewords[m]

    def subblock_compositions(self) -> np.ndarray:
        """Counts per (codeword, subblock, symbol)."""
        blocks = self.codewords.reshape(self.num_messages, self.k, self.L)
        return np.stack([(blocks == a).sum(axis=-1) for a in range(self.alphabet_size)], axis=-1)

    def composition_exact(self) -> bool:
        return bool(np.all(self.subblock_compositions() == np.asarray(self.subblock_type.counts)))


def generate_codebook(
    t: SubblockType,
    k: int,
    num_messages: int,
    rng: Union[np.random.Generator, int],
    symbol_cap: int = DEFAULT_SYMBOL_CAP,
) -> CsccCodebook:
    """Random CSCC: every subblock of every codeword i.i.d. uniform over the type class.

    Codewords are drawn with replacement, so duplicates are possible.
    """
    if k < 1 or num_messages < 1:
        raise ValueError("need k >= 1 and num_messages >= 1")
    total = num_messages * k * t.L
    if total > symbol_cap:
        raise CodebookTooLarge(f"{total} symbols exceeds cap {symbol_cap}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    base = np.broadcast_to(t.multiset, (num_messages * k, t.L))
    blocks = rng.permuted(base, axis=1)
    return CsccCodebook(t, k, blocks.reshape(num_messages, k * t.L), seed=seed)


def rate_penalty(t: SubblockType, u: float = 1.0) -> float:
    """Rate loss ``r(L, type)`` of a CSCC relative to ``I(type, channel)``, in nats.

    The last term keeps its printed ``ln 2`` factor; ``u`` in [0, 1] defaults
    to the conservative end.
    """
    L = t.L
    p = np.asarray(t.counts, dtype=float) / L
    pos = p[p > 0]
    s = pos.size
    return (
        (s - 1) * math.log(2 * math.pi * L) / (2 * L)
        + np.sum(np.log(pos)) / (2 * L)
        + u * s / (12 * L * math.log(2))
    )


def _window_ok(codeword: np.ndarray, p: np.ndarray, eps: float, w: int) -> bool:
    n = codeword.size
    onehot = codeword[:, None] == np.arange(p.size)[None, :]
    csum = np.vstack([np.zeros((1, p.size), dtype=np.int64), np.cumsum(onehot, axis=0)])
    counts = csum[w:] - csum[: n - w + 1]  # (n-w+1, |X|)
    dev = np.abs(counts / w - p[None, :])
    return bool(np.all(dev <= eps * p[None, :] + 1e-12))


def sliding_window_check(codeword, px: DistLike, eps: float, step: int = 1) -> Optional[int]:
    """Smallest window ``L0`` (a multiple of ``step``) that is ``eps``-typical everywhere.

    Every length-``L0`` window must satisfy ``|pi(a|window) - px(a)| <= eps*px(a)``
    for all symbols ``a``.  Returns ``None`` when no ``L0 <= n`` works.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    codeword = np.asarray(codeword, dtype=np.int64)
    p = as_distribution(px).probs
    if codeword.size and (codeword.max() >= p.size or np.any(p[np.unique(codeword)] == 0)):
        raise ValueError("codeword uses symbols outside the support of px")
    for w in range(step, codeword.size + 1, step):
        if _window_ok(codeword, p, eps, w):
            return w
    return None


# --------------------------------------------------------------------------
# text format: a "# cscc" header line, optional "#" comments, one codeword per line


def write_codebook(path, codebook: CsccCodebook, comments=()) -> None:
    t = codebook.subblock_type
    seed = "none" if codebook.seed is None else str(codebook.seed)
    with open(path, "w") as fh:
        fh.write(
            f"# cscc L={t.L} k={codebook.k} messages={codebook.num_messages} "
            f"counts={','.join(map(str, t.counts))} seed={seed}\n"
        )
        for c in comments:
            fh.write(f"# {c}\n")
        for row in codebook.codewords:
            fh.write(" ".join(map(str, row.tolist())) + "\n")


def read_codebook(path) -> CsccCodebook:
    """Load a codebook file and verify every subblock composition."""
    header = None
    rows = []
    with open(path) as fh:
        for no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line[1:].split()[:1] == ["cscc"]:
                    header = dict(kv.split("=", 1) for kv in line[1:].split()[1:])
                continue
            try:
                rows.append([int(v) for v in line.split()])
            except ValueError:
                raise ValueError(f"{path}:{no}: non-integer symbol") from None
    if header is None:
        raise ValueError(f"{path}: missing '# cscc' header")
    try:
        t = SubblockType(tuple(int(c) for c in header["counts"].split(",")))
        k, m = int(header["k"]), int(header["messages"])
        seed = None if header.get("seed", "none") == "none" else int(header["seed"])
    except (KeyError, ValueError) as e:
        raise ValueError(f"{path}: malformed header ({e})") from None
    if len(rows) != m or any(len(r) != k * t.L for r in rows):
        raise ValueError(f"{path}: expected {m} codewords of length {k * t.L}")
    cb = CsccCodebook(t, k, np.array(rows, dtype=np.int64).reshape(m, k * t.L), seed=seed)
    if not cb.composition_exact():
        raise ValueError(f"{path}: subblock compositions differ from counts {t.counts}")
    return cb
