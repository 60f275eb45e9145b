"""Embedding tables and their low-rank compression.

Tables are stored vocab x dim, so a lookup is a row slice. The rank formula is
symmetric in the two dimensions, so ``m = vocab_size`` and ``n = dim``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import Vocabulary
from .linalg import as_matrix, svd, truncate_svd


class EmbeddingError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    weights: np.ndarray

    def __post_init__(self):
        self.weights = as_matrix(self.weights, "embedding weights")

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def num_params(self) -> int:
        return self.weights.size

    def lookup(self, i: int) -> np.ndarray:
        if not 0 <= i < self.vocab_size:
            raise EmbeddingError(f"token index {i} outside [0, {self.vocab_size})")
        return self.weights[i]


@dataclass
class FactorizedEmbedding:
    w_a: np.ndarray   # vocab x k, becomes the embedding layer
    w_b: np.ndarray   # k x dim, the linear layer that follows

    def __post_init__(self):
        self.w_a = as_matrix(self.w_a, "w_a")
        self.w_b = as_matrix(self.w_b, "w_b")
        if self.w_a.shape[1] != self.w_b.shape[0]:
            raise EmbeddingError(f"factor shapes {self.w_a.shape} and {self.w_b.shape} disagree")

    @property
    def k(self) -> int:
        return self.w_a.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.w_a.shape[0]

    @property
    def dim(self) -> int:
        return self.w_b.shape[1]

    @property
    def num_params(self) -> int:
        return self.w_a.size + self.w_b.size

    def lookup(self, i: int) -> np.ndarray:
        if not 0 <= i < self.vocab_size:
            raise EmbeddingError(f"token index {i} outside [0, {self.vocab_size})")
        return self.w_a[i] @ self.w_b

    def dense(self) -> np.ndarray:
        return self.w_a @ self.w_b


@dataclass(frozen=True)
class CompressionPlan:
    m: int
    n: int
    p: float
    k: int

    @property
    def r_pct(self) -> float:
        return 1.0 - self.p

    @property
    def compressed_params(self) -> int:
        return self.k * (self.m + self.n)

    @property
    def original_params(self) -> int:
        return self.m * self.n


def _as_fraction(p: float) -> Fraction:
    # read p as the decimal the caller wrote, so 0.1 * 3000000 is exactly 300000
    return Fraction(p).limit_denominator(10 ** 9)


def choose_rank(p: float, m: int, n: int) -> CompressionPlan:
    """Rank ``k = floor(p*m*n / (m+n))`` keeping a fraction ``p`` of the m*n parameters.

    A floor of zero is clamped up to 1.
    """
    if not 0.0 < p <= 1.0:
        raise EmbeddingError(f"retained fraction p must lie in (0, 1], got {p}")
    if m < 1 or n < 1:
        raise EmbeddingError(f"dimensions must be positive, got m={m}, n={n}")
    k = math.floor(_as_fraction(p) * m * n / (m + n))
    return CompressionPlan(m=m, n=n, p=p, k=max(1, k))


def p_from_reduction(r: float) -> float:
    """Retained fraction for a size reduction ``R = 1 - p`` (``R`` in [0, 1))."""
    if not 0.0 <= r < 1.0:
        raise EmbeddingError(f"reduction R must lie in [0, 1), got {r}")
    return float(1 - _as_fraction(r))


def _truncated(weights: np.ndarray, p: float):
    plan = choose_rank(p, *weights.shape)
    k = min(plan.k, min(weights.shape))
    return plan, truncate_svd(svd(weights), k)


def factorize(table: EmbeddingTable, p: float) -> FactorizedEmbedding:
    """Split ``W`` into ``w_a = U_k`` and ``w_b = diag(sigma_k) Vt_k``."""
    _, s = _truncated(table.weights, p)
    return FactorizedEmbedding(w_a=s.u, w_b=s.sigma[:, None] * s.vt)


def offline_compress(table: EmbeddingTable, p: float) -> EmbeddingTable:
    """Project the table onto its top-k right singular vectors: rows of ``U_k diag(sigma_k)``.

    The result has only ``k`` columns; models built on it size their first
    dense layer to ``k`` and have no ``w_b``.
    """
    _, s = _truncated(table.weights, p)
    return EmbeddingTable(s.u * s.sigma)


def random_init(vocab_size: int, dim: int, seed: int) -> EmbeddingTable:
    """Uniform entries in ``[-0.5/dim, 0.5/dim]``, deterministic per seed."""
    rng = np.random.default_rng(seed)
    bound = 0.5 / dim
    return EmbeddingTable(rng.uniform(-bound, bound, size=(vocab_size, dim)))


def load_glove_text(path, vocab: Vocabulary, seed: int = 0):
    """Read a GloVe-style text file into a table aligned with ``vocab``.

    Vocabulary tokens missing from the file keep their random initialization.
    Returns ``(table, coverage)`` where coverage is the fraction of
    vocabulary rows found in the file.
    """
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise EmbeddingError(f"{path}:{lineno}: no vector values")
            elif len(values) != dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: expected {dim} values, found {len(values)}")
            try:
                vec = np.asarray(values, dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError(f"{path}:{lineno}: non-finite value")
            if token in vocab:
                vectors.setdefault(token, vec)
    if dim is None:
        raise EmbeddingError(f"{path}: empty embedding file")
    table = random_init(len(vocab), dim, seed)
    for token, vec in vectors.items():
        table.weights[vocab.index(token)] = vec
    return table, len(vectors) / len(vocab)

