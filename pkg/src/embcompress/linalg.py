"""Dense matrix helpers and a one-sided Jacobi SVD.

Matrices are plain 2-D ``float64`` numpy arrays (C order, i.e. row-major).
:func:`as_matrix` is the gatekeeper that enforces shape and finiteness.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = np.finfo(np.float64).eps
MAX_SWEEPS = 60


class LinalgError(ValueError):
    pass


class SvdConvergenceError(LinalgError):
    def __init__(self, sweeps: int, residual: float):
        super().__init__(
            f"Jacobi SVD did not converge after {sweeps} sweeps "
            f"(off-diagonal residual {residual:.3e})")
        self.sweeps = sweeps
        self.residual = residual


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a finite, C-contiguous 2-D float64 array."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise LinalgError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise LinalgError(f"{name} contains non-finite entries")
    return m


@dataclass
class FlopCounter:
    """Counts scalar multiplies and adds performed by :func:`matmul`."""

    multiply_adds: int = 0
    adds: int = 0
    enabled: bool = True

    @property
    def flops(self) -> int:
        return self.multiply_adds + self.adds

    def reset(self):
        self.multiply_adds = 0
        self.adds = 0


def matmul(a: np.ndarray, b: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise LinalgError(f"cannot multiply shapes {a.shape} and {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    if counter is not None and counter.enabled:
        rows, inner = a.shape
        cols = b.shape[1]
        counter.multiply_adds += rows * inner * cols
        counter.adds += rows * (inner - 1) * cols
    if not np.all(np.isfinite(out)):
        raise LinalgError("matmul produced non-finite values")
    return out


def frobenius_norm(m: np.ndarray) -> float:
    # scale first so huge entries cannot overflow the sum of squares
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    if scale == 0.0:
        return 0.0
    return scale * float(np.sqrt(np.sum((m / scale) ** 2)))


@dataclass
class SvdResult:
    u: np.ndarray       # m x r
    sigma: np.ndarray   # r, descending
    vt: np.ndarray      # r x n

    @property
    def rank_capacity(self) -> int:
        return len(self.sigma)

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def householder_qr(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR of a tall matrix (m >= n) by Householder reflections."""
    m, n = a.shape
    if m < n:
        raise LinalgError(f"householder_qr needs rows >= cols, got {a.shape}")
    # work on the transpose so each reflector touches contiguous rows
    rt = np.array(a.T, order="C")
    reflectors = []
    for j in range(n):
        x = rt[j, j:]
        alpha = frobenius_norm(x[None, :])
        if alpha == 0.0:
            reflectors.append(None)
            continue
        v = x.copy()
        v[0] += np.copysign(alpha, x[0])
        v /= frobenius_norm(v[None, :])
        block = rt[j:, j:]
        block -= np.outer(2.0 * (block @ v), v)
        reflectors.append(v)
    qt = np.zeros((n, m))
    qt[np.arange(n), np.arange(n)] = 1.0
    for j in range(n - 1, -1, -1):
        v = reflectors[j]
        if v is not None:
            block = qt[:, j:]
            block -= np.outer(2.0 * (block @ v), v)
    return np.ascontiguousarray(qt.T), np.triu(rt.T[:n, :])


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n-1 rounds (n even) of n/2 disjoint pairs covering all pairs."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_columns(a: np.ndarray, null_norm: float) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalize the columns of ``a`` (m >= n) in place; return (a, v).

    Columns with norm at or below ``null_norm`` are treated as numerically zero.
    """
    m, n = a.shape
    v = np.eye(n)
    if n == 1:
        return a, v
    tol = max(m, 10) * EPS
    schedule = _round_robin(n)
    residual = np.inf
    for sweep in range(1, MAX_SWEEPS + 1):
        residual = 0.0
        rotated = False
        for p, q in schedule:
            ap, aq = a[:, p], a[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            norms = np.sqrt(alpha * beta)
            live = (np.sqrt(alpha) > null_norm) & (np.sqrt(beta) > null_norm)
            with np.errstate(divide="ignore", invalid="ignore"):
                rel = np.where(live, np.abs(gamma) / norms, 0.0)
            residual = max(residual, float(rel.max()))
            act = rel > tol
            if not act.any():
                continue
            rotated = True
            g = np.where(act, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(act, c, 1.0)
            s = np.where(act, s, 0.0)
            a[:, p], a[:, q] = c * ap - s * aq, s * ap + c * aq
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            return a, v
    raise SvdConvergenceError(MAX_SWEEPS, residual)


def _complete_basis(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not flagged ``good`` with an orthonormal complement."""
    m, r = u.shape
    basis = [u[:, j] for j in range(r) if good[j]]
    candidate = 0
    for j in range(r):
        if good[j]:
            continue
        while True:
            e = np.zeros(m)
            e[candidate % m] = 1.0
            candidate += 1
            for _ in range(2):
                for b in basis:
                    e -= (b @ e) * b
            norm = np.sqrt(e @ e)
            if norm > 0.5:
                break
        e /= norm
        u[:, j] = e
        basis.append(e)
    return u


def _svd_tall(w: np.ndarray) -> SvdResult:
    m, n = w.shape
    if m > n:
        q, r = householder_qr(w)
    else:
        q, r = None, w.copy()
    null_norm = max(m, n) * EPS * frobenius_norm(w)
    a, v = _jacobi_columns(r, null_norm)
    sigma = np.sqrt(np.einsum("ij,ij->j", a, a))
    order = np.argsort(-sigma, kind="stable")
    sigma, a, v = sigma[order], a[:, order], v[:, order]
    good = sigma > null_norm
    u = np.zeros_like(a)
    u[:, good] = a[:, good] / sigma[good]
    u = _complete_basis(u, good)
    if q is not None:
        u = q @ u
    return SvdResult(u=u, sigma=sigma, vt=np.ascontiguousarray(v.T))


def svd(w: np.ndarray) -> SvdResult:
    """Thin SVD ``w = u @ diag(sigma) @ vt`` with r = min(m, n) singular values.

    Deterministic for a fixed input. Raises :class:`SvdConvergenceError` if the
    Jacobi sweeps do not converge.
    """
    w = as_matrix(w, "svd input")
    if w.shape[0] >= w.shape[1]:
        return _svd_tall(w)
    res = _svd_tall(np.ascontiguousarray(w.T))
    return SvdResult(u=np.ascontiguousarray(res.vt.T), sigma=res.sigma,
                     vt=np.ascontiguousarray(res.u.T))


def truncate_svd(s: SvdResult, k: int) -> SvdResult:
    if not 1 <= k <= len(s.sigma):
        raise LinalgError(f"truncation rank k={k} outside [1, {len(s.sigma)}]")
    return SvdResult(u=np.ascontiguousarray(s.u[:, :k]), sigma=s.sigma[:k].copy(),
                     vt=np.ascontiguousarray(s.vt[:k, :]))
