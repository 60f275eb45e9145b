"""Closed-form cost model: FLOPs, space and inference-speed conditions.

Compares a dense ``m x n`` layer stored at reduced precision with its
full-precision factorization ``(m x k)(k x n)``. Exact inequalities are always
reported next to their large-dimension approximations.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from fractions import Fraction

from .embedding import choose_rank


@dataclass(frozen=True)
class HardwareCostModel:
    b_s: int = 32          # bits per full-precision weight
    b_q: int = 8           # bits per quantized weight
    t_s: float | None = None   # time per full-precision FLOP
    t_q: float | None = None   # time per low-precision FLOP

    def __post_init__(self):
        if not 0 < self.b_q < self.b_s:
            raise ValueError(f"need 0 < b_q < b_s, got b_q={self.b_q}, b_s={self.b_s}")
        if (self.t_s is None) != (self.t_q is None):
            raise ValueError("give both t_s and t_q or neither")
        if self.t_s is not None and not 0 < self.t_q <= self.t_s:
            raise ValueError(f"need 0 < t_q <= t_s, got t_q={self.t_q}, t_s={self.t_s}")

    @property
    def time_ratio(self) -> Fraction:
        """t_q / t_s; defaults to b_q / b_s (time per FLOP proportional to bits)."""
        if self.t_s is None:
            return Fraction(self.b_q, self.b_s)
        return Fraction(self.t_q).limit_denominator(10 ** 12) / \
            Fraction(self.t_s).limit_denominator(10 ** 12)


@dataclass(frozen=True)
class Condition:
    lhs: float
    rhs: float
    holds: bool


def matmul_flops(a: int, b: int, c: int) -> int:
    """FLOPs of an (a x b)(b x c) product: a*b*c multiplies plus a*(b-1)*c adds."""
    return (2 * b - 1) * a * c


def flops_dense(m: int, n: int) -> int:
    return matmul_flops(1, m, n)


def flops_factorized(m: int, n: int, k: int) -> int:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return matmul_flops(1, m, k) + matmul_flops(1, k, n)


def fewer_flops_threshold(m: int, n: int) -> Fraction:
    """Exact bound: the factorization needs fewer FLOPs iff k < 2mn / (2(m+n) - 1)."""
    return Fraction(2 * m * n, 2 * (m + n) - 1)


def fewer_flops_condition(m: int, n: int, k: int) -> dict:
    exact = fewer_flops_threshold(m, n)
    approx = Fraction(m * n, m + n)
    return {
        "holds": k < exact,
        "threshold": float(exact),
        "approx_holds": k < approx,
        "approx_threshold": float(approx),
        "f_q": flops_dense(m, n),
        "f_s": flops_factorized(m, n, k),
    }


def space_condition(p: float, hw: HardwareCostModel) -> Condition:
    """The factorization saves more space than quantization iff p < b_q / b_s."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    ratio = Fraction(hw.b_q, hw.b_s)
    return Condition(p, float(ratio), Fraction(p).limit_denominator(10 ** 9) < ratio)


def latency_condition(m: int, n: int, k: int, hw: HardwareCostModel) -> dict:
    """Faster-inference check: exact ``F_Q t_q > F_S t_s`` and the approximate ``p < t_q/t_s``.

    For the approximate form ``p`` is recovered from ``k`` as ``k(m+n)/(mn)``.
    """
    ratio = hw.time_ratio
    f_q, f_s = flops_dense(m, n), flops_factorized(m, n, k)
    # F_Q t_q > F_S t_s  <=>  F_Q / F_S > t_s / t_q
    exact_lhs = Fraction(f_q, f_s)
    p_eff = Fraction(k * (m + n), m * n)
    return {
        "exact_holds": exact_lhs > 1 / ratio,
        "exact_lhs": float(exact_lhs),
        "exact_rhs": float(1 / ratio),
        "approx_holds": p_eff < ratio,
        "approx_lhs": float(p_eff),
        "approx_rhs": float(ratio),
    }


@dataclass(frozen=True)
class FlopReport:
    p: float
    m: int
    n: int
    k: int
    f_q: int
    f_s: int
    flops: dict
    space: Condition
    latency: dict

    HEADER = ("p", "R", "m", "n", "k", "F_Q", "F_S", "fewer_flops_threshold",
              "fewer_flops_exact", "fewer_flops_approx", "space_rhs", "space_holds",
              "latency_exact_lhs", "latency_exact_rhs", "latency_exact",
              "latency_approx_lhs", "latency_approx")

    def row(self) -> tuple:
        return (repr(self.p), repr(1 - float(Fraction(self.p).limit_denominator(10 ** 9))),
                self.m, self.n, self.k, self.f_q, self.f_s,
                repr(self.flops["threshold"]), self.flops["holds"], self.flops["approx_holds"],
                repr(self.space.rhs), self.space.holds,
                repr(self.latency["exact_lhs"]), repr(self.latency["exact_rhs"]),
                self.latency["exact_holds"], repr(self.latency["approx_lhs"]),
                self.latency["approx_holds"])


def flop_report(p: float, m: int, n: int, hw: HardwareCostModel) -> FlopReport:
    k = choose_rank(p, m, n).k
    return FlopReport(p=p, m=m, n=n, k=k, f_q=flops_dense(m, n), f_s=flops_factorized(m, n, k),
                      flops=fewer_flops_condition(m, n, k), space=space_condition(p, hw),
                      latency=latency_condition(m, n, k, hw))


@dataclass(frozen=True)
class Timing:
    mean: float
    stddev: float
    median: float
    repeats: int


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        import contextlib
        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


def time_inference(model, dataset, repeats: int = 5, batch_size: int = 256) -> Timing:
    """Wall-clock eval-mode inference over ``dataset``; one warmup pass, then ``repeats``.

    ``model`` is anything with ``predict(list_of_token_arrays)``. BLAS is
    pinned to one thread for comparability.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    batch = [s.token_ids for s in dataset.sentences]
    if hasattr(model, "dequantized"):
        model = model.dequantized()
    samples = []
    with _single_thread():
        for i in range(repeats + 1):
            start = time.perf_counter()
            for j in range(0, len(batch), batch_size):
                model.predict(batch[j:j + batch_size])
            if i:
                samples.append(time.perf_counter() - start)
    std = statistics.stdev(samples) if len(samples) > 1 else 0.0
    return Timing(statistics.fmean(samples), std, statistics.median(samples), repeats)
