"""Fisher information of the birth rate, accumulated slice by slice.

The scalar information is ``sum_y dL(y)^2 / L(y)``, grouped by total
observation count ``S = |y|``; the series is summed one slice at a time
until the accumulator stops changing at working precision for two
consecutive slices (one slice would already exhaust precision, the
second guards against non-monotone early slices), or until ``s_max``
slices have been taken.

Determinism contract
--------------------
Slice terms are reduced over a fixed grid of ``CHUNK``-rank chunks: each
chunk is folded with numpy's pairwise reduction, and the chunk partials
are combined in chunk order with Neumaier compensation.  Neither the
chunk grid nor any arithmetic depends on the worker count or on how
many evaluations are batched together, so a Fisher information value is
bitwise identical for 1 or W workers.

``p = 1`` is the fully observed process, handled by the closed form
(repeated observation times are collapsed first: at ``p = 1`` a repeat
carries no extra information).  ``p = 0`` carries no information at all.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import lattice, pbp
from .genpoly import MODE_FIXED_X0_1, MODE_GENERAL_X0, assemble
from .likelihood import CHUNK, _SliceEngine, likelihood_bruteforce
from .model import ModelParams

__all__ = [
    "TerminationPolicy",
    "FisherResult",
    "fisher_info",
    "fisher_info_approx_n2",
    "fisher_info_bruteforce",
]


@dataclass(frozen=True)
class TerminationPolicy:
    """Stopping rule for the slice series."""

    s_max: int = 100_000
    stable_slices: int = 2

    def __post_init__(self) -> None:
        if self.s_max < 1 or self.stable_slices < 1:
            raise ValueError("termination policy fields must be positive")


DEFAULT_POLICY = TerminationPolicy()

TERMINATED_CONVERGED = "converged"
TERMINATED_SLICE_CAP = "slice_cap"


@dataclass(frozen=True)
class FisherResult:
    """Accumulated value, the number of slices taken, the value of the
    last slice, and how the accumulation stopped."""

    value: float
    slices_used: int
    last_slice_value: float
    terminated: str

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError(f"Fisher information cannot be negative, got {self.value}")


# ---------------------------------------------------------------------------
# Deterministic reduction
# ---------------------------------------------------------------------------


def _chunk_partials(terms: np.ndarray) -> np.ndarray:
    """Pairwise-fold each fixed chunk of columns; shape (G, n_chunks)."""
    g, w = terms.shape
    spans = range(0, w, CHUNK)
    out = np.empty((g, len(spans)), dtype=terms.dtype)
    for k, lo in enumerate(spans):
        out[:, k] = np.add.reduce(terms[:, lo : lo + CHUNK], axis=1)
    return out


def _neumaier_combine(partials: np.ndarray) -> np.ndarray:
    """Compensated left-to-right sum of chunk partials, per row."""
    s = partials[:, 0].copy()
    comp = np.zeros_like(s)
    for k in range(1, partials.shape[1]):
        x = partials[:, k]
        t = s + x
        swap = np.abs(s) >= np.abs(x)
        comp += np.where(swap, (s - t) + x, (x - t) + s)
        s = t
    return s + comp


def _slice_terms(l_arr: np.ndarray, dl_arr: np.ndarray) -> np.ndarray:
    """Per-entry contributions dL^2 / L with L == 0 contributing zero."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(l_arr > 0.0, dl_arr * dl_arr / l_arr, 0.0)
    return terms


def _det_row_sums(l_arr: np.ndarray, dl_arr: np.ndarray) -> np.ndarray:
    return _neumaier_combine(_chunk_partials(_slice_terms(l_arr, dl_arr)))


# ---------------------------------------------------------------------------
# Series evaluation
# ---------------------------------------------------------------------------


def _x0_range(degree: int, x0: int, n: int) -> tuple[int, int]:
    """Contiguous rank range of entries with first coordinate ``x0``
    inside slice ``degree`` of the (n+1)-dimensional lattice."""
    if degree < x0:
        return 0, 0
    lo = sum(lattice.slice_size(degree - v, n) for v in range(x0))
    return lo, lo + lattice.slice_size(degree - x0, n)


def _fisher_batch(
    times_mat: np.ndarray,
    lam: float,
    p: float,
    x0: int = 1,
    policy: TerminationPolicy = DEFAULT_POLICY,
    workers: int = 1,
    dtype=np.float64,
):
    """Fisher information series for G schedules sharing (lam, p, x0).

    Returns ``(values, slices_used, last_slice, capped)`` arrays.
    """
    g, n = times_mat.shape
    mode = MODE_FIXED_X0_1 if x0 == 1 else MODE_GENERAL_X0
    params = ModelParams(lam=lam, p=p, x0=x0)
    coeffs = [assemble(times_mat[i], params, mode) for i in range(g)]
    engine = _SliceEngine(coeffs, dtype=dtype)

    values = np.zeros(g)
    slices_used = np.zeros(g, dtype=np.int64)
    last_slice = np.zeros(g)
    capped = np.zeros(g, dtype=bool)
    done = np.zeros(g, dtype=bool)

    live = np.arange(g)  # original row of each engine row
    acc = np.zeros(g, dtype=dtype)
    streak = np.zeros(g, dtype=np.int64)

    executor = None
    pool_ctx = None
    if workers > 1:
        pool_ctx = ThreadPoolExecutor(max_workers=workers)
        executor = pool_ctx
    try:
        min_degree = x0 if mode == MODE_GENERAL_X0 else 0
        for degree in range(policy.s_max):
            l_arr, dl_arr = engine.advance(executor)
            if mode == MODE_GENERAL_X0:
                lo, hi = _x0_range(degree, x0, n)
                sv = (
                    _det_row_sums(l_arr[:, lo:hi], dl_arr[:, lo:hi])
                    if hi > lo
                    else np.zeros(len(live), dtype=dtype)
                )
            else:
                sv = _det_row_sums(l_arr, dl_arr)
            new_acc = acc + sv
            unchanged = (new_acc == acc) & (degree >= min_degree)
            acc = new_acc
            streak = np.where(unchanged, streak + 1, 0)
            finished = streak >= policy.stable_slices
            if finished.any():
                rows = live[finished]
                values[rows] = acc[finished]
                slices_used[rows] = degree + 1
                last_slice[rows] = sv[finished]
                done[rows] = True
                keep = ~finished
                if keep.any():
                    engine.select_rows(keep)
                    live, acc, streak = live[keep], acc[keep], streak[keep]
                else:
                    break
        if live.size and not done[live].all():
            rows = live
            values[rows] = acc
            slices_used[rows] = policy.s_max
            capped[rows] = True
    finally:
        if pool_ctx is not None:
            pool_ctx.shutdown(wait=True)
    return values, slices_used, last_slice, capped


def fisher_info(
    times: Sequence[float],
    params: ModelParams,
    policy: Optional[TerminationPolicy] = None,
    workers: int = 1,
    dtype=np.float64,
) -> FisherResult:
    """Fisher information of the birth rate for one observation schedule."""
    policy = policy or DEFAULT_POLICY
    t = tuple(float(v) for v in times)
    if params.p == 0.0:
        return FisherResult(0.0, 0, 0.0, TERMINATED_CONVERGED)
    if params.p == 1.0:
        distinct = tuple(v for i, v in enumerate(t) if i == 0 or v > t[i - 1])
        value = pbp.pbp_fisher_info(params.x0, distinct, params.lam)
        return FisherResult(value, 0, 0.0, TERMINATED_CONVERGED)
    values, used, last, capped = _fisher_batch(
        np.asarray(t, dtype=float)[None, :],
        params.lam,
        params.p,
        params.x0,
        policy,
        workers,
        dtype,
    )
    return FisherResult(
        value=float(values[0]),
        slices_used=int(used[0]),
        last_slice_value=float(last[0]),
        terminated=TERMINATED_SLICE_CAP if capped[0] else TERMINATED_CONVERGED,
    )


# ---------------------------------------------------------------------------
# Closed-form two-observation approximation
# ---------------------------------------------------------------------------


def _approx_single(t: float, lam: float, p: float) -> float:
    """Limit of the two-observation approximation as t1 -> 0."""
    q = 1.0 - p
    theta = math.exp(-lam * t)
    return p * t * t * (p + q * (1.0 - theta) * theta) / ((1.0 - theta) * (p + q * theta) ** 2)


def _approx_tied(t: float, lam: float, p: float) -> float:
    """Limit of the two-observation approximation as t2 -> t1 = t."""
    q = 1.0 - p
    theta = math.exp(-lam * t)
    w = p + q * theta
    # the q^2 of the squared bracket cancels one q below; written with the
    # single surviving q factor so p = 1 stays finite
    term1 = (
        (1.0 + p / theta)
        * p
        * (p + q * w - q * w * w)
        * q
        * (t * theta) ** 2
        / (w * w * (p + p * q + q * q * theta) ** 2 * (1.0 - theta))
    )
    return term1 + _approx_single(t, lam, p)


def fisher_info_approx_n2(
    t1: float, t2: float, lam: float, p: float, delta: float = 1e-9
) -> float:
    """Closed-form approximation of the two-observation Fisher information.

    Evaluates the three-term rational expression in the decay factors
    ``exp(-lam*t1)``, ``exp(-lam*t2)`` and ``exp(-lam*(t2-t1))``.  The
    expression is indeterminate at ``t1 = t2``, ``t1 = 0`` and
    ``t2 = 0``; inputs within ``delta`` of those lines are routed to the
    corresponding limit expressions (0 when both times vanish).  At
    ``p = 1`` the value coincides exactly with the fully observed closed
    form.
    """
    if not (0.0 <= t1 <= t2):
        raise ValueError(f"need 0 <= t1 <= t2, got ({t1}, {t2})")
    if not (0.0 < p <= 1.0):
        raise ValueError(f"detection probability must lie in (0, 1], got {p}")
    if not (lam > 0):
        raise ValueError(f"birth rate must be positive, got {lam}")
    if t2 <= delta:
        return 0.0
    if t1 <= delta:
        return _approx_single(t2, lam, p)
    if t2 - t1 <= delta:
        return _approx_tied(t1, lam, p)

    q = 1.0 - p
    th1 = math.exp(-lam * t1)
    th2 = math.exp(-lam * t2)
    ups = math.exp(-lam * (t2 - t1))
    a = p * ups + q * th2
    term1 = (
        (1.0 + p / th1)
        * p
        * (p + q * a - q * a * a)
        * ((t2 - t1) * p + q * t2 * th1) ** 2
        / ((p + q * th1) ** 2 * (p + p * q * ups + q * q * th2) ** 2 * (1.0 - a))
    )
    term2 = (
        (p / (p + q * th1))
        * p
        * (t2 - t1) ** 2
        * (p + q * (1.0 - ups) * ups)
        / ((1.0 - ups) * (p + q * ups) ** 2)
    )
    term3 = (
        p * t1 * t1 * (p + q * (1.0 - th1) * th1) / ((1.0 - th1) * (p + q * th1) ** 2)
    )
    return term1 - term2 + term3


# ---------------------------------------------------------------------------
# Brute-force cross-check
# ---------------------------------------------------------------------------


def fisher_info_bruteforce(
    times: Sequence[float],
    params: ModelParams,
    degree_cap: int = 40,
    x_cap: Optional[int] = None,
) -> float:
    """Truncated direct evaluation of the information series using the
    brute-force likelihood oracle; independent of the slice recurrence."""
    n = len(times)
    total = 0.0
    for degree in range(degree_cap + 1):
        for row in lattice.compositions_matrix(degree, n):
            like, dlike = likelihood_bruteforce(tuple(int(v) for v in row), times, params, x_cap)
            if like > 0.0:
                total += dlike * dlike / like
    return total
