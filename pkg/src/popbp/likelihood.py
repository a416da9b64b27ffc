"""Likelihood and its rate derivative over degree slices.

The observation-vector likelihood ``L(y)`` satisfies a linear recurrence
with constant coefficients: writing ``q_c`` for the coefficients of the
denominator polynomial and ``p_y`` for the numerator coefficients,

    L(y)  = p̂_y + sum_{c != 0} q̂_c L(y - c)
    dL(y) = ( p'_y + sum_{all c} q'_c L(y - c)
                   + sum_{c != 0} q_c dL(y - c) ) / (1 - q_0)

where hats denote pre-division by ``1 - q_0`` and a shift off the
lattice contributes zero.  Since every ``c`` is a 0/1 pattern, slice
``S`` depends only on slices ``S-1 .. S-n``; a ring buffer of depth
``n + 1`` therefore suffices.  The ``c = 0`` derivative term multiplies
the value from the slice under construction, which is why ``L`` is
completed before ``dL`` for each entry.

Entries of a slice are mutually independent, so they are processed in
fixed chunks of ``CHUNK`` ranks.  The chunk grid never depends on the
worker count, and each entry sees the same arithmetic sequence whether
chunks run serially or on a thread pool, so results are bitwise
reproducible for any worker count.

:func:`likelihood_bruteforce` is the independent oracle: it evaluates
the defining nested sums over monotone population paths directly
(truncated at ``x_cap``), never touching the recurrence.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np
import scipy.stats as st

from . import lattice
from .genpoly import (
    MODE_FIXED_X0_1,
    MODE_GENERAL_X0,
    RecurrenceCoefficients,
    assemble,
)
from .model import ModelParams

__all__ = [
    "CHUNK",
    "SliceBuffer",
    "advance_slice",
    "iter_slices",
    "likelihood_point",
    "likelihood_bruteforce",
    "likelihood_mass",
    "NonFiniteSliceError",
]

CHUNK = 4096  # fixed work/reduction chunk; independent of worker count


class NonFiniteSliceError(ArithmeticError):
    """A slice entry came out NaN or infinite."""

    def __init__(self, degree: int, rank_: int):
        super().__init__(f"non-finite likelihood value at slice {degree}, rank {rank_}")
        self.degree = degree
        self.rank = rank_


def _stack_coefficients(coeffs: Sequence[RecurrenceCoefficients], dtype) -> dict:
    """Stack per-schedule coefficient tables into (G, 2**m) arrays."""
    first = coeffs[0]
    if any(c.mode != first.mode or c.nvars != first.nvars for c in coeffs):
        raise ValueError("all coefficient bundles in a batch must share mode and size")
    return {
        "qhat": np.stack([c.qhat for c in coeffs]).astype(dtype),
        "numhat": np.stack([c.numhat for c in coeffs]).astype(dtype),
        "q": np.stack([c.q.coeffs for c in coeffs]).astype(dtype),
        "dq": np.stack([c.dq.coeffs for c in coeffs]).astype(dtype),
        "dnum": np.stack([c.dnum.coeffs for c in coeffs]).astype(dtype),
        "divisor": np.array([c.divisor for c in coeffs], dtype=dtype),
    }


def _fill_chunk(out_l, out_dl, lo, hi, tables, sources, arrs) -> None:
    """Compute ranks [lo, hi) of the new slice for every batch row."""
    g = out_l.shape[0]
    width = hi - lo
    dtype = out_l.dtype
    l_acc = np.zeros((g, width), dtype=dtype)
    dl_acc = np.zeros((g, width), dtype=dtype)

    if tables.binary_ranks.size:
        sel = (tables.binary_ranks >= lo) & (tables.binary_ranks < hi)
        if sel.any():
            cols = tables.binary_ranks[sel] - lo
            codes = tables.binary_codes[sel]
            l_acc[:, cols] = arrs["numhat"][:, codes]
            dl_acc[:, cols] = arrs["dnum"][:, codes]

    for code, idx_full in tables.idx.items():
        src_l, src_dl = sources[int(code).bit_count() - 1]
        idx = idx_full[lo:hi]
        invalid = idx < 0
        safe = np.where(invalid, 0, idx)
        g_l = src_l[:, safe]
        g_dl = src_dl[:, safe]
        if invalid.any():
            g_l[:, invalid] = 0.0
            g_dl[:, invalid] = 0.0
        l_acc += arrs["qhat"][:, code, None] * g_l
        dl_acc += arrs["dq"][:, code, None] * g_l
        dl_acc += arrs["q"][:, code, None] * g_dl

    dl_acc += arrs["dq"][:, 0, None] * l_acc
    dl_acc /= arrs["divisor"][:, None]
    out_l[:, lo:hi] = l_acc
    out_dl[:, lo:hi] = dl_acc


def _compute_slice(degree, m, sources, arrs, dtype, executor=None):
    """New slice arrays of shape (G, slice_size) for the given degree."""
    tables = lattice.get_slice_tables(m, degree)
    g = arrs["qhat"].shape[0]
    out_l = np.empty((g, tables.size), dtype=dtype)
    out_dl = np.empty((g, tables.size), dtype=dtype)
    spans = [(lo, min(lo + CHUNK, tables.size)) for lo in range(0, tables.size, CHUNK)]
    if executor is not None and len(spans) > 1:
        list(
            executor.map(
                lambda span: _fill_chunk(out_l, out_dl, *span, tables, sources, arrs),
                spans,
            )
        )
    else:
        for lo, hi in spans:
            _fill_chunk(out_l, out_dl, lo, hi, tables, sources, arrs)
    if not (np.isfinite(out_l).all() and np.isfinite(out_dl).all()):
        bad = np.flatnonzero(~(np.isfinite(out_l).all(axis=0) & np.isfinite(out_dl).all(axis=0)))
        raise NonFiniteSliceError(degree, int(bad[0]))
    return out_l, out_dl


class _SliceEngine:
    """Batched slice iterator over G schedules sharing one lattice shape."""

    def __init__(self, coeffs: Sequence[RecurrenceCoefficients], dtype=np.float64):
        self.m = coeffs[0].nvars
        self.dtype = np.dtype(dtype)
        self.arrs = _stack_coefficients(coeffs, self.dtype)
        self.ring: list[tuple[np.ndarray, np.ndarray]] = []
        self.degree = -1

    @property
    def rows(self) -> int:
        return self.arrs["qhat"].shape[0]

    def advance(self, executor=None) -> tuple[np.ndarray, np.ndarray]:
        new = _compute_slice(self.degree + 1, self.m, self.ring, self.arrs, self.dtype, executor)
        self.degree += 1
        self.ring.insert(0, new)
        del self.ring[self.m :]
        return new

    def select_rows(self, keep: np.ndarray) -> None:
        """Drop batch rows (used to compact converged rows); per-row
        results are unaffected because all arithmetic is elementwise."""
        self.arrs = {k: v[keep] for k, v in self.arrs.items()}
        self.ring = [(l[keep], dl[keep]) for l, dl in self.ring]


@dataclass(frozen=True)
class SliceBuffer:
    """Ring of the ``n + 1`` most recent slices of one lattice.

    ``ring[d]`` holds the ``(L, dL)`` arrays of slice ``current_degree - d``
    in rank order; a fresh buffer (``current_degree == -1``) has an empty
    ring.
    """

    n: int
    current_degree: int
    ring: tuple[tuple[np.ndarray, np.ndarray], ...]

    def values(self, d: int = 0) -> tuple[np.ndarray, np.ndarray]:
        return self.ring[d]


def new_slice_buffer(coeffs: RecurrenceCoefficients) -> SliceBuffer:
    return SliceBuffer(n=coeffs.nvars, current_degree=-1, ring=())


def advance_slice(
    buf: SliceBuffer,
    coeffs: RecurrenceCoefficients,
    workers: int = 1,
    dtype=np.float64,
) -> SliceBuffer:
    """Fill the next degree slice and rotate the ring."""
    if buf.n != coeffs.nvars:
        raise ValueError("buffer and coefficients disagree on lattice dimension")
    arrs = _stack_coefficients([coeffs], np.dtype(dtype))
    sources = [(l[None, :], dl[None, :]) for l, dl in buf.ring]
    degree = buf.current_degree + 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out_l, out_dl = _compute_slice(degree, buf.n, sources, arrs, np.dtype(dtype), pool)
    else:
        out_l, out_dl = _compute_slice(degree, buf.n, sources, arrs, np.dtype(dtype))
    ring = ((out_l[0], out_dl[0]),) + buf.ring[: buf.n]
    return SliceBuffer(n=buf.n, current_degree=degree, ring=ring)


def _mode_for(params: ModelParams, mode: Optional[str]) -> str:
    if mode is not None:
        return mode
    return MODE_FIXED_X0_1 if params.x0 == 1 else MODE_GENERAL_X0


def iter_slices(
    times: Sequence[float],
    params: ModelParams,
    mode: Optional[str] = None,
    max_degree: Optional[int] = None,
    workers: int = 1,
    dtype=np.float64,
) -> Iterator[SliceBuffer]:
    """Yield slice buffers of increasing degree (0, 1, 2, ...)."""
    if not (0.0 <= params.p < 1.0):
        raise ValueError("the slice recurrence requires p < 1; use the exact "
                         "fully-observed formulas at p = 1")
    coeffs = assemble(times, params, _mode_for(params, mode))
    buf = new_slice_buffer(coeffs)
    degree = 0
    while max_degree is None or degree <= max_degree:
        buf = advance_slice(buf, coeffs, workers=workers, dtype=dtype)
        yield buf
        degree += 1


def likelihood_point(
    y: Sequence[int] | lattice.Composition,
    times: Sequence[float],
    params: ModelParams,
    workers: int = 1,
    dtype=np.float64,
) -> tuple[float, float]:
    """Likelihood and rate derivative of one observation vector.

    With ``params.x0 > 1`` the recurrence runs on the ``(x0, y)``
    lattice and the entry with first coordinate ``x0`` is read out.
    """
    parts = tuple(y.parts if isinstance(y, lattice.Composition) else (int(v) for v in y))
    if len(parts) != len(times):
        raise ValueError(f"observation vector length {len(parts)} != schedule length {len(times)}")
    if any(v < 0 for v in parts):
        raise ValueError(f"observation counts must be non-negative, got {parts}")
    if params.x0 > 1:
        parts = (params.x0,) + parts
    target = sum(parts)
    rank_ = lattice.rank(lattice.Composition(parts))
    for buf in iter_slices(times, params, max_degree=target, workers=workers, dtype=dtype):
        if buf.current_degree == target:
            l_arr, dl_arr = buf.values(0)
            return float(l_arr[rank_]), float(dl_arr[rank_])
    raise AssertionError("unreachable")


def likelihood_mass(
    times: Sequence[float],
    params: ModelParams,
    max_degree: int,
    workers: int = 1,
    dtype=np.float64,
) -> np.ndarray:
    """Cumulative likelihood mass ``sum_{|y| <= S} L(y)`` for S = 0..max_degree."""
    sums = np.empty(max_degree + 1)
    for buf in iter_slices(times, params, max_degree=max_degree, workers=workers, dtype=dtype):
        s = buf.current_degree
        sums[s] = float(math.fsum(np.asarray(buf.values(0)[0], dtype=float)))
    return np.cumsum(sums)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------


def _default_x_cap(params: ModelParams, times: Sequence[float]) -> int:
    return max(60, math.ceil(8.0 * math.exp(params.lam * float(times[-1]))))


def _transition_matrix(gap: float, upsilon: float, x: np.ndarray) -> np.ndarray:
    """P(X_next = b | X_prev = a) on the truncated grid, zero gap -> identity."""
    if gap == 0.0:
        return np.eye(len(x))
    k = np.subtract.outer(-x, -x)  # k[a, b] = x[b] - x[a]
    return st.nbinom.pmf(k, x[:, None], upsilon)


def _chain_value(v0, trans, obs, weights, j) -> float:
    v = v0
    for i, (t_mat, b_vec) in enumerate(zip(trans, obs)):
        m = t_mat if j != i else weights[i] * t_mat
        v = (v @ m) * b_vec
    return float(v.sum())


def _bruteforce_on_grid(parts, times, params, x_cap):
    x = np.arange(1, x_cap + 1)
    t = np.asarray(times, dtype=float)
    gaps = np.diff(t, prepend=0.0)
    ups = np.exp(-params.lam * gaps)
    trans = [_transition_matrix(g, u, x) for g, u in zip(gaps, ups)]
    obs = [st.binom.pmf(yi, x, params.p) for yi in parts]
    weights = []
    for g, u in zip(gaps, ups):
        if g == 0.0:
            weights.append(np.zeros((x_cap, x_cap)))
        else:
            # score of the gap-j factor: (upsilon * x_to - x_from) / (1 - upsilon)
            weights.append((u * x[None, :] - x[:, None]) * (g / (1.0 - u)))
    v0 = np.zeros(x_cap)
    if params.x0 > x_cap:
        raise ValueError(f"x_cap={x_cap} below the initial population {params.x0}")
    v0[params.x0 - 1] = 1.0
    like = _chain_value(v0, trans, obs, weights, j=-1)
    dlike = math.fsum(_chain_value(v0, trans, obs, weights, j) for j in range(len(parts)))
    return like, dlike


def likelihood_bruteforce(
    y: Sequence[int] | lattice.Composition,
    times: Sequence[float],
    params: ModelParams,
    x_cap: Optional[int] = None,
) -> tuple[float, float]:
    """Direct evaluation of the defining likelihood sums.

    Sums the product of per-observation factors over all monotone
    population paths ``x0 <= x_{t_1} <= ... <= x_{t_n} <= x_cap``; the
    derivative weights each path by the per-gap score terms.  Warns when
    the outermost truncation shell still contributes more than 1e-12
    relative.
    """
    parts = tuple(y.parts if isinstance(y, lattice.Composition) else (int(v) for v in y))
    if len(parts) != len(times):
        raise ValueError(f"observation vector length {len(parts)} != schedule length {len(times)}")
    if x_cap is None:
        x_cap = _default_x_cap(params, times)
    like, dlike = _bruteforce_on_grid(parts, times, params, x_cap)
    like_inner, _ = _bruteforce_on_grid(parts, times, params, x_cap - 1)
    scale = max(abs(like), 1e-300)
    if abs(like - like_inner) > 1e-12 * scale:
        warnings.warn(
            f"truncation at x_cap={x_cap} not converged: last shell contributes "
            f"{abs(like - like_inner) / scale:.3e} relative",
            RuntimeWarning,
            stacklevel=2,
        )
    return like, dlike
