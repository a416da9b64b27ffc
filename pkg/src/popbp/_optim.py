"""Shared derivative-free maximization helpers.

The one-dimensional global stage is a dense grid scan followed by
golden-section refinement inside the bracketing grid cell; the
multi-dimensional stage wraps scipy's Nelder-Mead simplex behind a
feasibility penalty, followed by coordinate-wise golden polish.
All routines maximize.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0

_PENALTY = 1e300


def golden_max(f: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-8):
    """Golden-section maximization on [lo, hi]; returns (x, f(x))."""
    a, b = float(lo), float(hi)
    h = b - a
    if h <= xtol:
        x = 0.5 * (a + b)
        return x, f(x)
    c, d = b - INVPHI * h, a + INVPHI * h
    fc, fd = f(c), f(d)
    while h > xtol:
        h *= INVPHI
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = f(d)
    if fc >= fd:
        return c, fc
    return d, fd


def golden_max_batch(
    f_batch: Callable[[np.ndarray], np.ndarray],
    lo: np.ndarray,
    hi: np.ndarray,
    xtol: float = 1e-8,
):
    """Vectorized golden-section maximization, one interval per row.

    Every iteration evaluates exactly one new point per row, so the
    per-row arithmetic matches the scalar routine.
    """
    a = np.asarray(lo, dtype=float).copy()
    b = np.asarray(hi, dtype=float).copy()
    h = b - a
    iters = int(math.ceil(math.log(max(xtol, 1e-15) / max(h.max(), xtol)) / math.log(INVPHI)))
    c = b - INVPHI * h
    d = a + INVPHI * h
    fc = f_batch(c)
    fd = f_batch(d)
    for _ in range(max(iters, 0)):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - INVPHI * (b - a)
        new_d = a + INVPHI * (b - a)
        x_new = np.where(left, new_c, new_d)
        f_new = f_batch(x_new)
        d, fd = np.where(left, c, new_d), np.where(left, fc, f_new)
        c, fc = np.where(left, new_c, c), np.where(left, f_new, fc)
    best_left = fc >= fd
    return np.where(best_left, c, d), np.where(best_left, fc, fd)


def grid_golden_max_batch(
    f_batch: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    step: float = 1e-3,
    xtol: float = 1e-8,
):
    """Dense grid scan of (lo, hi) then golden refinement around the best
    grid point; the global-search stage for smooth 1-D objectives."""
    grid = np.arange(lo + step, hi, step)
    if grid.size == 0:
        grid = np.array([0.5 * (lo + hi)])
    vals = f_batch(grid)
    j = int(np.argmax(vals))
    a = grid[j] - step if j > 0 else lo
    b = grid[j] + step if j < grid.size - 1 else hi
    xs, fs = golden_max_batch(f_batch, np.array([a]), np.array([b]), xtol)
    if fs[0] >= vals[j]:
        return float(xs[0]), float(fs[0])
    return float(grid[j]), float(vals[j])


def nelder_mead_max(
    f: Callable[[np.ndarray], float],
    seeds: Sequence[np.ndarray],
    feasible: Callable[[np.ndarray], bool],
    xatol: float = 1e-9,
    fatol: float = 1e-12,
):
    """Simplex maximization from several seeds; infeasible points are
    rejected through a large penalty.  Returns the best (x, f(x)) seen,
    never worse than the best seed."""

    def neg(x: np.ndarray) -> float:
        if not feasible(x):
            return _PENALTY
        return -f(x)

    best_x, best_f = None, -math.inf
    for seed in seeds:
        seed = np.asarray(seed, dtype=float)
        fs = f(seed) if feasible(seed) else -math.inf
        if fs > best_f:
            best_x, best_f = seed, fs
        res = minimize(
            neg,
            seed,
            method="Nelder-Mead",
            options={"xatol": xatol, "fatol": fatol, "maxiter": 4000, "maxfev": 8000},
        )
        if feasible(res.x) and -res.fun > best_f:
            best_x, best_f = np.asarray(res.x, dtype=float), float(-res.fun)
    return best_x, best_f


def coordinate_polish(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    lo: float,
    hi: float,
    xtol: float = 1e-9,
    rounds: int = 3,
    gap: float = 1e-12,
):
    """Golden-section sweep of each coordinate of a strictly increasing
    vector inside (lo, hi), keeping the ordering; stops early when a full
    round improves the value by less than ``gap`` relative."""
    x = np.asarray(x, dtype=float).copy()
    fx = f(x)
    for _ in range(rounds):
        before = fx
        for i in range(len(x)):
            left = x[i - 1] if i > 0 else lo
            right = x[i + 1] if i < len(x) - 1 else hi
            if right - left <= 4.0 * xtol:
                continue

            def f_i(v: float, i=i) -> float:
                trial = x.copy()
                trial[i] = v
                return f(trial)

            xi, fi = golden_max(f_i, left + xtol, right - xtol, xtol)
            if fi > fx:
                x[i], fx = xi, fi
        if fx - before <= gap * max(abs(fx), 1.0):
            break
    return x, fx
