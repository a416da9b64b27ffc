"""Runtime construction of the likelihood recurrence coefficients.

The generating function of the observation likelihood is rational,
``P / (1 - Q_n)``, where both the numerator ``P`` and the denominator
polynomial ``Q_n`` have degree at most 1 in each variable.  ``Q_n`` is
built by the recursion

    Q_0 = (1 - u_{0,1}) + u_{0,1} * u0
    Q_i = (1 - u_{i,i+1}) + u_{i,i+1} * (p*u_i + q) * Q_{i-1},   i = 1..n

with the convention ``u_{n,n+1} = 1``, where ``u_{i,i+1}`` is the decay
factor over the gap ``(t_i, t_{i+1})`` and ``q = 1 - p``.  The numerator
is ``u0 * u_{0,1}...u_{n-1,n} * (p*u_1 + q)...(p*u_n + q)``.

Two modes are supported:

``general_x0``
    Keeps ``u0`` as variable 0; polynomials have ``n + 1`` variables and
    the recurrence runs on the ``(x0, y)`` lattice, so a caller wanting
    a fixed initial population ``m`` reads entries with first index
    ``m``.

``fixed_x0_1``
    Extracts the coefficient of ``u0**1`` up front: the ``u0`` factor is
    dropped from the numerator and ``Q_0`` is replaced by its
    ``u0``-free part ``(1 - u_{0,1})``.  (Direct expansion of the
    ``n = 1`` rational function confirms this specialization; setting
    ``u0 = 1`` instead does not reproduce the summed series.)

Derivatives with respect to the birth rate follow the same recursions,
using ``d u_{i,i+1} = -(t_{i+1} - t_i) * u_{i,i+1}`` (zero for the
``u_{n,n+1} = 1`` convention); the numerator satisfies
``dP = -t_n * P`` because its decay factors telescope to
``exp(-lam * t_n)``.

Expanding ``(1 - Q_n) * L = P`` coefficientwise yields the slice
recurrence with prefactor ``1 / (1 - q_0)`` where ``q_0`` is the
constant coefficient of ``Q_n``; that divisor, and the coefficient
arrays pre-divided by it, are cached on :class:`RecurrenceCoefficients`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .model import ModelParams, decay_factors

__all__ = [
    "MODE_FIXED_X0_1",
    "MODE_GENERAL_X0",
    "MultilinearPoly",
    "RecurrenceCoefficients",
    "build_denominator",
    "build_denominator_derivative",
    "build_numerator",
    "assemble",
    "DegenerateDivisorError",
]

MODE_FIXED_X0_1 = "fixed_x0_1"
MODE_GENERAL_X0 = "general_x0"
_MODES = (MODE_FIXED_X0_1, MODE_GENERAL_X0)


class DegenerateDivisorError(ValueError):
    """The constant coefficient of the denominator is numerically 1."""


@dataclass(frozen=True)
class MultilinearPoly:
    """Dense polynomial of degree <= 1 in each of ``nvars`` variables.

    ``coeffs[code]`` holds the coefficient of the monomial whose
    variable ``j`` appears iff bit ``j`` of ``code`` is set.  In
    ``fixed_x0_1`` mode bit ``j`` is the observation variable ``u_{j+1}``;
    in ``general_x0`` mode bit 0 is ``u0`` and bit ``j`` is ``u_j``.
    """

    nvars: int
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        if self.coeffs.shape != (2**self.nvars,):
            raise ValueError(
                f"expected {2**self.nvars} coefficients for {self.nvars} variables, "
                f"got shape {self.coeffs.shape}"
            )
        self.coeffs.setflags(write=False)

    def evaluate(self, u: Sequence[float]) -> float:
        """Evaluate at the point ``u`` (one value per variable)."""
        if len(u) != self.nvars:
            raise ValueError(f"expected {self.nvars} coordinates, got {len(u)}")
        total = 0.0
        for code, coef in enumerate(self.coeffs):
            term = coef
            for bit in range(self.nvars):
                if (code >> bit) & 1:
                    term *= u[bit]
            total += term
        return float(total)


def _affine_times(coeffs: np.ndarray, bit: int, a: float, b: float) -> np.ndarray:
    """Coefficients of ``(a + b * u_bit) * poly``."""
    out = a * coeffs
    lo = coeffs.reshape(-1, 2, 2**bit)[:, 0, :]
    out.reshape(-1, 2, 2**bit)[:, 1, :] += b * lo
    return out


def _gaps_and_ups(times: Sequence[float], params: ModelParams):
    ups = decay_factors(times, params.lam)
    gaps = np.diff(np.asarray(times, dtype=float), prepend=0.0)
    return gaps, ups


def _check_mode(mode: str) -> None:
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")


def _build_q_dq(times, params, mode):
    """One pass of the ``Q_i`` recursion carrying the derivative along."""
    _check_mode(mode)
    n = len(times)
    gaps, ups = _gaps_and_ups(times, params)
    p, q = params.p, params.q
    nvars = n if mode == MODE_FIXED_X0_1 else n + 1
    size = 2**nvars

    qc = np.zeros(size)
    dq = np.zeros(size)
    if mode == MODE_GENERAL_X0:
        qc[0] = 1.0 - ups[0]
        qc[1] = ups[0]  # bit 0 is u0
        dq[0] = gaps[0] * ups[0]
        dq[1] = -gaps[0] * ups[0]
    else:
        qc[0] = 1.0 - ups[0]
        dq[0] = gaps[0] * ups[0]

    for i in range(1, n + 1):
        bit = i - 1 if mode == MODE_FIXED_X0_1 else i
        if i < n:
            up, dup = ups[i], -gaps[i] * ups[i]
        else:
            up, dup = 1.0, 0.0  # closing convention: no gap beyond t_n
        wq = _affine_times(qc, bit, q, p)  # (p*u_i + q) * Q_{i-1}
        dwq = _affine_times(dq, bit, q, p)
        qc = up * wq
        qc[0] += 1.0 - up
        dq = dup * wq + up * dwq
        dq[0] -= dup
    return MultilinearPoly(nvars, qc), MultilinearPoly(nvars, dq)


def build_denominator(times, params: ModelParams, mode: str) -> MultilinearPoly:
    """Denominator polynomial ``Q_n`` of the likelihood generating function."""
    return _build_q_dq(times, params, mode)[0]


def build_denominator_derivative(times, params: ModelParams, mode: str) -> MultilinearPoly:
    """Birth-rate derivative of :func:`build_denominator`."""
    return _build_q_dq(times, params, mode)[1]


def build_numerator(times, params: ModelParams, mode: str) -> tuple[MultilinearPoly, MultilinearPoly]:
    """Numerator polynomial ``P`` and its birth-rate derivative ``-t_n * P``."""
    _check_mode(mode)
    n = len(times)
    _, ups = _gaps_and_ups(times, params)
    p, q = params.p, params.q
    nvars = n if mode == MODE_FIXED_X0_1 else n + 1
    size = 2**nvars

    pc = np.zeros(size)
    prefactor = float(np.prod(ups))
    if mode == MODE_GENERAL_X0:
        pc[1] = prefactor  # the u0 factor
    else:
        pc[0] = prefactor
    for i in range(1, n + 1):
        bit = i - 1 if mode == MODE_FIXED_X0_1 else i
        pc = _affine_times(pc, bit, q, p)
    tn = float(times[-1])
    return MultilinearPoly(nvars, pc), MultilinearPoly(nvars, -tn * pc)


@dataclass(frozen=True)
class RecurrenceCoefficients:
    """Bundled coefficient tables for the slice recurrence.

    ``qhat`` and ``numhat`` are pre-divided by ``divisor = 1 - q_0`` so
    the likelihood pass needs no division; the derivative pass uses the
    raw ``dq``/``dnum`` tables and divides once at the end.
    """

    mode: str
    nvars: int
    times: tuple[float, ...]
    q: MultilinearPoly
    dq: MultilinearPoly
    num: MultilinearPoly
    dnum: MultilinearPoly
    divisor: float
    qhat: np.ndarray
    numhat: np.ndarray

    def dump_csv(self, stream: IO[str]) -> None:
        """Write the coefficient tables as ``c-bits,q,dq,num,dnum`` rows.

        Bit strings read left to right from the lowest-numbered variable.
        """
        writer = csv.writer(stream)
        writer.writerow(["c-bits", "q", "dq", "num", "dnum"])
        for code in range(2**self.nvars):
            bits = "".join(str((code >> b) & 1) for b in range(self.nvars))
            writer.writerow(
                [
                    bits,
                    repr(float(self.q.coeffs[code])),
                    repr(float(self.dq.coeffs[code])),
                    repr(float(self.num.coeffs[code])),
                    repr(float(self.dnum.coeffs[code])),
                ]
            )


def assemble(times, params: ModelParams, mode: str = MODE_FIXED_X0_1) -> RecurrenceCoefficients:
    """Build and normalize every coefficient table for one schedule."""
    qpoly, dqpoly = _build_q_dq(times, params, mode)
    numpoly, dnumpoly = build_numerator(times, params, mode)
    divisor = 1.0 - float(qpoly.coeffs[0])
    if not (divisor > 1e-300) or not math.isfinite(divisor):
        raise DegenerateDivisorError(
            f"constant denominator coefficient {qpoly.coeffs[0]} leaves no mass to divide by"
        )
    return RecurrenceCoefficients(
        mode=mode,
        nvars=qpoly.nvars,
        times=tuple(float(t) for t in times),
        q=qpoly,
        dq=dqpoly,
        num=numpoly,
        dnum=dnumpoly,
        divisor=divisor,
        qhat=qpoly.coeffs / divisor,
        numhat=numpoly.coeffs / divisor,
    )
