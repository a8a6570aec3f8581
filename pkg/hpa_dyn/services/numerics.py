"""Polynomial kernels shared by the stability analysis.

Polynomials are ``numpy.polynomial.Polynomial`` objects (ascending
coefficients). Hurwitz minors are evaluated by cofactor expansion in
exact integer arithmetic (every float is a dyadic rational), so their
signs are exact for the given coefficients.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import brentq

from hpa_dyn.errors import UnsupportedDegree, ZeroPolynomial
from hpa_dyn.models import DelayKernel, LinearizationCoeffs

logger = logging.getLogger(__name__)

ROOT_TOL = 1e-12  # residual, relative to max |coefficient|
ROOT_MERGE = 1e-9
MAX_HURWITZ_DEGREE = 6


@dataclass(frozen=True)
class HurwitzVerdict:
    stable: bool
    minors: List[float]


def as_polynomial(coeffs) -> Polynomial:
    """Polynomial from ascending coefficients, trailing zeros trimmed."""
    poly = coeffs if isinstance(coeffs, Polynomial) else Polynomial(np.asarray(coeffs, dtype=float))
    return poly.trim()


def _is_zero(poly: Polynomial) -> bool:
    return not np.any(poly.coef)


def _polish(poly: Polynomial, deriv: Polynomial, x: float, lo: float, hi: float) -> float:
    for _ in range(50):
        slope = deriv(x)
        if slope == 0:
            break
        step = poly(x) / slope
        nxt = x - step
        if not lo <= nxt <= hi:
            break
        x = nxt
        if abs(step) <= 1e-16 * max(1.0, abs(x)):
            break
    return x


def real_roots(poly, domain: Tuple[float, float]) -> List[float]:
    """Sorted real roots inside ``domain`` (closed), multiple roots once.

    Candidates are companion-matrix eigenvalues; each is polished by Newton
    steps and, when that leaves a residual above tolerance, by Brent's
    method on a small sign-changing bracket.
    """
    poly = as_polynomial(poly)
    if _is_zero(poly):
        raise ZeroPolynomial("the zero polynomial has no isolated roots")
    if poly.degree() < 1:
        return []
    lo, hi = domain
    scale = max(1.0, float(np.max(np.abs(poly.coef))))
    tol = ROOT_TOL * scale
    deriv = poly.deriv()

    candidates = []
    for z in poly.roots():
        if abs(z.imag) > 1e-6 * max(1.0, abs(z.real)):
            continue
        x = float(z.real)
        width = 1e-6 * max(1.0, abs(x))
        if x < lo - width or x > hi + width:
            continue
        x = _polish(poly, deriv, min(max(x, lo), hi), lo, hi)
        if abs(poly(x)) > tol:
            a, b = max(lo, x - width), min(hi, x + width)
            if poly(a) * poly(b) < 0:
                x = brentq(poly, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        if lo <= x <= hi:
            logger.debug("root %.17g residual %.3g", x, abs(poly(x)))
            candidates.append(x)

    candidates.sort()
    roots: List[float] = []
    for x in candidates:
        if roots and abs(x - roots[-1]) <= ROOT_MERGE * max(1.0, abs(x)):
            continue
        roots.append(x)
    return roots


def hurwitz_matrix(descending: Sequence) -> List[List]:
    """n x n Hurwitz matrix of a0 x^n + a1 x^(n-1) + ... + an."""
    n = len(descending) - 1
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            k = 2 * j - i + 1
            row.append(descending[k] if 0 <= k <= n else 0)
        rows.append(row)
    return rows


def _det(rows: List[List[int]]) -> int:
    size = len(rows)
    if size == 1:
        return rows[0][0]
    if size == 2:
        return rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0]
    total = 0
    for col, entry in enumerate(rows[0]):
        if entry == 0:
            continue
        minor = [r[:col] + r[col + 1:] for r in rows[1:]]
        term = entry * _det(minor)
        total += term if col % 2 == 0 else -term
    return total


def _common_denominator(values: Sequence[float]) -> Tuple[List[int], int]:
    """Integers N_i and a power of two D with values[i] == N_i / D exactly."""
    ratios = [float(v).as_integer_ratio() for v in values]
    denom = max(d for _, d in ratios)
    return [n * (denom // d) for n, d in ratios], denom


def hurwitz(poly) -> HurwitzVerdict:
    """Leading principal minors of the Hurwitz matrix; stable iff all > 0."""
    poly = as_polynomial(poly)
    n = poly.degree()
    if _is_zero(poly) or not 1 <= n <= MAX_HURWITZ_DEGREE:
        raise UnsupportedDegree(f"Hurwitz test supports degrees 1..{MAX_HURWITZ_DEGREE}, got {n}")
    coef = poly.coef[::-1]
    if coef[0] < 0:
        coef = -coef  # same roots
    scaled, denom = _common_denominator(coef)
    matrix = hurwitz_matrix(scaled)
    exact = [_det([row[:k] for row in matrix[:k]]) for k in range(1, n + 1)]
    minors = [float(Fraction(m, denom**k)) for k, m in enumerate(exact, start=1)]
    return HurwitzVerdict(stable=all(m > 0 for m in exact), minors=minors)


def char_residual(coeffs: LinearizationCoeffs, kernels: Tuple[DelayKernel, DelayKernel], lam: complex) -> complex:
    """Characteristic function at lambda, kernels entering through their Laplace transforms."""
    lam = complex(lam)
    c = coeffs
    p_part = (((lam + c.r3) * lam + c.r2) * lam + c.r1) * lam + c.r0
    q_part = (c.s2 * lam + c.s1) * lam + c.s0
    h1, h2 = kernels
    return p_part + q_part * h1.laplace(lam) * h2.laplace(lam)
