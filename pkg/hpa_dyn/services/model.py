"""Vector field, equilibria and linearization of the four-hormone model."""

import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from hpa_dyn.config import Config
from hpa_dyn.errors import ConfigError, EmptyBracket
from hpa_dyn.models import (
    Equilibrium,
    GRLevel,
    LinearizationCoeffs,
    ModelParams,
    State,
)

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
MERGE_TOL = 1e-8  # roots closer than this in x2 are one root


def rate_tuple(p: ModelParams) -> Tuple[float, ...]:
    """Parameters as a plain tuple, for the scalar inner loops of the solvers."""
    return (p.a1, p.a2, p.a3, p.b1, p.b2, p.b3, p.c1, p.c2, p.c3, p.c4, p.d1, p.d2)


def rates(pv, x1, x2, x3, x4, delayed_cort, delayed_acth):
    """Right-hand sides as floats; pv comes from rate_tuple()."""
    a1, a2, a3, b1, b2, b3, c1, c2, c3, c4, d1, d2 = pv
    bound = x3 * delayed_cort  # GR x CORT complex
    bound2 = bound * bound
    return (
        a1 / (a2 + delayed_cort) - a3 * x1,
        b1 * x1 / (b2 + bound) - b3 * x2,
        c1 * bound2 / (c2 + bound2) + c3 - c4 * x3,
        d1 * delayed_acth - d2 * x4,
    )


def vector_field(p: ModelParams, current: State, delayed_cort: float, delayed_acth: float) -> np.ndarray:
    """(dCRH, dACTH, dGR, dCORT)/dt with the kernel integrals replaced by the delayed values."""
    return np.array(rates(rate_tuple(p), *current, delayed_cort, delayed_acth))


def equilibrium_residual(p: ModelParams, state: State) -> float:
    return float(np.max(np.abs(vector_field(p, state, state.cort, state.acth))))


def _eliminate(p: ModelParams, x2):
    """x1, x3, x4 as functions of x2 from the CRH, ACTH and CORT balances."""
    x4 = p.d1 * x2 / p.d2
    x1 = p.a1 / (p.a3 * (p.a2 + x4))
    x3 = (p.b1 * x1 / (p.b3 * x2) - p.b2) / x4
    return x1, x3, x4


def gr_balance(p: ModelParams, x2):
    """Scalar equation G(x2) whose positive roots give the equilibria."""
    _, x3, x4 = _eliminate(p, x2)
    bound2 = (x3 * x4) ** 2
    return p.c1 * bound2 / (p.c2 + bound2) + p.c3 - p.c4 * x3


def default_bracket(p: ModelParams) -> Tuple[float, float]:
    return 1e-6, 1e3 / max(1.0, p.d1 / p.d2)


def _tag(count: int) -> List[GRLevel]:
    if count == 1:
        return [GRLevel.LOW]
    return [GRLevel.LOW] + [GRLevel.MEDIUM] * (count - 2) + [GRLevel.HIGH]


def solve_equilibria(
    p: ModelParams,
    x2_bracket: Optional[Tuple[float, float]] = None,
    grid_n: Optional[int] = None,
    diagnostics: Optional[list] = None,
) -> List[Equilibrium]:
    """All positive equilibria with x2 in the bracket, sorted by GR level.

    G(x2) is scanned on a geometric grid; each sign change is refined with
    Brent's method. Roots giving a non-positive coordinate or a residual
    above 1e-10 are dropped and recorded in ``diagnostics`` when given.
    """
    lo, hi = x2_bracket or default_bracket(p)
    grid_n = grid_n or Config.DEFAULT_GRID_N
    if not 0 < lo < hi:
        raise ConfigError(f"x2 bracket must satisfy 0 < lo < hi, got ({lo}, {hi})")
    if grid_n < 100:
        raise ConfigError(f"grid_n must be >= 100, got {grid_n}")

    grid = np.geomspace(lo, hi, int(grid_n))
    with np.errstate(all="ignore"):
        values = gr_balance(p, grid)
    finite = np.isfinite(values)
    signs = np.sign(values)
    crossings = np.flatnonzero(finite[:-1] & finite[1:] & (signs[:-1] * signs[1:] < 0))
    exact = np.flatnonzero(finite & (values == 0.0))
    if len(crossings) == 0 and len(exact) == 0:
        raise EmptyBracket(f"G(x2) has no sign change on [{lo:g}, {hi:g}]")

    roots = [float(grid[i]) for i in exact]
    for i in crossings:
        roots.append(brentq(lambda x: gr_balance(p, x), grid[i], grid[i + 1],
                            xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))
    roots.sort()
    merged: List[float] = []
    for root in roots:
        if not merged or root - merged[-1] > MERGE_TOL:
            merged.append(root)

    found = []
    for x2 in merged:
        x1, x3, x4 = _eliminate(p, x2)
        state = State(x1, x2, x3, x4)
        if min(state) <= 0:
            logger.warning("discarding root x2=%.6g: non-positive coordinate %s", x2, state)
            if diagnostics is not None:
                diagnostics.append({"x2": x2, "reason": "non-positive coordinate"})
            continue
        residual = equilibrium_residual(p, state)
        if residual > RESIDUAL_TOL:
            logger.warning("discarding root x2=%.6g: residual %.3g", x2, residual)
            if diagnostics is not None:
                diagnostics.append({"x2": x2, "reason": f"residual {residual:.3g}"})
            continue
        found.append((state, residual))

    found.sort(key=lambda item: item[0].gr)
    equilibria = [
        Equilibrium(state=s, residual=r, gr_level=tag)
        for (s, r), tag in zip(found, _tag(len(found)))
    ]
    logger.info("found %d positive equilibria", len(equilibria))
    return equilibria


def linearize(p: ModelParams, e: Equilibrium) -> LinearizationCoeffs:
    x10, x20, x30, x40 = e.state
    ab = p.b2 + x30 * x40
    gg = p.c2 + (x30 * x40) ** 2

    a11 = -p.a3
    a21 = p.b1 / ab
    a22 = -p.b3
    a23 = -p.b1 * x10 * x40 / ab**2
    a33 = -p.c4 + 2 * p.c1 * p.c2 * x30 * x40**2 / gg**2
    a44 = -p.d2
    b14 = -p.a1 / (p.a2 + x40) ** 2
    b24 = -p.b1 * x10 * x30 / ab**2
    b34 = 2 * p.c1 * p.c2 * x30**2 * x40 / gg**2
    b42 = p.d1

    return LinearizationCoeffs(
        a11=a11, a21=a21, a22=a22, a23=a23, a33=a33, a44=a44,
        b14=b14, b24=b24, b34=b34, b42=b42,
        r3=-a11 - a22 - a33 - a44,
        r2=a11 * (a22 + a33 + a44) + a33 * a44 + a22 * (a33 + a44),
        r1=-a33 * a44 * (a11 + a22) - a11 * a22 * (a33 + a44),
        r0=a11 * a22 * a33 * a44,
        s2=-b42 * b24,
        s1=-b42 * (a21 * b14 + a23 * b34 - b24 * (a11 + a33)),
        s0=-b42 * (-a23 * b34 * a11 - a21 * b14 * a33 + b24 * a11 * a33),
    )


def jacobian(c: LinearizationCoeffs) -> Tuple[np.ndarray, np.ndarray]:
    """(A, B): derivatives with respect to the current and the kernel-filtered state."""
    A = np.array([
        [c.a11, 0.0, 0.0, 0.0],
        [c.a21, c.a22, c.a23, 0.0],
        [0.0, 0.0, c.a33, 0.0],
        [0.0, 0.0, 0.0, c.a44],
    ])
    B = np.array([
        [0.0, 0.0, 0.0, c.b14],
        [0.0, 0.0, 0.0, c.b24],
        [0.0, 0.0, 0.0, c.b34],
        [0.0, c.b42, 0.0, 0.0],
    ])
    return A, B
