"""Local stability and Hopf analysis of the linearized delay system.

Characteristic function: P(lambda) + Q(lambda) H1(lambda) H2(lambda), with
P the monic quartic in r0..r3 and Q the quadratic in s0..s2. For each
kernel case the even polynomial whose positive roots are the squared
crossing frequencies is built by exact polynomial arithmetic from
|P(i w)|^2 - |Q(i w)|^2, never from hand-expanded coefficient lists.
"""

import cmath
import logging
import math
from typing import Iterable, List, Optional, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import brentq

from hpa_dyn.errors import ConfigError, DegenerateCrossing, NumericalError, TransversalityDegenerate
from hpa_dyn.models import (
    CriticalValue,
    DiracKernel,
    GammaKernel,
    LinearizationCoeffs,
    StabilityReport,
    Verdict,
)
from hpa_dyn.services.numerics import char_residual, hurwitz, real_roots

logger = logging.getLogger(__name__)

MIN_Z = 1e-12  # smaller positive z roots are treated as spurious
SLOPE_TOL = 1e-10
RESIDUAL_TOL = 1e-8
FRACTIONAL_GRID_N = 20_000
FRACTIONAL_OMEGA_MIN = 1e-9  # rad/min
TWO_PI = 2.0 * math.pi


def characteristic_polynomials(c: LinearizationCoeffs) -> Tuple[Polynomial, Polynomial]:
    return Polynomial([c.r0, c.r1, c.r2, c.r3, 1.0]), Polynomial([c.s0, c.s1, c.s2]).trim()


def _on_imaginary_axis(poly: Polynomial) -> Tuple[Polynomial, Polynomial]:
    """Real and imaginary parts of poly(i w) as real polynomials in w."""
    re = np.zeros(len(poly.coef))
    im = np.zeros(len(poly.coef))
    for k, ck in enumerate(poly.coef):
        unit = 1j ** k
        re[k] = ck * round(unit.real)
        im[k] = ck * round(unit.imag)
    return Polynomial(re), Polynomial(im)


def omega_polynomial(P: Polynomial, Q: Polynomial) -> Polynomial:
    """Even polynomial in w equal to |P(i w)|^2 - |Q(i w)|^2."""
    p_re, p_im = _on_imaginary_axis(P)
    q_re, q_im = _on_imaginary_axis(Q)
    return (p_re**2 + p_im**2 - q_re**2 - q_im**2).trim()


def z_polynomial(P: Polynomial, Q: Polynomial) -> Polynomial:
    """omega_polynomial with z = w^2 substituted."""
    even = omega_polynomial(P, Q).coef[::2]
    return Polynomial(even).trim()


def _cauchy_bound(poly: Polynomial) -> float:
    coef = poly.coef
    return 1.0 + float(np.max(np.abs(coef[:-1] / coef[-1]))) if len(coef) > 1 else 1.0


def no_delay_stability(c: LinearizationCoeffs) -> StabilityReport:
    """Hurwitz test of lambda^4 + r3 l^3 + (r2+s2) l^2 + (r1+s1) l + (r0+s0)."""
    P, Q = characteristic_polynomials(c)
    verdict = hurwitz(P + Q)
    r3, r2s2, r1s1, r0s0 = c.r3, c.r2 + c.s2, c.r1 + c.s1, c.r0 + c.s0
    inequalities = {
        "r3": r3,
        "r1+s1": r1s1,
        "r0+s0": r0s0,
        "r3(r2+s2)(r1+s1)-(r1+s1)^2-r3^2(r0+s0)": r3 * r2s2 * r1s1 - r1s1**2 - r3**2 * r0s0,
    }
    return StabilityReport(
        verdict=Verdict.STABLE if verdict.stable else Verdict.UNSTABLE,
        hurwitz_minors=verdict.minors,
        inequalities=inequalities,
    )


def _crossing_report(
    c: LinearizationCoeffs, P: Polynomial, Q: Polynomial, j_max: int, kernels_at,
) -> StabilityReport:
    """Crossing frequency and delays for P(l) + Q(l) exp(-l tau) = 0.

    The delay is recovered from both the cosine and the sine of w0 tau. The
    first critical pair must be a root of the full characteristic function
    under ``kernels_at(tau)``.
    """
    if j_max < 0:
        raise ConfigError(f"j_max must be >= 0, got {j_max}")
    undelayed = hurwitz(P + Q)
    h = z_polynomial(P, Q)
    positive = [z for z in real_roots(h, (0.0, _cauchy_bound(h))) if z > MIN_Z]
    if not positive:
        verdict = Verdict.STABLE if undelayed.stable else Verdict.UNSTABLE
        logger.info("no crossing frequency; %s for every delay", verdict.value)
        return StabilityReport(verdict=verdict, hurwitz_minors=undelayed.minors)

    z0 = positive[0]
    omega0 = math.sqrt(z0)
    slope = float(h.deriv()(z0))
    if abs(slope) < SLOPE_TOL:
        raise TransversalityDegenerate(f"dh/dz = {slope:.3g} at z0 = {z0:.12g}")

    q_value = Q(1j * omega0)
    if q_value == 0:
        raise NumericalError(f"Q vanishes at the crossing frequency {omega0:.12g}")
    rotation = -P(1j * omega0) / q_value  # equals exp(-i w0 tau)
    tau0 = ((-np.angle(rotation)) % TWO_PI) / omega0
    critical = [CriticalValue(omega0, tau0 + TWO_PI * j / omega0) for j in range(j_max + 1)]

    residual = abs(char_residual(c, kernels_at(tau0), 1j * omega0))
    if not residual <= RESIDUAL_TOL:
        raise NumericalError(
            f"characteristic residual {residual:.3g} at w0={omega0:.12g}, tau0={tau0:.12g} exceeds {RESIDUAL_TOL}"
        )
    logger.info("crossing at w0=%.10g, tau0=%.10g, dh/dz=%.4g", omega0, tau0, slope)

    return StabilityReport(
        verdict=Verdict.HOPF_CRITICAL if undelayed.stable else Verdict.UNSTABLE,
        critical_values=critical,
        transversality_sign=1 if slope > 0 else -1,
        hurwitz_minors=undelayed.minors,
    )


def dirac_critical_delays(c: LinearizationCoeffs, j_max: int = 0) -> StabilityReport:
    """Critical total delays tau = tau1 + tau2 for Dirac kernels."""
    P, Q = characteristic_polynomials(c)
    return _crossing_report(c, P, Q, j_max, lambda tau: (DiracKernel(tau), DiracKernel(0.0)))


def critical_delay_above(report: StabilityReport, tau_min: float) -> Optional[CriticalValue]:
    """First critical delay tau_j >= tau_min on the branch family of ``report``.

    With tau1 held fixed, tau = tau1 + tau2 cannot go below tau1, so the
    first critical value met while raising tau2 is the smallest branch at or
    above it. Returns None when the report has no crossing.
    """
    if not tau_min >= 0:
        raise ConfigError(f"tau_min must be >= 0, got {tau_min}")
    if not report.critical_values:
        return None
    omega0, tau0 = report.critical_values[0]
    period = TWO_PI / omega0
    j = max(0, math.ceil((tau_min - tau0) / period))
    return CriticalValue(omega0, tau0 + j * period)


def mixed_critical_delays(c: LinearizationCoeffs, a20: float, j_max: int = 0) -> StabilityReport:
    """Critical tau1 for a Dirac h1 and an exponential h2 = a20 exp(-a20 s)."""
    if not a20 > 0:
        raise ConfigError(f"a20 must be > 0, got {a20}")
    _, Q = characteristic_polynomials(c)
    return _crossing_report(
        c, mixed_quintic(c, a20), a20 * Q, j_max,
        lambda tau: (DiracKernel(tau), GammaKernel.weak(a20)),
    )


def mixed_quintic(c: LinearizationCoeffs, a20: float) -> Polynomial:
    """(lambda + a20) P(lambda): coefficients 1, a20+r3, a20 r3+r2, a20 r2+r1, a20 r1+r0, a20 r0."""
    P, _ = characteristic_polynomials(c)
    return Polynomial([a20, 1.0]) * P


# --- Caputo order q with Dirac delays ---
#
# Replacing lambda by s^q in the linear part gives P(s^q) + Q(s^q) exp(-s tau).
# Crossings sit at s = i w, where mu = (i w)^q = w^q exp(i q pi / 2).


def fractional_no_delay_stable(poly: Polynomial, q: float) -> bool:
    """Every root mu of ``poly`` has |arg mu| > q pi / 2 (reduces to Hurwitz at q = 1)."""
    roots = poly.roots()
    return bool(np.all(np.abs(np.angle(roots)) > 0.5 * q * math.pi))


def _modulus_gap(P: Polynomial, Q: Polynomial, q: float):
    turn = cmath.exp(0.5j * math.pi * q)

    def gap(omega: float) -> float:
        mu = omega**q * turn
        return abs(P(mu)) ** 2 - abs(Q(mu)) ** 2

    return gap, turn


def _fractional_frequencies(P: Polynomial, Q: Polynomial, q: float, grid_n: int) -> List[float]:
    # |P(mu)| > |Q(mu)| once |mu| exceeds 1 + sum|r| + sum|s|
    radius = 1.0 + float(np.sum(np.abs(P.coef[:-1])) + np.sum(np.abs(Q.coef)))
    grid = np.geomspace(FRACTIONAL_OMEGA_MIN, radius ** (1.0 / q), grid_n)
    gap, _ = _modulus_gap(P, Q, q)
    values = [gap(w) for w in grid]
    found = []
    for i in range(len(grid) - 1):
        if values[i] == 0.0:
            found.append(float(grid[i]))
        elif values[i] * values[i + 1] < 0:
            found.append(brentq(gap, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
    return found


def fractional_critical_delays(
    c: LinearizationCoeffs, q: float, j_max: int = 0, grid_n: int = FRACTIONAL_GRID_N,
) -> StabilityReport:
    """Critical total delays of the Caputo-order system with Dirac kernels.

    The crossing frequencies are the positive zeros of |P(mu)|^2 - |Q(mu)|^2
    along mu = (i w)^q, found by a log-spaced scan plus ``brentq``. Of those,
    the one with the smallest first delay is reported. The verdict without
    delay is the sector condition on the roots of P + Q.
    """
    if not 0 < q <= 1:
        raise ConfigError(f"q must lie in (0, 1], got {q}")
    if j_max < 0:
        raise ConfigError(f"j_max must be >= 0, got {j_max}")
    P, Q = characteristic_polynomials(c)
    undelayed = fractional_no_delay_stable(P + Q, q)
    frequencies = _fractional_frequencies(P, Q, q, grid_n)
    if not frequencies:
        verdict = Verdict.STABLE if undelayed else Verdict.UNSTABLE
        logger.info("q=%g: no crossing frequency; %s for every delay", q, verdict.value)
        return StabilityReport(verdict=verdict)

    _, turn = _modulus_gap(P, Q, q)
    best = None
    for omega in frequencies:
        mu = omega**q * turn
        q_value = Q(mu)
        if q_value == 0:
            raise NumericalError(f"Q vanishes at the crossing frequency {omega:.12g}")
        tau = ((-np.angle(-P(mu) / q_value)) % TWO_PI) / omega
        if best is None or tau < best[1]:
            best = (omega, tau)
    omega0, tau0 = best

    mu = omega0**q * turn
    rotation = cmath.exp(-1j * omega0 * tau0)
    residual = abs(P(mu) + Q(mu) * rotation)
    if not residual <= RESIDUAL_TOL:
        raise NumericalError(
            f"fractional residual {residual:.3g} at w0={omega0:.12g}, tau0={tau0:.12g} exceeds {RESIDUAL_TOL}"
        )

    # ds/dtau = s Q E / (q s^(q-1) (P' + Q' E) - tau Q E), E = exp(-s tau)
    s = 1j * omega0
    delayed = Q(mu) * rotation
    d_ds = q * s ** (q - 1) * (P.deriv()(mu) + Q.deriv()(mu) * rotation) - tau0 * delayed
    drift = s * delayed / d_ds
    if abs(drift.real) <= SLOPE_TOL * abs(drift):
        raise TransversalityDegenerate(f"root crosses tangentially at w0={omega0:.12g}, q={q}")
    logger.info("q=%g: crossing at w0=%.10g, tau0=%.10g", q, omega0, tau0)

    return StabilityReport(
        verdict=Verdict.HOPF_CRITICAL if undelayed else Verdict.UNSTABLE,
        critical_values=[CriticalValue(omega0, tau0 + TWO_PI * j / omega0) for j in range(j_max + 1)],
        transversality_sign=1 if drift.real > 0 else -1,
    )


def weak_gamma_sextic(c: LinearizationCoeffs, a: float) -> Polynomial:
    """(lambda + a)^2 P(lambda) + a^2 Q(lambda)."""
    P, Q = characteristic_polynomials(c)
    return Polynomial([a, 1.0]) ** 2 * P + a * a * Q


def weak_gamma_stability(c: LinearizationCoeffs, a: float) -> StabilityReport:
    if not a > 0:
        raise ConfigError(f"a must be > 0, got {a}")
    verdict = hurwitz(weak_gamma_sextic(c, a))
    return StabilityReport(
        verdict=Verdict.STABLE if verdict.stable else Verdict.UNSTABLE,
        hurwitz_minors=verdict.minors,
    )


def weak_gamma_sweep(c: LinearizationCoeffs, a_values: Iterable[float]) -> List[StabilityReport]:
    return [weak_gamma_stability(c, float(a)) for a in a_values]


def _next_to_last_minor(c: LinearizationCoeffs, a: float) -> float:
    return hurwitz(weak_gamma_sextic(c, a)).minors[-2]


def crossing_frequency(poly: Polynomial) -> float:
    """|Im| of the root closest to the imaginary axis."""
    roots = poly.roots()
    return float(abs(roots[np.argmin(np.abs(roots.real))].imag))


def gamma_hopf_search(
    c: LinearizationCoeffs,
    a_bracket: Tuple[float, float],
    grid_n: int = 400,
) -> Optional[float]:
    """Smallest a in the bracket where the next-to-last Hurwitz minor changes sign.

    A crossing counts only when every lower minor is positive there and the
    minor has a nonzero slope in a.
    """
    lo, hi = a_bracket
    if not 0 < lo < hi:
        raise ConfigError(f"a bracket must satisfy 0 < lo < hi, got ({lo}, {hi})")
    grid = np.geomspace(lo, hi, grid_n)
    values = [_next_to_last_minor(c, a) for a in grid]

    for i, (a, value) in enumerate(zip(grid, values)):
        if value == 0.0:
            straddles = 0 < i < len(grid) - 1 and values[i - 1] * values[i + 1] < 0
            if not straddles:
                raise DegenerateCrossing(f"next-to-last minor touches zero at a={a:.6g} without changing sign")
            candidate = float(a)
        elif i + 1 < len(grid) and value * values[i + 1] < 0:
            candidate = brentq(lambda x: _next_to_last_minor(c, x), grid[i], grid[i + 1],
                               xtol=1e-15, rtol=4 * np.finfo(float).eps)
        else:
            continue

        minors = hurwitz(weak_gamma_sextic(c, candidate)).minors
        logger.debug("candidate a0=%.12g minors=%s", candidate, minors)
        if not all(m > 0 for m in minors[:-2]):
            continue
        step = 1e-6 * candidate
        slope = (_next_to_last_minor(c, candidate + step) - _next_to_last_minor(c, candidate - step)) / (2 * step)
        if slope == 0.0 or not math.isfinite(slope):
            raise DegenerateCrossing(f"next-to-last minor has zero slope at a={candidate:.6g}")
        logger.info("Hopf crossing at a0=%.10g (slope %.4g)", candidate, slope)
        return float(candidate)
    return None
