"""Fixed-step time integration of the delayed model and tail classification.

Four integrators share the uniform grid t_n = n * dt:

- ``simulate_dde``: method of steps with classical RK4; delayed values are
  read from the stored grid by cubic Hermite interpolation.
- ``simulate_chain``: integer-shape Gamma kernels through the linear chain
  trick, RK4 on the augmented ODE.
- ``simulate_fractional``: Caputo order q with grid-aligned discrete
  delays, Adams-Bashforth-Moulton predictor-corrector with full memory.
- ``simulate_distributed``: any kernel pair at q = 1 by direct quadrature
  of the stored grid (diagnostics only, O(N K)).

Histories are constant on (-inf, 0] and equal the initial state.
"""

import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.signal import find_peaks
from scipy.special import gamma as gamma_fn

from hpa_dyn.errors import (
    BracketInvalid,
    ConfigError,
    DelayNotGridAligned,
    NonFiniteState,
    StepTooLarge,
    TooShort,
)
from hpa_dyn.models import (
    DiracKernel,
    Equilibrium,
    GammaKernel,
    ModelParams,
    SimConfig,
    State,
    TailClass,
    TailSummary,
    Trajectory,
)
from hpa_dyn.services.model import rate_tuple, rates

logger = logging.getLogger(__name__)

UNDERSHOOT_TOL = 1e-9  # negatives down to -tol are floored to 0
GRID_TOL = 1e-9  # tau/dt this close to an integer counts as aligned
RK4_STIFF_LIMIT = 2.5  # dt / beta above this leaves RK4's stability interval
KERNEL_MASS_CUT = 1e-10  # quadrature truncation of Gamma kernels
MIN_TAIL_SAMPLES = 100
ONSET_WIDTH = 0.25  # min
DEPARTURE_TOL = 1e-2  # tail-mean distance that counts as leaving the reference state


class _PositivityFloor:
    """Clips tiny negative undershoot to zero; reports it once per run."""

    def __init__(self, solver: str):
        self.solver = solver
        self.floored = 0
        self.violations = 0

    def __call__(self, t: float, state):
        if min(state) >= 0.0:
            return state
        fixed = []
        for v in state:
            if v >= 0.0:
                fixed.append(v)
            elif v >= -UNDERSHOOT_TOL:
                self.floored += 1
                fixed.append(0.0)
            else:
                if not self.violations:
                    logger.warning("%s: component fell to %.3g at t=%.6g", self.solver, v, t)
                self.violations += 1
                fixed.append(v)
        return fixed

    def report(self) -> None:
        if self.floored:
            logger.warning("%s: floored %d negative undershoots (> -%g) to 0",
                           self.solver, self.floored, UNDERSHOOT_TOL)


def _check_finite(solver: str, t: float, state) -> None:
    if not all(map(math.isfinite, state)):
        raise NonFiniteState(f"{solver}: non-finite state at t={t:.6g}: {list(state)}")


def _dirac_lags(cfg: SimConfig) -> Tuple[float, float]:
    h1, h2 = cfg.kernels
    if not (isinstance(h1, DiracKernel) and isinstance(h2, DiracKernel)):
        raise ConfigError("this solver needs two Dirac kernels")
    return h1.tau, h2.tau


# --- Discrete delays, RK4 ---


class _LagReader:
    """Stored component at t_n + c dt - tau (c = 0, 1/2, 1), cubic Hermite in between nodes."""

    def __init__(self, tau: float, dt: float, values: List[float], slopes: List[float], before: float):
        self.values = values
        self.slopes = slopes
        self.before = before
        self.stages = []
        for c in (0.0, 0.5, 1.0):
            shift = c - tau / dt
            base = math.floor(shift)
            theta = shift - base
            if theta < GRID_TOL:
                theta = 0.0
            elif theta > 1.0 - GRID_TOL:
                base, theta = base + 1, 0.0
            t2, t3 = theta * theta, theta ** 3
            basis = (2 * t3 - 3 * t2 + 1, (t3 - 2 * t2 + theta) * dt, -2 * t3 + 3 * t2, (t3 - t2) * dt)
            self.stages.append((base, theta == 0.0, basis))

    def at(self, n: int, stage: int) -> float:
        base, on_node, (h00, h10, h01, h11) = self.stages[stage]
        m = n + base
        if m < 0:
            return self.before
        if on_node:
            return self.values[m]
        y, dy = self.values, self.slopes
        return h00 * y[m] + h10 * dy[m] + h01 * y[m + 1] + h11 * dy[m + 1]


def _axpy(x, k, h):
    return [xi + h * ki for xi, ki in zip(x, k)]


def simulate_dde(p: ModelParams, cfg: SimConfig) -> Trajectory:
    """RK4 method of steps for Dirac kernels (q = 1).

    A zero delay feeds each stage its own state, so tau1 = tau2 = 0 is the
    plain RK4 run of the undelayed ODE.
    """
    tau1, tau2 = _dirac_lags(cfg)
    cfg.check_step()
    dt, n_steps = cfg.dt, cfg.n_steps
    pv = rate_tuple(p)
    phi = cfg.history

    acth, cort = [phi.acth], [phi.cort]
    d_acth: List[float] = []
    d_cort: List[float] = []
    cort_lag = _LagReader(tau1, dt, cort, d_cort, phi.cort) if tau1 > 0 else None
    acth_lag = _LagReader(tau2, dt, acth, d_acth, phi.acth) if tau2 > 0 else None

    def field(n: int, stage: int, y) -> tuple:
        dc = cort_lag.at(n, stage) if cort_lag else y[3]
        da = acth_lag.at(n, stage) if acth_lag else y[1]
        return rates(pv, y[0], y[1], y[2], y[3], dc, da)

    floor = _PositivityFloor("dde")
    logger.info("dde: %d steps of %g min, tau1=%g, tau2=%g", n_steps, dt, tau1, tau2)
    x = list(phi)
    rows = [tuple(x)]
    half, sixth = dt / 2, dt / 6
    for n in range(n_steps):
        k1 = field(n, 0, x)
        d_acth.append(k1[1])
        d_cort.append(k1[3])
        k2 = field(n, 1, _axpy(x, k1, half))
        k3 = field(n, 1, _axpy(x, k2, half))
        k4 = field(n, 2, _axpy(x, k3, dt))
        x = [xi + sixth * (a + 2 * b + 2 * c + d) for xi, a, b, c, d in zip(x, k1, k2, k3, k4)]
        t = (n + 1) * dt
        _check_finite("dde", t, x)
        x = floor(t, x)
        acth.append(x[1])
        cort.append(x[3])
        rows.append(tuple(x))
    floor.report()
    return Trajectory(times=np.arange(n_steps + 1) * dt, states=np.array(rows))


# --- Gamma kernels, linear chain trick ---


def _chain_shape(kernel) -> int:
    if not isinstance(kernel, GammaKernel):
        raise ConfigError("the chain solver needs two Gamma kernels")
    if not kernel.is_integer_shape or kernel.p < 1:
        raise ConfigError(f"the chain solver needs an integer shape p >= 1, got {kernel.p}")
    return int(kernel.p)


def simulate_chain(p: ModelParams, cfg: SimConfig) -> Trajectory:
    """Gamma kernels with integer shape as a cascade of linear stages.

    CORT feeds p1 stages at rate 1/beta1 and ACTH feeds p2 stages at rate
    1/beta2; the last stage of each cascade is the kernel-filtered value.
    Stages start at the constant history, which is their filtered value.
    """
    h1, h2 = cfg.kernels
    p1, p2 = _chain_shape(h1), _chain_shape(h2)
    cfg.check_step()
    dt, n_steps = cfg.dt, cfg.n_steps
    for kernel in (h1, h2):
        if dt / kernel.beta > RK4_STIFF_LIMIT:
            raise StepTooLarge(f"dt={dt} exceeds {RK4_STIFF_LIMIT} x beta = {RK4_STIFF_LIMIT * kernel.beta}")
    k1, k2 = 1.0 / h1.beta, 1.0 / h2.beta
    pv = rate_tuple(p)
    phi = cfg.history
    last_u, last_v = 4 + p1 - 1, 4 + p1 + p2 - 1

    def field(y) -> list:
        out = list(rates(pv, y[0], y[1], y[2], y[3], y[last_u], y[last_v]))
        upstream = y[3]
        for i in range(4, 4 + p1):
            out.append(k1 * (upstream - y[i]))
            upstream = y[i]
        upstream = y[1]
        for i in range(4 + p1, 4 + p1 + p2):
            out.append(k2 * (upstream - y[i]))
            upstream = y[i]
        return out

    floor = _PositivityFloor("chain")
    logger.info("chain: %d steps of %g min, stages p1=%d p2=%d", n_steps, dt, p1, p2)
    x = list(phi) + [phi.cort] * p1 + [phi.acth] * p2
    rows = [tuple(x)]
    half, sixth = dt / 2, dt / 6
    for n in range(n_steps):
        a = field(x)
        b = field(_axpy(x, a, half))
        c = field(_axpy(x, b, half))
        d = field(_axpy(x, c, dt))
        x = [xi + sixth * (ai + 2 * bi + 2 * ci + di) for xi, ai, bi, ci, di in zip(x, a, b, c, d)]
        t = (n + 1) * dt
        _check_finite("chain", t, x)
        x = floor(t, x)
        rows.append(tuple(x))
    floor.report()
    full = np.array(rows)
    return Trajectory(times=np.arange(n_steps + 1) * dt, states=full[:, :4], chain=full[:, 4:])


# --- Caputo fractional order, Adams-Bashforth-Moulton ---


def caputo_abm(
    f: Callable[[int, np.ndarray, np.ndarray], np.ndarray],
    y0: Sequence[float],
    dt: float,
    n_steps: int,
    q: float,
    nonnegative: bool = False,
) -> np.ndarray:
    """Predictor-corrector for the Caputo system D^q y = f, one corrector pass.

    ``f(n, y, past)`` is the right-hand side at t_n for state y; ``past``
    holds the solution rows computed so far (rows < n are final). The full
    memory sum is kept. Returns an (n_steps + 1, dim) array.
    """
    if not 0 < q <= 1:
        raise ConfigError(f"order q must lie in (0, 1], got {q}")
    y0 = np.asarray(y0, dtype=float)
    ys = np.empty((n_steps + 1, y0.size))
    fs = np.empty((n_steps + 1, y0.size))
    ys[0] = y0

    k = np.arange(n_steps + 1, dtype=float)
    b = (k + 1) ** q - k ** q  # rectangle weights, b_k
    c = (k + 2) ** (q + 1) + k ** (q + 1) - 2 * (k + 1) ** (q + 1)  # trapezoid weights, c_k
    b_rev, c_rev = b[::-1].copy(), c[:-1][::-1].copy()
    pred_scale = dt ** q / gamma_fn(q + 1)
    corr_scale = dt ** q / gamma_fn(q + 2)
    floor = _PositivityFloor("fractional") if nonnegative else None
    top = n_steps

    fs[0] = f(0, y0, ys)
    for n in range(n_steps):
        predictor = y0 + pred_scale * (b_rev[top - n:] @ fs[: n + 1])
        t = (n + 1) * dt
        f_pred = f(n + 1, predictor, ys)
        memory = (n ** (q + 1) - (n - q) * (n + 1) ** q) * fs[0]
        if n:
            memory = memory + c_rev[top - n:] @ fs[1: n + 1]
        y = y0 + corr_scale * (memory + f_pred)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(f"fractional: non-finite state at t={t:.6g}: {y.tolist()}")
        if floor is not None:
            y = np.asarray(floor(t, y.tolist()))
        ys[n + 1] = y
        fs[n + 1] = f(n + 1, y, ys)
    if floor is not None:
        floor.report()
    return ys


def _grid_steps(tau: float, dt: float) -> int:
    ratio = tau / dt
    steps = round(ratio)
    if abs(ratio - steps) > GRID_TOL * max(1.0, ratio):
        raise DelayNotGridAligned(f"delay {tau} is not a multiple of dt={dt} (ratio {ratio:.12g})")
    return int(steps)


def simulate_fractional(p: ModelParams, cfg: SimConfig) -> Trajectory:
    """Caputo order cfg.order_q with discrete delays on grid points."""
    tau1, tau2 = _dirac_lags(cfg)
    cfg.check_step()
    dt, n_steps, q = cfg.dt, cfg.n_steps, cfg.order_q
    lag1, lag2 = _grid_steps(tau1, dt), _grid_steps(tau2, dt)
    pv = rate_tuple(p)
    phi = cfg.history

    def field(n: int, y: np.ndarray, past: np.ndarray) -> np.ndarray:
        x1, x2, x3, x4 = y.tolist()
        j1, j2 = n - lag1, n - lag2
        dc = x4 if lag1 == 0 else (past[j1, 3] if j1 >= 0 else phi.cort)
        da = x2 if lag2 == 0 else (past[j2, 1] if j2 >= 0 else phi.acth)
        return np.array(rates(pv, x1, x2, x3, x4, dc, da))

    logger.info("fractional: q=%g, %d steps of %g min, lags %d/%d steps", q, n_steps, dt, lag1, lag2)
    states = caputo_abm(field, list(phi), dt, n_steps, q, nonnegative=True)
    return Trajectory(times=np.arange(n_steps + 1) * dt, states=states)


# --- Direct quadrature (diagnostics) ---


class _Convolution:
    """Kernel-weighted past of one component at grid point n.

    Gamma kernels use cell-integrated weights from the CDF, so the mass near
    s = 0 stays finite for p < 1; the part of the kernel reaching before
    t = 0 is added exactly against the constant history. Dirac kernels use
    linear interpolation between grid points.
    """

    def __init__(self, kernel, dt: float, n_steps: int, before: float):
        self.kernel = kernel
        self.before = before
        if isinstance(kernel, DiracKernel):
            shift = kernel.tau / dt
            self.lag = math.floor(shift)
            self.frac = shift - self.lag
            if self.frac < GRID_TOL:
                self.frac = 0.0
            elif self.frac > 1.0 - GRID_TOL:
                self.lag, self.frac = self.lag + 1, 0.0
            return
        span = kernel.quantile(1.0 - KERNEL_MASS_CUT)
        self.K = min(n_steps, max(1, int(math.ceil(span / dt))))
        edges = (np.arange(self.K + 1) + 0.5) * dt
        cdf = np.concatenate([[0.0], stats.gamma.cdf(edges, a=kernel.p, scale=kernel.beta)])
        self.weights = np.diff(cdf)  # cell k covers [(k - 1/2) dt, (k + 1/2) dt]
        self.tail = 1.0 - cdf  # tail[k + 1]: mass beyond cell k

    def at(self, n: int, current: float, values: List[float]) -> float:
        """``values`` holds grid points 0..n-1; ``current`` is the value at n."""
        if isinstance(self.kernel, DiracKernel):
            m = n - self.lag
            if m < 0 or (m == 0 and self.frac > 0.0):
                return self.before
            hi = current if m == n else values[m]
            if self.frac == 0.0:
                return hi
            return (1.0 - self.frac) * hi + self.frac * values[m - 1]
        reach = min(n, self.K)
        total = self.weights[0] * current
        if reach:
            past = np.asarray(values[n - reach: n])
            total += float(self.weights[1: reach + 1][::-1] @ past)
        if n <= self.K:
            total += self.tail[n + 1] * self.before
        return total


def simulate_distributed(p: ModelParams, cfg: SimConfig) -> Trajectory:
    """Explicit Heun steps with convolutions evaluated over the stored grid."""
    if cfg.order_q != 1.0:
        raise ConfigError("the quadrature solver is integer-order only")
    cfg.check_step()
    dt, n_steps = cfg.dt, cfg.n_steps
    pv = rate_tuple(p)
    phi = cfg.history
    h1, h2 = cfg.kernels
    conv_cort = _Convolution(h1, dt, n_steps, phi.cort)
    conv_acth = _Convolution(h2, dt, n_steps, phi.acth)
    acth: List[float] = []
    cort: List[float] = []

    def field(n: int, y) -> tuple:
        dc = conv_cort.at(n, y[3], cort)
        da = conv_acth.at(n, y[1], acth)
        return rates(pv, y[0], y[1], y[2], y[3], dc, da)

    floor = _PositivityFloor("distributed")
    logger.info("distributed: %d steps of %g min, kernels %s / %s", n_steps, dt, h1.to_dict(), h2.to_dict())
    x = list(phi)
    rows = [tuple(x)]
    for n in range(n_steps):
        k1 = field(n, x)
        acth.append(x[1])
        cort.append(x[3])
        k2 = field(n + 1, _axpy(x, k1, dt))
        x = [xi + 0.5 * dt * (a + b) for xi, a, b in zip(x, k1, k2)]
        t = (n + 1) * dt
        _check_finite("distributed", t, x)
        x = floor(t, x)
        rows.append(tuple(x))
    floor.report()
    return Trajectory(times=np.arange(n_steps + 1) * dt, states=np.array(rows))


# --- Dispatch and analysis ---


def simulate(p: ModelParams, cfg: SimConfig) -> Tuple[Trajectory, str]:
    """Pick the integrator for the kernel pair and order; returns (trajectory, solver name)."""
    h1, h2 = cfg.kernels
    dirac = isinstance(h1, DiracKernel) and isinstance(h2, DiracKernel)
    gamma = isinstance(h1, GammaKernel) and isinstance(h2, GammaKernel)
    if cfg.order_q < 1.0:
        if not dirac:
            raise ConfigError("fractional order needs two Dirac kernels")
        return simulate_fractional(p, cfg), "fractional"
    if dirac:
        return simulate_dde(p, cfg), "dde"
    if gamma and h1.is_integer_shape and h2.is_integer_shape:
        return simulate_chain(p, cfg), "chain"
    return simulate_distributed(p, cfg), "distributed"


def default_history(e: Equilibrium, perturbation: float) -> State:
    """Equilibrium with ``perturbation`` added to CRH."""
    s = e.state
    return State(s.crh + perturbation, s.acth, s.gr, s.cort)


def _tail(traj: Trajectory, transient_fraction: float) -> Tuple[np.ndarray, np.ndarray]:
    cut = int(len(traj) * transient_fraction)
    times, cort = traj.times[cut:], traj.cort[cut:]
    if len(cort) <= MIN_TAIL_SAMPLES:
        raise TooShort(f"{len(cort)} samples after the transient cut (need > {MIN_TAIL_SAMPLES})")
    return times, cort


def estimate_period(traj: Trajectory, transient_fraction: float = 0.5) -> Optional[float]:
    """Mean spacing of CORT peaks in the tail; None with fewer than three peaks."""
    times, cort = _tail(traj, transient_fraction)
    spread = float(np.ptp(cort))
    if spread == 0.0:
        return None
    peaks, _ = find_peaks(cort, prominence=0.25 * spread)
    if len(peaks) < 3:
        return None
    return float(np.mean(np.diff(times[peaks])))


def classify_tail(
    traj: Trajectory, transient_fraction: float = 0.5, reference: Optional[Sequence[float]] = None,
) -> TailSummary:
    """Converging / Oscillating / Undetermined from peak-to-peak CORT in the two tail halves.

    ``offset`` measures how far the tail settles from ``reference`` (the
    initial state by default); a Converging run with ``departed`` set has
    gone to some other attractor, not back to where it started.
    """
    times, cort = _tail(traj, transient_fraction)
    mid = len(cort) // 2
    first, second = float(np.ptp(cort[:mid])), float(np.ptp(cort[mid:]))
    if second < max(1e-4, 0.5 * first):
        verdict = TailClass.CONVERGING
    elif second > 1e-3 and abs(second - first) < 0.2 * first:
        verdict = TailClass.OSCILLATING
    else:
        verdict = TailClass.UNDETERMINED
        logger.warning("tail undetermined: amplitudes %.3g then %.3g", first, second)
    period = estimate_period(traj, transient_fraction) if verdict is TailClass.OSCILLATING else None

    origin = traj.states[0] if reference is None else np.asarray(reference, dtype=float)
    cut = len(traj) - len(cort)
    offset = float(np.max(np.abs(traj.states[cut:].mean(axis=0) - origin)))
    departed = offset > DEPARTURE_TOL
    if departed:
        logger.warning("tail settles %.3g away from the reference state", offset)
    return TailSummary(verdict=verdict, amplitude=second, first_amplitude=first, period=period,
                       offset=offset, departed=departed)


def _trial_run(p: ModelParams, base_cfg: SimConfig, tau1: float, tau2: float, simulator) -> TailSummary:
    cfg = base_cfg.with_kernels(DiracKernel(tau1), DiracKernel(tau2))
    traj, _ = simulator(p, cfg)
    summary = classify_tail(traj, cfg.transient_fraction)
    logger.debug("trial tau2=%.6g: %s (A1=%.3g, A2=%.3g, offset=%.3g)", tau2, summary.verdict.value,
                 summary.first_amplitude, summary.amplitude, summary.offset)
    return summary


def _decays(summary: TailSummary) -> bool:
    """Back to the starting state: shrinking tail and no departure."""
    if summary.departed:
        return False
    if summary.verdict is TailClass.UNDETERMINED:
        return summary.amplitude < summary.first_amplitude
    return summary.verdict is TailClass.CONVERGING


def hopf_onset_search(
    p: ModelParams,
    base_cfg: SimConfig,
    tau2_bracket: Tuple[float, float],
    width: float = ONSET_WIDTH,
    simulator=simulate,
) -> float:
    """Bisection on tau2 between a run that decays back and one that does not.

    tau1 is taken from the first kernel of ``base_cfg``; the bracket ends
    and every trial tau2 are snapped to the dt grid so the fractional solver sees
    aligned delays. A trial run that does not decay either oscillates or leaves
    the starting equilibrium for another attractor. A trial run classified
    Undetermined counts as decaying when its second-half amplitude is the
    smaller one. Returns the midpoint of the final bracket.
    """
    h1 = base_cfg.kernels[0]
    if not isinstance(h1, DiracKernel):
        raise ConfigError("onset search needs a Dirac kernel for tau1")
    tau1, dt = h1.tau, base_cfg.dt
    lo, hi = (round(end / dt) * dt for end in tau2_bracket)
    if not 0 <= lo < hi:
        raise ConfigError(f"tau2 bracket must satisfy 0 <= lo < hi on the dt grid, got {tau2_bracket}")

    at_lo = _trial_run(p, base_cfg, tau1, lo, simulator)
    at_hi = _trial_run(p, base_cfg, tau1, hi, simulator)
    if not _decays(at_lo) or _decays(at_hi):
        raise BracketInvalid(
            f"tau2 bracket [{lo}, {hi}] does not straddle the onset: "
            f"{at_lo.verdict.value} (offset {at_lo.offset:.3g}) / {at_hi.verdict.value} (offset {at_hi.offset:.3g})"
        )

    while hi - lo > width:
        mid = round(0.5 * (lo + hi) / dt) * dt
        if not lo < mid < hi:
            break
        if _decays(_trial_run(p, base_cfg, tau1, mid, simulator)):
            lo = mid
        else:
            hi = mid
    onset = 0.5 * (lo + hi)
    logger.info("onset tau2 in [%.4g, %.4g] (tau total ~ %.4g)", lo, hi, tau1 + onset)
    return onset


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV with header t,crh,acth,gr,cort; 17 significant digits, LF line endings."""
    traj.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
