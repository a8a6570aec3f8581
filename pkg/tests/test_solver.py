import math

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.special import gamma as gamma_fn

from hpa_dyn.errors import (
    BracketInvalid,
    ConfigError,
    DelayNotGridAligned,
    NonFiniteState,
    StepTooLarge,
    TooShort,
)
from hpa_dyn.models import DiracKernel, GammaKernel, SimConfig, State, TailClass, Trajectory
from hpa_dyn.services.model import vector_field
from hpa_dyn.services.solver import (
    caputo_abm,
    classify_tail,
    default_history,
    estimate_period,
    hopf_onset_search,
    simulate,
    simulate_chain,
    simulate_dde,
    simulate_distributed,
    simulate_fractional,
    write_trajectory_csv,
)


def _cfg(kernels, history, t_end=100.0, dt=0.01, q=1.0):
    return SimConfig(t_end=t_end, dt=dt, kernels=kernels, history=history, order_q=q)


def _dirac(tau1, tau2):
    return DiracKernel(tau1), DiracKernel(tau2)


def _rk4_reference(params, history, dt, n_steps):
    x = np.array(history, dtype=float)
    out = [x.copy()]

    def f(y):
        return vector_field(params, State(*y), y[3], y[1])

    for _ in range(n_steps):
        k1 = f(x)
        k2 = f(x + dt / 2 * k1)
        k3 = f(x + dt / 2 * k2)
        k4 = f(x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(x.copy())
    return np.array(out)


@pytest.fixture(scope="module")
def kicked(high):
    return default_history(high, 1e-3)


def test_default_history_perturbs_crh_only(high):
    h = default_history(high, 1e-3)
    assert h.crh == pytest.approx(high.state.crh + 1e-3)
    assert h[1:] == high.state[1:]


def test_zero_delays_reduce_to_plain_rk4(params, kicked):
    cfg = _cfg(_dirac(0.0, 0.0), kicked, t_end=20.0)
    traj = simulate_dde(params, cfg)
    reference = _rk4_reference(params, kicked, cfg.dt, cfg.n_steps)
    assert np.max(np.abs(traj.states - reference)) <= 1e-10
    assert traj.times[-1] == pytest.approx(20.0)


def test_rk4_is_fourth_order_without_delays(params):
    far = State(0.1, 0.1, 0.1, 0.1)

    def final(dt):
        return simulate_dde(params, _cfg(_dirac(0.0, 0.0), far, t_end=10.0, dt=dt)).states[-1]

    fine = final(0.00625)
    ratio = np.max(np.abs(final(0.05) - fine)) / np.max(np.abs(final(0.025) - fine))
    assert 12.0 < ratio < 20.0


def test_rk4_with_interpolated_lags_is_at_least_third_order(params):
    # half-step stages read the lagged components through the Hermite interpolant
    far = State(0.1, 0.1, 0.1, 0.1)

    def final(dt):
        return simulate_dde(params, _cfg(_dirac(5.0, 3.0), far, t_end=50.0, dt=dt)).states[-1]

    coarse, mid, fine = final(0.1), final(0.05), final(0.025)
    ratio = np.max(np.abs(coarse - mid)) / np.max(np.abs(mid - fine))
    assert ratio > 6.0


def test_fractional_run_is_consistent_under_step_halving(params, high):
    history = default_history(high, 0.05)
    coarse = simulate_fractional(params, _cfg(_dirac(5.0, 3.0), history, t_end=100.0, dt=0.02, q=0.8))
    fine = simulate_fractional(params, _cfg(_dirac(5.0, 3.0), history, t_end=100.0, dt=0.01, q=0.8))
    assert np.max(np.abs(fine.states[::2] - coarse.states)) < 5e-4


def test_nonnegative_histories_stay_nonnegative(params, rng):
    for _ in range(8):
        history = State(*(float(v) for v in rng.uniform(0.0, 2.0, size=4)))
        tau1, tau2 = (float(v) for v in rng.uniform(1.0, 20.0, size=2))
        traj = simulate_dde(params, _cfg(_dirac(tau1, tau2), history, t_end=200.0, dt=0.05))
        assert np.min(traj.states) >= 0.0
        a1, a2 = (float(v) for v in rng.uniform(0.1, 1.0, size=2))
        kernels = (GammaKernel.weak(a1), GammaKernel.weak(a2))
        chain = simulate_chain(params, _cfg(kernels, history, t_end=200.0, dt=0.05))
        assert np.min(chain.states) >= 0.0


def test_equilibrium_history_stays_put(params, high):
    history = high.state
    runs = [
        simulate_dde(params, _cfg(_dirac(25.0, 6.0), history, t_end=1000.0, dt=0.05)),
        simulate_chain(params, _cfg((GammaKernel.weak(0.02),) * 2, history, t_end=1000.0, dt=0.05)),
        simulate_fractional(params, _cfg(_dirac(25.0, 6.0), history, t_end=1000.0, dt=0.05, q=0.8)),
    ]
    for traj in runs:
        assert np.max(np.abs(traj.states - np.array(history))) < 1e-8


def test_step_must_resolve_the_delay(params, kicked):
    with pytest.raises(StepTooLarge):
        simulate_dde(params, _cfg(_dirac(5.0, 3.0), kicked, dt=0.5))
    with pytest.raises(StepTooLarge):
        simulate_chain(params, _cfg((GammaKernel(p=1, beta=1e-3),) * 2, kicked, t_end=1.0, dt=0.01))


def test_solvers_reject_the_wrong_kernels(params, kicked):
    gamma = (GammaKernel.weak(0.5),) * 2
    with pytest.raises(ConfigError):
        simulate_dde(params, _cfg(gamma, kicked))
    with pytest.raises(ConfigError):
        simulate_fractional(params, _cfg(gamma, kicked, q=0.9))
    with pytest.raises(ConfigError):
        simulate_chain(params, _cfg((GammaKernel(p=1.5, beta=1.0),) * 2, kicked))
    with pytest.raises(ConfigError):
        simulate(params, _cfg(gamma, kicked, q=0.9))


def test_fractional_delays_must_sit_on_the_grid(params, kicked):
    with pytest.raises(DelayNotGridAligned):
        simulate_fractional(params, _cfg(_dirac(5.0, 3.005), kicked, q=0.9))


def test_chain_matches_quadrature_of_cort(params, kicked):
    a = 0.02
    traj = simulate_chain(params, _cfg((GammaKernel.weak(a),) * 2, kicked, t_end=500.0, dt=0.05))
    assert traj.chain.shape == (len(traj), 2)
    t, cort = traj.times, traj.cort
    for n in range(1000, len(t), 1000):
        s = t[: n + 1]
        weights = a * np.exp(-a * s)
        integral = trapezoid(weights * cort[n::-1], s)
        filtered = integral + np.exp(-a * t[n]) * kicked.cort
        assert filtered == pytest.approx(traj.chain[n, 0], abs=1e-4)


def test_narrow_gamma_kernel_approaches_no_delay(params, kicked):
    narrow = simulate_chain(params, _cfg((GammaKernel(p=1, beta=1e-3),) * 2, kicked, t_end=20.0, dt=1e-3))
    instant = simulate_dde(params, _cfg(_dirac(0.0, 0.0), kicked, t_end=20.0, dt=1e-3))
    assert np.max(np.abs(narrow.states - instant.states)) < 1e-3


def test_caputo_abm_matches_mittag_leffler():
    q, dt = 0.8, 0.005
    ys = caputo_abm(lambda n, y, past: -y, [1.0], dt, 200, q)
    series = sum((-1) ** k / gamma_fn(q * k + 1) for k in range(200))
    assert ys[-1, 0] == pytest.approx(series, abs=1e-4)


def test_caputo_abm_order_one_is_trapezoidal_pc():
    ys = caputo_abm(lambda n, y, past: -y, [1.0], 0.01, 100, 1.0)
    assert ys[-1, 0] == pytest.approx(math.exp(-1.0), abs=5e-5)


def test_caputo_abm_detects_blow_up():
    with pytest.raises(NonFiniteState):
        caputo_abm(lambda n, y, past: np.array([np.inf]), [1.0], 0.1, 5, 0.5)
    with pytest.raises(ConfigError):
        caputo_abm(lambda n, y, past: -y, [1.0], 0.1, 5, 1.5)


def test_order_one_fractional_agrees_with_rk4(params, kicked):
    cfg = _cfg(_dirac(5.0, 3.0), kicked, t_end=100.0, dt=0.01)
    fractional = simulate_fractional(params, cfg)
    dde = simulate_dde(params, cfg)
    assert np.max(np.abs(fractional.states - dde.states)) < 1e-4


@pytest.mark.slow
def test_order_one_fractional_agrees_with_rk4_over_500_minutes(params, kicked):
    cfg = _cfg(_dirac(25.0, 6.0), kicked, t_end=500.0, dt=0.01)
    assert np.max(np.abs(simulate_fractional(params, cfg).states - simulate_dde(params, cfg).states)) < 1e-4


def test_quadrature_solver_tracks_the_dedicated_ones(params, kicked):
    cfg = _cfg(_dirac(5.0, 3.0), kicked, t_end=100.0, dt=0.01)
    assert np.max(np.abs(simulate_distributed(params, cfg).states - simulate_dde(params, cfg).states)) < 5e-5

    gamma = _cfg((GammaKernel.weak(0.2),) * 2, kicked, t_end=200.0, dt=0.05)
    chain = simulate_chain(params, gamma)
    direct = simulate_distributed(params, gamma)
    assert np.max(np.abs(direct.states - chain.states)) < 5e-5


def test_quadrature_solver_handles_non_integer_shape(params, kicked):
    cfg = _cfg((GammaKernel(p=1.5, beta=2.0), DiracKernel(3.0)), kicked, t_end=100.0, dt=0.05)
    traj, solver = simulate(params, cfg)
    assert solver == "distributed"
    assert np.all(np.isfinite(traj.states))
    assert np.min(traj.states) >= 0.0


def test_dispatch_by_kernels_and_order(params, kicked):
    assert simulate(params, _cfg(_dirac(5.0, 3.0), kicked, t_end=60.0))[1] == "dde"
    assert simulate(params, _cfg(_dirac(5.0, 3.0), kicked, t_end=60.0, q=0.9))[1] == "fractional"
    assert simulate(params, _cfg((GammaKernel.weak(0.5),) * 2, kicked, t_end=60.0))[1] == "chain"


def _synthetic(signal, dt=0.1):
    times = np.arange(len(signal)) * dt
    states = np.column_stack([np.ones_like(signal)] * 3 + [signal])
    return Trajectory(times=times, states=states)


def test_classify_constant_trajectory():
    summary = classify_tail(_synthetic(np.full(2000, 0.05)))
    assert summary.verdict is TailClass.CONVERGING
    assert summary.amplitude == 0.0


def test_classify_sinusoid():
    t = np.arange(20000) * 0.1
    traj = _synthetic(0.05 + 0.01 * np.sin(2 * np.pi * t / 40.0))
    summary = classify_tail(traj)
    assert summary.verdict is TailClass.OSCILLATING
    assert summary.amplitude == pytest.approx(0.02, rel=1e-3)
    assert summary.period == pytest.approx(40.0, rel=1e-2)
    assert estimate_period(traj) == pytest.approx(40.0, rel=1e-2)


def test_classify_decay_and_growth():
    t = np.arange(20000) * 0.1
    wave = np.sin(2 * np.pi * t / 40.0)
    assert classify_tail(_synthetic(0.05 + 0.01 * np.exp(-t / 300) * wave)).verdict is TailClass.CONVERGING
    growing = classify_tail(_synthetic(0.05 + 1e-3 * np.exp(t / 1000) * wave))
    assert growing.verdict is TailClass.UNDETERMINED
    assert growing.amplitude > growing.first_amplitude


def test_classify_flags_a_run_that_settles_elsewhere():
    signal = np.concatenate([np.linspace(0.05, 0.1, 500), np.full(3500, 0.1)])
    summary = classify_tail(_synthetic(signal))
    assert summary.verdict is TailClass.CONVERGING
    assert summary.offset == pytest.approx(0.05)
    assert summary.departed
    at_target = classify_tail(_synthetic(signal), reference=(1.0, 1.0, 1.0, 0.1))
    assert at_target.offset == pytest.approx(0.0, abs=1e-12)
    assert not at_target.departed


def test_classify_needs_a_long_enough_tail():
    with pytest.raises(TooShort):
        classify_tail(_synthetic(np.zeros(150)), 0.5)


def _fake_simulator(onset):
    """Sinusoid that grows above the onset and decays below it."""

    def run(params, cfg):
        tau2 = cfg.kernels[1].tau
        t = np.arange(0.0, 3000.0, 0.5)
        rate = 2e-3 * (tau2 - onset)
        envelope = 0.01 if abs(rate) < 1e-12 else 0.01 * np.exp(min(rate, 0.0) * t)
        return _synthetic(0.05 + envelope * np.sin(2 * np.pi * t / 40.0), dt=0.5), "fake"

    return run


def test_onset_search_bisects_to_quarter_minute(params, kicked):
    base = _cfg(_dirac(25.0, 6.0), kicked, t_end=300.0, dt=0.02)
    seen = []

    def recording(p, cfg):
        seen.append(cfg.kernels[1].tau)
        return _fake_simulator(7.8)(p, cfg)

    onset = hopf_onset_search(params, base, (5.0, 10.0), simulator=recording)
    assert onset == pytest.approx(7.8, abs=0.125 + 0.02)
    for tau2 in seen:
        assert abs(tau2 / 0.02 - round(tau2 / 0.02)) < 1e-9


def test_onset_search_requires_a_straddling_bracket(params, kicked):
    base = _cfg(_dirac(25.0, 6.0), kicked, t_end=300.0, dt=0.02)
    with pytest.raises(BracketInvalid):
        hopf_onset_search(params, base, (8.0, 10.0), simulator=_fake_simulator(7.8))


def test_onset_search_snaps_bracket_ends_to_the_grid(params, kicked):
    base = _cfg(_dirac(25.0, 6.0), kicked, t_end=300.0, dt=0.02)
    seen = []

    def recording(p, cfg):
        seen.append(cfg.kernels[1].tau)
        return _fake_simulator(7.8)(p, cfg)

    hopf_onset_search(params, base, (5.013, 9.997), simulator=recording)
    assert seen[0] == pytest.approx(5.02, abs=1e-12)
    assert seen[1] == pytest.approx(10.0, abs=1e-12)
    with pytest.raises(ConfigError):
        hopf_onset_search(params, base, (6.0, 6.005), simulator=recording)


def _departing_simulator(onset):
    """Settles back to the start below the onset and on a distant level above it."""

    def run(params, cfg):
        t = np.arange(0.0, 3000.0, 0.5)
        if cfg.kernels[1].tau <= onset:
            signal = 0.05 + 0.01 * np.exp(-t / 100.0) * np.sin(2 * np.pi * t / 40.0)
        else:
            signal = np.where(t < 200.0, 0.05, 0.2)
        return _synthetic(signal, dt=0.5), "fake"

    return run


def test_onset_search_treats_a_departure_as_not_decaying(params, kicked):
    base = _cfg(_dirac(25.0, 6.0), kicked, t_end=300.0, dt=0.02)
    onset = hopf_onset_search(params, base, (5.0, 10.0), simulator=_departing_simulator(7.8))
    assert onset == pytest.approx(7.8, abs=0.125 + 0.02)
    with pytest.raises(BracketInvalid, match="offset"):
        hopf_onset_search(params, base, (8.0, 10.0), simulator=_departing_simulator(7.8))


def test_trajectory_csv_format(tmp_path):
    traj = Trajectory(times=np.array([0.0, 0.1]), states=np.array([[0.1, 0.2, 0.3, 1 / 3], [1.0, 2.0, 3.0, 4.0]]))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "t,crh,acth,gr,cort"
    assert float(lines[1].split(",")[4]) == 1 / 3
    assert len(lines) == 3
