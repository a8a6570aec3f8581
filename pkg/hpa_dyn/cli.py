"""hpa-dyn command line: equilibria, stability, simulate, sweep.

Every command reads one JSON config (``--config``); flags override the
file. Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from typing import Dict, List, Optional

import numpy as np

from hpa_dyn.config import Config, RunConfig
from hpa_dyn.errors import ConfigError, NumericalError
from hpa_dyn.models import (
    CriticalValue,
    DiracKernel,
    Equilibrium,
    GammaKernel,
    SimConfig,
    StabilityReport,
    Verdict,
)
from hpa_dyn.services.chareq import (
    crossing_frequency,
    critical_delay_above,
    dirac_critical_delays,
    fractional_critical_delays,
    gamma_hopf_search,
    mixed_critical_delays,
    no_delay_stability,
    weak_gamma_sextic,
    weak_gamma_stability,
    weak_gamma_sweep,
)
from hpa_dyn.services.model import linearize, solve_equilibria
from hpa_dyn.services.solver import classify_tail, default_history, simulate, write_trajectory_csv
from hpa_dyn.services.sweep import SweepCell, run_sweep, write_sweep_csv

logger = logging.getLogger("hpa_dyn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
GAMMA_SCAN_POINTS = 200


@contextmanager
def _sink(path: Optional[str]):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _emit_json(doc: dict, path: Optional[str] = None) -> None:
    with _sink(path) as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _pick_equilibrium(cfg: RunConfig) -> Equilibrium:
    found = solve_equilibria(cfg.params, cfg.x2_bracket, cfg.grid_n)
    for e in found:
        if e.gr_level.value.lower() == cfg.equilibrium:
            return e
    levels = ", ".join(e.gr_level.value for e in found)
    raise ConfigError(f"no {cfg.equilibrium}-GR equilibrium for these parameters (found: {levels})")


# --- Commands ---


def cmd_equilibria(cfg: RunConfig) -> int:
    rejected: List[dict] = []
    found = solve_equilibria(cfg.params, cfg.x2_bracket, cfg.grid_n, diagnostics=rejected)
    _emit_json({
        "params": cfg.params.to_dict(),
        "equilibria": [e.to_dict() for e in found],
        "rejected": rejected,
    }, cfg.output)
    return EXIT_OK


def _gamma_report(cfg: RunConfig, coeffs) -> StabilityReport:
    if cfg.a is not None:
        report = weak_gamma_stability(coeffs, cfg.a)
    else:
        grid = np.geomspace(*cfg.a_bracket, GAMMA_SCAN_POINTS)
        stable = all(r.verdict is Verdict.STABLE for r in weak_gamma_sweep(coeffs, grid))
        report = StabilityReport(verdict=Verdict.STABLE if stable else Verdict.UNSTABLE)
    a0 = gamma_hopf_search(coeffs, cfg.a_bracket)
    if a0 is not None:
        omega0 = crossing_frequency(weak_gamma_sextic(coeffs, a0))
        report.critical_values = [CriticalValue(omega0, a0)]
        if cfg.a is None:
            report.verdict = Verdict.HOPF_CRITICAL
    return report


def cmd_stability(cfg: RunConfig) -> int:
    e = _pick_equilibrium(cfg)
    coeffs = linearize(cfg.params, e)
    if cfg.kernel == "none":
        report = no_delay_stability(coeffs)
    elif cfg.kernel == "dirac" and cfg.q < 1.0:
        report = fractional_critical_delays(coeffs, cfg.q, cfg.j_max)
    elif cfg.kernel == "dirac":
        report = dirac_critical_delays(coeffs, cfg.j_max)
    elif cfg.kernel == "mixed":
        if cfg.a20 is None:
            raise ConfigError("kernel 'mixed' needs a20")
        report = mixed_critical_delays(coeffs, cfg.a20, cfg.j_max)
    else:
        report = _gamma_report(cfg, coeffs)
    doc = report.to_dict()
    doc["kernel"] = cfg.kernel
    doc["equilibrium"] = e.to_dict()
    if cfg.kernel == "dirac":
        doc["q"] = cfg.q
        if cfg.tau1 is not None:
            above = critical_delay_above(report, cfg.tau1)
            doc["critical_above_tau1"] = None if above is None else {"omega0": above.omega0, "value": above.value}
    _emit_json(doc, cfg.output)
    return EXIT_OK


def _history(cfg: RunConfig):
    if cfg.history is not None:
        return cfg.history
    return default_history(_pick_equilibrium(cfg), cfg.perturbation)


def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.kernels is None:
        raise ConfigError("simulate needs 'kernels' (or --tau1/--tau2, or --a)")
    sim = SimConfig(
        t_end=cfg.t_end,
        dt=cfg.dt,
        kernels=cfg.kernels,
        history=_history(cfg),
        order_q=cfg.q,
        transient_fraction=cfg.transient_fraction,
    )
    traj, solver = simulate(cfg.params, sim)
    if cfg.output:
        write_trajectory_csv(traj, cfg.output)
        logger.info("wrote %d rows to %s", len(traj), cfg.output)
    summary = classify_tail(traj, sim.transient_fraction).to_dict()
    summary.update(solver=solver, samples=len(traj))
    _emit_json(summary)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    if cfg.sweep is None:
        raise ConfigError("sweep needs a 'sweep' object with tau1, tau_total and q")
    grid = cfg.sweep
    history = _history(cfg) if grid.cells else None
    cells = [
        SweepCell(
            index=i, params=cfg.params, history=history,
            tau1=grid.tau1, tau_total=tau, q=q,
            t_end=cfg.t_end, dt=cfg.dt, transient_fraction=cfg.transient_fraction,
        )
        for i, (tau, q) in enumerate(grid.cells)
    ]
    frame = run_sweep(cells, Config.sweep_workers())
    with _sink(cfg.output) as fh:
        write_sweep_csv(frame, fh)
    return EXIT_OK


COMMANDS = {
    "equilibria": cmd_equilibria,
    "stability": cmd_stability,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


# --- Argument parsing ---


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpa-dyn", description="HPA-axis delay model analysis")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config document")
    common.add_argument("--output", help="write the result here instead of stdout")
    common.add_argument("--equilibrium", choices=["low", "medium", "high"])
    common.add_argument("--grid-n", dest="grid_n", type=int)

    sub.add_parser("equilibria", parents=[common], help="list positive equilibria")

    stab = sub.add_parser("stability", parents=[common], help="local stability and critical values")
    stab.add_argument("--kernel", choices=["none", "dirac", "mixed", "gamma"])
    stab.add_argument("--a", type=float, help="weak gamma rate (1/min)")
    stab.add_argument("--a20", type=float, help="rate of the exponential h2 in the mixed case")
    stab.add_argument("--j-max", dest="j_max", type=int)
    stab.add_argument("--q", type=float, help="fractional order for the dirac case, in (0, 1]")
    stab.add_argument("--tau1", type=float, help="fixed CORT delay; also report the first critical total delay above it")

    for name, text in (("simulate", "integrate one trajectory"), ("sweep", "(tau, q) stability map")):
        sim = sub.add_parser(name, parents=[common], help=text)
        sim.add_argument("--q", type=float, help="fractional order in (0, 1]")
        sim.add_argument("--t-end", dest="t_end", type=float)
        sim.add_argument("--dt", type=float)
        sim.add_argument("--transient-fraction", dest="transient_fraction", type=float)
        if name == "simulate":
            sim.add_argument("--tau1", type=float, help="Dirac delay on CORT (min)")
            sim.add_argument("--tau2", type=float, help="Dirac delay on ACTH (min)")
            sim.add_argument("--a", type=float, help="weak gamma rate for both kernels (1/min)")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    skip = {"command", "verbose", "config"}
    out = {k: v for k, v in vars(args).items() if k not in skip}
    if args.command != "simulate":
        return out
    out.pop("tau1", None)
    out.pop("tau2", None)
    a = out.pop("a", None)
    if args.tau1 is not None or args.tau2 is not None:
        if args.tau1 is None or args.tau2 is None:
            raise ConfigError("--tau1 and --tau2 go together")
        out["kernels"] = [DiracKernel(args.tau1).to_dict(), DiracKernel(args.tau2).to_dict()]
    elif a is not None:
        out["kernels"] = [GammaKernel.weak(a).to_dict()] * 2
    return out


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else Config.log_level(),
            stream=sys.stderr,
            format="%(levelname)s %(name)s: %(message)s",
        )
        cfg = RunConfig.load(args.config, _overrides(args))
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"hpa-dyn: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"hpa-dyn: numerical failure ({type(e).__name__}): {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
