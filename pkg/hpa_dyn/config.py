"""Application configuration: environment settings and the CLI config document."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from hpa_dyn.errors import ConfigError
from hpa_dyn.models import GUPTA_PARAMS, DelayKernel, ModelParams, kernel_from_dict

BASE_DIR = Path(__file__).resolve().parent.parent
FIXTURES_DIR = BASE_DIR / "fixtures"


class Config:
    DEFAULT_LOG_LEVEL = "WARNING"

    DEFAULT_DT = 0.01  # min
    DEFAULT_T_END = 5000.0  # min
    DEFAULT_TRANSIENT_FRACTION = 0.5
    DEFAULT_PERTURBATION = 1e-3  # added to CRH of the chosen equilibrium
    DEFAULT_GRID_N = 100_000
    DEFAULT_A_BRACKET = (1e-3, 10.0)
    MAX_SWEEP_CELLS = 10_000

    @classmethod
    def sweep_workers(cls) -> int:
        raw = os.environ.get("HPA_DYN_THREADS")
        if raw is None:
            return os.cpu_count() or 1
        try:
            return max(1, int(raw))
        except ValueError as e:
            raise ConfigError(f"HPA_DYN_THREADS must be an integer, got {raw!r}") from e

    @classmethod
    def log_level(cls) -> int:
        name = os.environ.get("HPA_DYN_LOG_LEVEL", cls.DEFAULT_LOG_LEVEL).upper()
        level = logging.getLevelName(name)
        if not isinstance(level, int):
            raise ConfigError(f"HPA_DYN_LOG_LEVEL must be a logging level name, got {name!r}")
        return level


ALLOWED_KEYS = {
    "params", "equilibrium", "x2_bracket", "grid_n",
    "kernel", "j_max", "a20", "a", "a_bracket", "tau1",
    "kernels", "history", "q", "t_end", "dt", "transient_fraction", "perturbation",
    "output", "sweep",
}
KERNEL_CASES = ("none", "dirac", "mixed", "gamma")
EQUILIBRIUM_LEVELS = ("low", "medium", "high")
SWEEP_KEYS = {"tau1", "tau_total", "q"}


def _number(doc: dict, key: str, default=None, *, positive=False, integer=False):
    value = doc.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"{key} must be > 0, got {value!r}")
    return int(value) if integer else float(value)


def _interval(doc: dict, key: str, default=None) -> Optional[Tuple[float, float]]:
    value = doc.get(key, default)
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{key} must be a [lo, hi] pair, got {value!r}")
    lo, hi = (float(v) for v in value)
    if not 0 < lo < hi:
        raise ConfigError(f"{key} must satisfy 0 < lo < hi, got {value!r}")
    return lo, hi


def _number_list(value, key: str) -> List[float]:
    if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
        raise ConfigError(f"{key} must be a list of numbers, got {value!r}")
    return [float(v) for v in value]


@dataclass
class SweepSpec:
    tau1: float
    tau_total: List[float]
    q: List[float]

    @property
    def cells(self) -> List[Tuple[float, float]]:
        return [(tau, q) for q in self.q for tau in self.tau_total]


@dataclass
class RunConfig:
    """Validated config document; CLI overrides are applied before validation."""

    params: ModelParams = GUPTA_PARAMS
    equilibrium: str = "high"
    x2_bracket: Optional[Tuple[float, float]] = None
    grid_n: Optional[int] = None
    kernel: str = "dirac"
    j_max: int = 0
    a20: Optional[float] = None
    a: Optional[float] = None
    a_bracket: Tuple[float, float] = Config.DEFAULT_A_BRACKET
    tau1: Optional[float] = None  # fixed CORT delay; first reachable critical total delay
    kernels: Optional[Tuple[DelayKernel, DelayKernel]] = None
    history: Optional[Tuple[float, float, float, float]] = None
    q: float = 1.0
    t_end: float = Config.DEFAULT_T_END
    dt: float = Config.DEFAULT_DT
    transient_fraction: float = Config.DEFAULT_TRANSIENT_FRACTION
    perturbation: float = Config.DEFAULT_PERTURBATION
    output: Optional[str] = None
    sweep: Optional[SweepSpec] = None
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    @classmethod
    def load(cls, path: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        doc: Dict[str, Any] = {}
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    doc = json.load(fh)
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
            except json.JSONDecodeError as e:
                raise ConfigError(f"malformed JSON in {path}: {e}") from e
            if not isinstance(doc, dict):
                raise ConfigError(f"config {path} must hold a JSON object")
        for key, value in (overrides or {}).items():
            if value is not None:
                doc[key] = value
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "RunConfig":
        unknown = sorted(set(doc) - ALLOWED_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

        params = ModelParams.from_dict(doc["params"]) if "params" in doc else GUPTA_PARAMS

        equilibrium = str(doc.get("equilibrium", "high")).lower()
        if equilibrium not in EQUILIBRIUM_LEVELS:
            raise ConfigError(f"equilibrium must be one of {EQUILIBRIUM_LEVELS}, got {equilibrium!r}")
        kernel = doc.get("kernel", "dirac")
        if kernel not in KERNEL_CASES:
            raise ConfigError(f"kernel must be one of {KERNEL_CASES}, got {kernel!r}")

        kernels = None
        if "kernels" in doc:
            specs = doc["kernels"]
            if not isinstance(specs, list) or len(specs) != 2:
                raise ConfigError("kernels must be a list of two kernel specs")
            kernels = tuple(kernel_from_dict(s) for s in specs)

        history = None
        if "history" in doc:
            values = _number_list(doc["history"], "history")
            if len(values) != 4 or any(v < 0 for v in values):
                raise ConfigError("history must hold four non-negative concentrations")
            history = tuple(values)

        q = _number(doc, "q", 1.0)
        if not 0 < q <= 1:
            raise ConfigError(f"q must lie in (0, 1], got {q}")
        transient = _number(doc, "transient_fraction", Config.DEFAULT_TRANSIENT_FRACTION)
        if not 0 <= transient < 1:
            raise ConfigError(f"transient_fraction must lie in [0, 1), got {transient}")
        j_max = _number(doc, "j_max", 0, integer=True)
        if j_max < 0:
            raise ConfigError(f"j_max must be >= 0, got {j_max}")
        grid_n = _number(doc, "grid_n", None, integer=True)
        if grid_n is not None and grid_n < 100:
            raise ConfigError(f"grid_n must be >= 100, got {grid_n}")
        perturbation = _number(doc, "perturbation", Config.DEFAULT_PERTURBATION)
        tau1 = _number(doc, "tau1", None)
        if tau1 is not None and tau1 < 0:
            raise ConfigError(f"tau1 must be >= 0, got {tau1}")

        sweep = None
        if "sweep" in doc:
            raw = doc["sweep"]
            if not isinstance(raw, dict) or set(raw) - SWEEP_KEYS:
                raise ConfigError(f"sweep must be an object with keys {sorted(SWEEP_KEYS)}")
            sweep = SweepSpec(
                tau1=_number(raw, "tau1", 25.0),
                tau_total=_number_list(raw.get("tau_total", []), "sweep.tau_total"),
                q=_number_list(raw.get("q", [1.0]), "sweep.q"),
            )
            if any(not 0 < v <= 1 for v in sweep.q):
                raise ConfigError("sweep.q values must lie in (0, 1]")
            if any(t < sweep.tau1 for t in sweep.tau_total):
                raise ConfigError("sweep.tau_total values must be >= tau1")
            if len(sweep.cells) > Config.MAX_SWEEP_CELLS:
                raise ConfigError(f"sweep grid has {len(sweep.cells)} cells (limit {Config.MAX_SWEEP_CELLS})")

        output = doc.get("output")
        if output is not None and not isinstance(output, str):
            raise ConfigError(f"output must be a path string, got {output!r}")

        return cls(
            params=params,
            equilibrium=equilibrium,
            x2_bracket=_interval(doc, "x2_bracket"),
            grid_n=grid_n,
            kernel=kernel,
            j_max=j_max,
            a20=_number(doc, "a20", None, positive=True),
            a=_number(doc, "a", None, positive=True),
            a_bracket=_interval(doc, "a_bracket", Config.DEFAULT_A_BRACKET),
            tau1=tau1,
            kernels=kernels,
            history=history,
            q=q,
            t_end=_number(doc, "t_end", Config.DEFAULT_T_END, positive=True),
            dt=_number(doc, "dt", Config.DEFAULT_DT, positive=True),
            transient_fraction=transient,
            perturbation=perturbation,
            output=output,
            sweep=sweep,
            raw=dict(doc),
        )
