"""Data models for the HPA-axis model: parameters, states, kernels, reports."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from hpa_dyn.errors import ConfigError, PoleRegion, StepTooLarge

# Flat JSON keys of ModelParams, in declaration order
PARAM_KEYS = ("a1", "a2", "a3", "b1", "b2", "b3", "c1", "c2", "c3", "c4", "d1", "d2")

# Trajectory CSV header
STATE_COLUMNS = ["crh", "acth", "gr", "cort"]


@dataclass(frozen=True)
class ModelParams:
    """Rate and affinity constants of the four-hormone model. Time unit: min."""

    a1: float  # CRH production, conc/min
    a2: float  # CRH inhibition constant, conc
    a3: float  # CRH degradation, 1/min
    b1: float  # ACTH production, 1/min
    b2: float  # ACTH inhibition constant, conc^2
    b3: float  # ACTH degradation, 1/min
    c1: float  # GR dimerization, conc/min
    c2: float  # GR binding affinity, conc^4
    c3: float  # GR baseline production, conc/min
    c4: float  # GR degradation, 1/min
    d1: float  # CORT production, 1/min
    d2: float  # CORT degradation, 1/min

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"parameter {f.name} must be a number, got {value!r}")
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"parameter {f.name} must be finite and > 0, got {value!r}")

    def to_dict(self) -> Dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "ModelParams":
        if not isinstance(data, dict):
            raise ConfigError("params must be a JSON object")
        unknown = sorted(set(data) - set(PARAM_KEYS))
        missing = [k for k in PARAM_KEYS if k not in data]
        if unknown:
            raise ConfigError(f"unknown parameter keys: {', '.join(unknown)}")
        if missing:
            raise ConfigError(f"missing parameter keys: {', '.join(missing)}")
        return cls(**{k: data[k] for k in PARAM_KEYS})


# Scaled parameter set with three coexisting equilibria (low/medium/high GR)
GUPTA_PARAMS = ModelParams(
    a1=0.1, a2=0.1, a3=1.0,
    b1=0.1, b2=0.1, b3=10.0,
    c1=1.0, c2=0.001, c3=0.05, c4=0.9,
    d1=1.0, d2=1.0,
)


class State(NamedTuple):
    """Concentrations x1..x4."""

    crh: float
    acth: float
    gr: float
    cort: float


class GRLevel(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"


@dataclass(frozen=True)
class Equilibrium:
    """Positive fixed point with its algebraic residual and GR rank."""

    state: State
    residual: float
    gr_level: GRLevel

    def to_dict(self) -> dict:
        return {
            "gr_level": self.gr_level.value,
            "state": dict(zip(STATE_COLUMNS, map(float, self.state))),
            "residual": float(self.residual),
        }


@dataclass(frozen=True)
class LinearizationCoeffs:
    """Linearization at an equilibrium and the characteristic coefficients.

    a_ij multiply instantaneous deviations, b_ij the kernel-filtered ones.
    The characteristic function is
    lambda^4 + r3 lambda^3 + r2 lambda^2 + r1 lambda + r0
    + (s2 lambda^2 + s1 lambda + s0) H1(lambda) H2(lambda).
    """

    a11: float
    a21: float
    a22: float
    a23: float
    a33: float
    a44: float
    b14: float
    b24: float
    b34: float
    b42: float
    r0: float
    r1: float
    r2: float
    r3: float
    s0: float
    s1: float
    s2: float

    @classmethod
    def from_characteristic(cls, r: Tuple[float, float, float, float],
                            s: Tuple[float, float, float]) -> "LinearizationCoeffs":
        """Coefficients carrying only r0..r3 and s0..s2 (a_ij, b_ij set to nan)."""
        nan = float("nan")
        return cls(
            a11=nan, a21=nan, a22=nan, a23=nan, a33=nan, a44=nan,
            b14=nan, b24=nan, b34=nan, b42=nan,
            r0=r[0], r1=r[1], r2=r[2], r3=r[3],
            s0=s[0], s1=s[1], s2=s[2],
        )


# --- Delay kernels ---


@dataclass(frozen=True)
class DiracKernel:
    """h(s) = delta(s - tau): a discrete lag."""

    tau: float  # min

    kind = "dirac"

    def __post_init__(self):
        if not math.isfinite(self.tau) or self.tau < 0:
            raise ConfigError(f"Dirac delay must be finite and >= 0, got {self.tau!r}")

    @property
    def mean(self) -> float:
        return float(self.tau)

    def laplace(self, lam: complex) -> complex:
        return complex(np.exp(-lam * self.tau))

    def to_dict(self) -> dict:
        return {"type": "dirac", "tau": float(self.tau)}


@dataclass(frozen=True)
class GammaKernel:
    """h(s) = s^(p-1) exp(-s/beta) / (beta^p Gamma(p)); mean delay p*beta."""

    p: float
    beta: float  # min

    kind = "gamma"

    def __post_init__(self):
        if not math.isfinite(self.p) or self.p <= 0:
            raise ConfigError(f"Gamma shape p must be > 0, got {self.p!r}")
        if not math.isfinite(self.beta) or self.beta <= 0:
            raise ConfigError(f"Gamma scale beta must be > 0, got {self.beta!r}")

    @classmethod
    def weak(cls, a: float) -> "GammaKernel":
        """Exponential kernel a*exp(-a*s)."""
        if not math.isfinite(a) or a <= 0:
            raise ConfigError(f"weak gamma rate a must be > 0, got {a!r}")
        return cls(p=1, beta=1.0 / a)

    @property
    def mean(self) -> float:
        return float(self.p * self.beta)

    @property
    def is_integer_shape(self) -> bool:
        return float(self.p).is_integer()

    def density(self, s):
        return stats.gamma.pdf(s, a=self.p, scale=self.beta)

    def quantile(self, prob: float) -> float:
        return float(stats.gamma.ppf(prob, a=self.p, scale=self.beta))

    def laplace(self, lam: complex) -> complex:
        z = 1.0 + self.beta * complex(lam)
        if z.imag == 0.0 and z.real <= 0.0:
            raise PoleRegion(f"Gamma transform undefined at lambda={lam} (<= -1/beta)")
        return z ** (-self.p)

    def to_dict(self) -> dict:
        return {"type": "gamma", "p": float(self.p), "beta": float(self.beta)}


DelayKernel = Union[DiracKernel, GammaKernel]


def kernel_from_dict(data: dict) -> DelayKernel:
    if not isinstance(data, dict) or "type" not in data:
        raise ConfigError(f"kernel spec must be an object with a 'type', got {data!r}")
    kind = data["type"]
    keys = set(data) - {"type"}
    try:
        if kind == "dirac" and keys == {"tau"}:
            return DiracKernel(tau=float(data["tau"]))
        if kind == "gamma" and keys == {"a"}:
            return GammaKernel.weak(float(data["a"]))
        if kind == "gamma" and keys == {"p", "beta"}:
            return GammaKernel(p=float(data["p"]), beta=float(data["beta"]))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad kernel spec {data!r}: {e}") from e
    raise ConfigError(f"unrecognised kernel spec {data!r}")


# --- Stability analysis ---


class Verdict(str, Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    HOPF_CRITICAL = "HopfCritical"


class CriticalValue(NamedTuple):
    omega0: float  # rad/min
    value: float  # tau (min) or kernel rate a (1/min)


@dataclass
class StabilityReport:
    verdict: Verdict
    critical_values: List[CriticalValue] = field(default_factory=list)
    transversality_sign: Optional[int] = None
    hurwitz_minors: Optional[List[float]] = None
    inequalities: Optional[Dict[str, float]] = None  # non-delayed case only

    def to_dict(self) -> dict:
        out = {
            "verdict": self.verdict.value,
            "critical": [{"omega0": float(c.omega0), "value": float(c.value)} for c in self.critical_values],
            "transversality": self.transversality_sign,
            "minors": None if self.hurwitz_minors is None else [float(m) for m in self.hurwitz_minors],
        }
        if self.inequalities is not None:
            out["inequalities"] = {k: float(v) for k, v in self.inequalities.items()}
        return out


# --- Simulation ---


@dataclass(frozen=True)
class SimConfig:
    """Fixed-step simulation settings. History is constant on the pre-interval."""

    t_end: float  # min
    dt: float  # min
    kernels: Tuple[DelayKernel, DelayKernel]
    history: State
    order_q: float = 1.0
    transient_fraction: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ConfigError(f"t_end must be > 0, got {self.t_end!r}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be > 0, got {self.dt!r}")
        if not 0 < self.order_q <= 1:
            raise ConfigError(f"order q must lie in (0, 1], got {self.order_q!r}")
        if not 0 <= self.transient_fraction < 1:
            raise ConfigError(f"transient_fraction must lie in [0, 1), got {self.transient_fraction!r}")
        if len(self.kernels) != 2:
            raise ConfigError("exactly two kernels (h1 on CORT, h2 on ACTH) are required")
        if len(self.history) != 4 or any(not math.isfinite(v) or v < 0 for v in self.history):
            raise ConfigError(f"history must be four finite non-negative values, got {self.history!r}")
        object.__setattr__(self, "history", State(*map(float, self.history)))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def check_step(self) -> None:
        """Raise unless dt resolves every positive Dirac delay and t_end covers the memory."""
        lags = [k.tau for k in self.kernels if isinstance(k, DiracKernel) and k.tau > 0]
        if lags and self.dt > min(lags) / 10:
            raise StepTooLarge(f"dt={self.dt} exceeds min positive delay / 10 = {min(lags) / 10}")
        longest = max(k.mean for k in self.kernels)
        if self.t_end < 10 * longest:
            raise ConfigError(f"t_end={self.t_end} is shorter than 10 x max mean delay ({longest})")

    def with_kernels(self, h1: DelayKernel, h2: DelayKernel) -> "SimConfig":
        return replace(self, kernels=(h1, h2))


@dataclass
class Trajectory:
    times: np.ndarray  # (N,)
    states: np.ndarray  # (N, 4): crh, acth, gr, cort
    chain: Optional[np.ndarray] = None  # (N, p1 + p2), chain solver only

    def __len__(self) -> int:
        return len(self.times)

    @property
    def cort(self) -> np.ndarray:
        return self.states[:, 3]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.states, columns=STATE_COLUMNS)
        frame.insert(0, "t", self.times)
        return frame


class TailClass(str, Enum):
    CONVERGING = "Converging"
    OSCILLATING = "Oscillating"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class TailSummary:
    verdict: TailClass
    amplitude: float  # peak-to-peak CORT over the second half of the tail
    first_amplitude: float  # same over the first half
    period: Optional[float] = None  # min
    offset: float = 0.0  # sup-norm distance of the tail-mean state from the reference state
    departed: bool = False  # offset above the departure tolerance

    def to_dict(self) -> dict:
        return {
            "class": self.verdict.value,
            "amplitude": float(self.amplitude),
            "first_amplitude": float(self.first_amplitude),
            "period": None if self.period is None else float(self.period),
            "offset": float(self.offset),
            "departed": bool(self.departed),
        }
