"""Domain types for the open double-well simulation.

All types are frozen dataclasses; arrays held by them are copied and marked
read-only on construction so instances can be shared between workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np


class ConfigError(ValueError):
    """A configuration value violates a type invariant."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WellParams:
    """Coefficients of V(Q) = -mu Q^2 + lam Q^4, particle mass and hbar.

    ``hbar == 0`` selects classical mode, in which the fluctuation pair
    (rho, Pi) is absent from the dynamics.
    """

    mu: float = 1.0
    lam: float = 1.0
    M: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        for name in ("mu", "lam", "M", "hbar"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite", key=name)
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0", key="lambda")
        if self.lam == 0 and self.mu >= 0:
            raise ConfigError("lambda=0 requires mu<0", key="lambda")
        if self.M <= 0:
            raise ConfigError("mass must be > 0", key="mass")
        if self.hbar < 0:
            raise ConfigError("hbar must be >= 0", key="hbar")

    @property
    def classical(self) -> bool:
        return self.hbar == 0.0

    @property
    def q_min(self) -> float:
        """Bare well minimum sqrt(mu / 2 lam); 0 when the well is monostable."""
        if self.lam == 0 or self.mu <= 0:
            return 0.0
        return math.sqrt(self.mu / (2.0 * self.lam))

    @property
    def tau(self) -> float:
        """Intrawell period 2 pi / sqrt(2 mu) used as the unit run length."""
        if self.mu <= 0:
            raise ValueError("intrawell period is defined only for mu > 0")
        return 2.0 * math.pi / math.sqrt(2.0 * self.mu)


@dataclass(frozen=True)
class BathSpec:
    n_osc: int = 0
    m: float = 1e-9
    omega_min: float = 0.0
    omega_max: float = 10.0
    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n_osc) != self.n_osc or self.n_osc < 0:
            raise ConfigError("n_osc must be a non-negative integer", key="n_osc")
        if not self.m > 0:
            raise ConfigError("bath mass must be > 0", key="bath_mass")
        if not self.omega_min >= 0:
            raise ConfigError("omega_min must be >= 0", key="omega_min")
        if self.omega_min > self.omega_max:
            raise ConfigError("omega bounds inverted", key="omega_max")
        if not math.isfinite(self.omega_max):
            raise ConfigError("omega_max must be finite", key="omega_max")
        if not self.temperature >= 0:
            raise ConfigError("temperature must be >= 0", key="temperature")
        if int(self.seed) != self.seed:
            raise ConfigError("seed must be an integer", key="seed")

    @property
    def omega0(self) -> float:
        return 0.5 * (self.omega_min + self.omega_max)

    @property
    def delta_omega(self) -> float:
        return self.omega_max - self.omega_min


@dataclass(frozen=True)
class BathState:
    omegas: np.ndarray
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omegas", _frozen_array(self.omegas))
        object.__setattr__(self, "q", _frozen_array(self.q))
        object.__setattr__(self, "p", _frozen_array(self.p))
        if not (len(self.omegas) == len(self.q) == len(self.p)):
            raise ValueError(
                f"bath arrays differ in length: {len(self.omegas)}, {len(self.q)}, {len(self.p)}"
            )

    def __len__(self) -> int:
        return len(self.omegas)

    def __eq__(self, other):
        if not isinstance(other, BathState):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("omegas", "q", "p")
        )

    __hash__ = None

    @classmethod
    def empty(cls) -> "BathState":
        return cls(np.empty(0), np.empty(0), np.empty(0))


@dataclass(frozen=True, eq=False)
class ExtendedState:
    """Centroid (Q, P), fluctuation pair (rho, Pi) and bath coordinates at time t."""

    t: float
    Q: float
    P: float
    rho: float = 0.0
    Pi: float = 0.0
    bath: BathState = field(default_factory=BathState.empty)

    def uncertainty_product(self, hbar: float) -> float:
        """sqrt(rho^2 Pi^2 + hbar^2 / 4), bounded below by hbar / 2."""
        return math.sqrt((self.rho * self.Pi) ** 2 + 0.25 * hbar * hbar)

    def satisfies_uncertainty(self, hbar: float) -> bool:
        return self.uncertainty_product(hbar) >= 0.5 * hbar

    def check_mode(self, params: WellParams, rho_floor: float = 0.0) -> None:
        if params.classical:
            if self.rho != 0.0 or self.Pi != 0.0:
                raise ConfigError("classical mode (hbar=0) requires rho=Pi=0", key="rho0")
        elif not self.rho > rho_floor:
            raise ConfigError(f"quantum mode requires rho > {rho_floor:g}", key="rho0")

    def mirrored(self) -> "ExtendedState":
        """Parity image (Q, P, q_n, p_n) -> (-Q, -P, -q_n, -p_n)."""
        b = self.bath
        return ExtendedState(
            self.t, -self.Q, -self.P, self.rho, self.Pi, BathState(b.omegas, -b.q, -b.p)
        )

    def time_reversed(self) -> "ExtendedState":
        """Momentum flip (P, Pi, p_n) -> (-P, -Pi, -p_n)."""
        b = self.bath
        return ExtendedState(
            self.t, self.Q, -self.P, self.rho, -self.Pi, BathState(b.omegas, b.q, -b.p)
        )

    def __eq__(self, other):
        if not isinstance(other, ExtendedState):
            return NotImplemented
        return (self.t, self.Q, self.P, self.rho, self.Pi) == (
            other.t, other.Q, other.P, other.rho, other.Pi
        ) and self.bath == other.bath

    __hash__ = None


@dataclass(frozen=True)
class IntegratorConfig:
    abs_tol: float = 1e-11
    rel_tol: float = 1e-11
    t_end: float = 1.0
    sample_dt: float = 0.01
    rho_floor: float = 1e-12

    def __post_init__(self):
        for name in ("abs_tol", "rel_tol", "t_end", "sample_dt"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be > 0", key=name)
        if not self.rho_floor >= 0:
            raise ConfigError("rho_floor must be >= 0", key="rho_floor")

    @property
    def sample_times(self) -> np.ndarray:
        n = int(math.floor(self.t_end / self.sample_dt * (1 + 1e-12))) + 1
        return np.arange(n) * self.sample_dt


TRAJECTORY_COLUMNS = ("t", "Q", "P", "rho", "Pi", "H")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled observables; ``data`` has columns ``TRAJECTORY_COLUMNS``.

    ``final`` is the full state at ``t_end`` (which need not be a sample time).
    """

    data: np.ndarray
    meta: Mapping[str, Any]
    final: ExtendedState | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=float, copy=True)
        if data.ndim != 2 or data.shape[1] != len(TRAJECTORY_COLUMNS):
            raise ValueError(f"trajectory data must have shape (n, {len(TRAJECTORY_COLUMNS)})")
        t = data[:, 0]
        if len(t) > 1:
            steps = np.diff(t)
            if not np.all(steps > 0):
                raise ValueError("trajectory times must be strictly increasing")
            dt = steps.mean()
            if np.max(np.abs(steps - dt)) > 1e-9 * dt * max(1.0, len(t)):
                raise ValueError("trajectory samples are not uniformly spaced")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def Q(self) -> np.ndarray:
        return self.data[:, 1]

    @property
    def P(self) -> np.ndarray:
        return self.data[:, 2]

    @property
    def rho(self) -> np.ndarray:
        return self.data[:, 3]

    @property
    def Pi(self) -> np.ndarray:
        return self.data[:, 4]

    @property
    def H(self) -> np.ndarray:
        return self.data[:, 5]

    @property
    def sample_dt(self) -> float:
        if len(self) < 2:
            raise ValueError("sample spacing undefined for fewer than two samples")
        return float(self.t[1] - self.t[0])


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    freqs: np.ndarray
    power: np.ndarray
    peak_freq: float
    integral: float
    flatness: float

    def __post_init__(self):
        object.__setattr__(self, "freqs", _frozen_array(self.freqs))
        object.__setattr__(self, "power", _frozen_array(self.power))
        if len(self.freqs) != len(self.power):
            raise ValueError("freqs and power differ in length")
        if len(self.power) and np.min(self.power) < 0:
            raise ValueError("spectral power must be non-negative")
        if not 0.0 <= self.flatness <= 1.0:
            raise ValueError(f"flatness {self.flatness} outside [0, 1]")


# --- flat configuration bundle -------------------------------------------

# config key -> (section, attribute, type)
CONFIG_KEYS: dict[str, tuple[str, str, type]] = {
    "mu": ("params", "mu", float),
    "lambda": ("params", "lam", float),
    "mass": ("params", "M", float),
    "hbar": ("params", "hbar", float),
    "n_osc": ("bath", "n_osc", int),
    "bath_mass": ("bath", "m", float),
    "omega_min": ("bath", "omega_min", float),
    "omega_max": ("bath", "omega_max", float),
    "temperature": ("bath", "temperature", float),
    "seed": ("bath", "seed", int),
    "abs_tol": ("integrator", "abs_tol", float),
    "rel_tol": ("integrator", "rel_tol", float),
    "t_end": ("integrator", "t_end", float),
    "sample_dt": ("integrator", "sample_dt", float),
    "q0": ("initial", "q0", float),
    "p0": ("initial", "p0", float),
    "rho0": ("initial", "rho0", float),
    "pi0": ("initial", "pi0", float),
}


@dataclass(frozen=True)
class InitialCondition:
    q0: float = 1.0
    p0: float = 0.0
    rho0: float = 0.03
    pi0: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs: the validated configuration bundle."""

    params: WellParams = field(default_factory=WellParams)
    bath: BathSpec = field(default_factory=BathSpec)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    initial: InitialCondition = field(default_factory=InitialCondition)

    def __post_init__(self):
        validate(self.params, self.bath, self.integrator)
        ic = self.initial
        if self.params.classical:
            if ic.rho0 != 0.0 or ic.pi0 != 0.0:
                raise ConfigError("classical mode (hbar=0) requires rho0=pi0=0", key="rho0")
        elif not ic.rho0 > self.integrator.rho_floor:
            raise ConfigError("quantum mode requires rho0 > rho_floor", key="rho0")

    def to_mapping(self) -> dict[str, float | int]:
        return {
            key: getattr(getattr(self, section), attr)
            for key, (section, attr, _) in CONFIG_KEYS.items()
        }

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "RunConfig":
        sections: dict[str, dict[str, Any]] = {
            "params": {}, "bath": {}, "integrator": {}, "initial": {}
        }
        for key, value in values.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown key '{key}'", key=key)
            section, attr, kind = CONFIG_KEYS[key]
            sections[section][attr] = _coerce(key, value, kind)
        return cls(
            params=WellParams(**sections["params"]),
            bath=BathSpec(**sections["bath"]),
            integrator=IntegratorConfig(**sections["integrator"]),
            initial=InitialCondition(**sections["initial"]),
        )

    def to_text(self) -> str:
        """Flat ``key = value`` text; floats use repr so parsing is exact."""
        return "".join(f"{k} = {v!r}\n" for k, v in self.to_mapping().items())

    def initial_state(self, bath: BathState | None = None) -> ExtendedState:
        ic = self.initial
        return ExtendedState(
            0.0, ic.q0, ic.p0, ic.rho0, ic.pi0, bath if bath is not None else BathState.empty()
        )


def _coerce(key: str, value: Any, kind: type):
    if kind is int:
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
            try:
                as_float = float(value)
            except ValueError:
                raise ConfigError(f"cannot parse {value!r} as integer", key=key) from None
        else:
            as_float = float(value)
        if not as_float.is_integer():
            raise ConfigError(f"{value!r} is not an integer", key=key)
        return int(as_float)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot parse {value!r} as a number", key=key) from None


def validate(params: WellParams, spec: BathSpec, cfg: IntegratorConfig):
    """Return the triple unchanged once every invariant has been checked.

    Construction already enforces the invariants; this re-runs the checks so
    objects built through ``dataclasses.replace`` or ``object.__setattr__`` are
    caught too.
    """
    for obj in (params, spec, cfg):
        obj.__post_init__()
    return params, spec, cfg
