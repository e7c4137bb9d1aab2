"""Equations of motion in the extended phase space and their integration.

The state vector is laid out as ``[Q, P, rho, Pi, q_1..q_N, p_1..p_N]`` in
quantum mode and ``[Q, P, q_1..q_N, p_1..p_N]`` in classical mode (hbar = 0),
where the fluctuation pair is structurally absent.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from math import factorial

import numpy as np
from numba import njit
from scipy.integrate import DOP853

from .model import BathState, ExtendedState, IntegratorConfig, Trajectory, WellParams
from .potential import potential_derivative


class IntegrationError(RuntimeError):
    """Numerical failure during a run; ``t`` is the time it happened."""

    def __init__(self, message: str, t: float):
        self.t = t
        super().__init__(f"{message} at t={t!r}")


class StepSizeUnderflow(IntegrationError):
    pass


class FluctuationCollapse(IntegrationError):
    """rho reached the floor where hbar^2 / (4 M rho^3) is singular."""


class NonFiniteState(IntegrationError):
    pass


@dataclass(frozen=True, eq=False)
class DerivativeVector:
    dQ: float
    dP: float
    dRho: float
    dPi: float
    dq: np.ndarray
    dp: np.ndarray

    def as_array(self, classical: bool = False) -> np.ndarray:
        head = [self.dQ, self.dP] if classical else [self.dQ, self.dP, self.dRho, self.dPi]
        return np.concatenate([head, self.dq, self.dp])


@njit(cache=True)
def _bath_rates(w2, q, Q, m, dp):
    """Fill dp = -m w^2 (q - Q); return sum w^2 (q - Q) with Neumaier compensation."""
    s = 0.0
    c = 0.0
    for i in range(q.shape[0]):
        x = w2[i] * (q[i] - Q)
        dp[i] = -m * x
        t = s + x
        if abs(s) >= abs(x):
            c += (s - t) + x
        else:
            c += (x - t) + s
        s = t
    return s + c


class ExtendedSystem:
    """Particle + bath with frequencies fixed; maps flat vectors to rates and energy."""

    def __init__(self, params: WellParams, omegas, m: float):
        self.params = params
        self.m = float(m)
        self.omegas = np.asarray(omegas, dtype=float)
        self.w2 = np.ascontiguousarray(self.omegas * self.omegas)
        self.w2_sum = math.fsum(self.w2.tolist())
        self.n = len(self.omegas)
        self.classical = params.classical
        self.head = 2 if self.classical else 4

    @property
    def dim(self) -> int:
        return self.head + 2 * self.n

    def pack(self, state: ExtendedState) -> np.ndarray:
        if len(state.bath) != self.n:
            raise ValueError(f"state has {len(state.bath)} oscillators, system has {self.n}")
        head = [state.Q, state.P] if self.classical else [state.Q, state.P, state.rho, state.Pi]
        return np.concatenate([head, state.bath.q, state.bath.p]).astype(float)

    def unpack(self, y: np.ndarray, t: float) -> ExtendedState:
        h, n = self.head, self.n
        bath = BathState(self.omegas, y[h:h + n], y[h + n:])
        if self.classical:
            return ExtendedState(t, float(y[0]), float(y[1]), 0.0, 0.0, bath)
        return ExtendedState(t, float(y[0]), float(y[1]), float(y[2]), float(y[3]), bath)

    def rhs(self, t, y):
        p = self.params
        mu, lam, M = p.mu, p.lam, p.M
        h, n, m = self.head, self.n, self.m
        out = np.empty_like(y)
        Q, P = y[0], y[1]
        out[h:h + n] = y[h + n:] / m
        force = m * _bath_rates(self.w2, y[h:h + n], Q, m, out[h + n:]) if n else 0.0
        out[0] = P / M
        if self.classical:
            out[1] = 2.0 * mu * Q - 4.0 * lam * Q * Q * Q + force
            return out
        rho, Pi = y[2], y[3]
        rho2 = rho * rho
        out[1] = 2.0 * (mu - 6.0 * lam * rho2) * Q - 4.0 * lam * Q * Q * Q + force
        out[2] = Pi / M
        out[3] = (
            p.hbar * p.hbar / (4.0 * M * rho2 * rho)
            + 2.0 * (mu - 6.0 * lam * Q * Q - 0.5 * m * self.w2_sum) * rho
            - 12.0 * lam * rho2 * rho
        )
        return out

    def energy(self, y: np.ndarray):
        """Extended Hamiltonian of a flat state, or of each column of a (dim, k) array."""
        p = self.params
        mu, lam, M = p.mu, p.lam, p.M
        h, n, m = self.head, self.n, self.m
        Q, P = y[0], y[1]
        Q2 = Q * Q
        H = P * P / (2.0 * M) - mu * Q2 + lam * Q2 * Q2
        if n:
            q, pn = y[h:h + n], y[h + n:]
            d = q - Q
            w2 = self.w2 if y.ndim == 1 else self.w2[:, None]
            H = H + 0.5 * m * np.sum(w2 * d * d, axis=0) + np.sum(pn * pn, axis=0) / (2.0 * m)
        if not self.classical:
            rho, Pi = y[2], y[3]
            rho2 = rho * rho
            H = H + (
                6.0 * lam * Q2 * rho2
                + Pi * Pi / (2.0 * M)
                + p.hbar * p.hbar / (8.0 * M * rho2)
                - mu * rho2
                + 3.0 * lam * rho2 * rho2
                + 0.5 * m * self.w2_sum * rho2
            )
        return H

    def derivative(self, state: ExtendedState) -> DerivativeVector:
        d = self.rhs(state.t, self.pack(state))
        h, n = self.head, self.n
        if self.classical:
            return DerivativeVector(d[0], d[1], 0.0, 0.0, d[h:h + n], d[h + n:])
        return DerivativeVector(d[0], d[1], d[2], d[3], d[h:h + n], d[h + n:])


class MaxNormDOP853(DOP853):
    """DOP853 whose step acceptance uses the max over components, not the RMS.

    With thousands of bath coordinates an RMS norm dilutes the particle's
    local error by sqrt(dim); the max norm holds every component to
    abs_tol + rel_tol |y_i|.  Non-finite stage values reject the step.
    """

    def _estimate_error_norm(self, K, h, scale):
        err5 = np.dot(K.T, self.E5) / scale
        err3 = np.dot(K.T, self.E3) / scale
        if not np.all(np.isfinite(err5)):
            return np.inf
        denom = np.hypot(err5, 0.1 * err3)
        err = np.divide(err5 * err5, denom, out=np.zeros_like(denom), where=denom > 0)
        return abs(h) * float(err.max())


def _check_rho(state: ExtendedState, params: WellParams, rho_floor: float) -> None:
    if not params.classical and not state.rho > rho_floor:
        raise FluctuationCollapse(f"rho={state.rho!r} is at or below the floor {rho_floor!r}", state.t)


def rhs_extended(state: ExtendedState, params: WellParams, m: float, rho_floor: float = 1e-12) -> DerivativeVector:
    """Rates of the extended Hamilton equations including bath back-action."""
    _check_rho(state, params, rho_floor)
    return ExtendedSystem(params, state.bath.omegas, m).derivative(state)


def rhs_general_sum(state: ExtendedState, params: WellParams, n_max: int, rho_floor: float = 1e-12) -> DerivativeVector:
    """Closed-system rates from the truncated Gaussian-moment series.

    dP/dt  = -sum_n V^(2n+1)(Q) rho^(2n) / (n! 2^n)
    dPi/dt = hbar^2/(4 M rho^3) - sum_n V^(2n+2)(Q) rho^(2n+1) / (n! 2^n)
    summed over n = 0..n_max.  Kept deliberately independent of
    ``ExtendedSystem.rhs`` so the two can be checked against each other.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    if len(state.bath):
        raise ValueError("the general-sum form covers the closed system only")
    _check_rho(state, params, rho_floor)
    Q, rho, M = state.Q, state.rho, params.M
    empty = np.empty(0)
    if params.classical:
        return DerivativeVector(state.P / M, -potential_derivative(1, Q, params), 0.0, 0.0, empty, empty)
    force = 0.0
    curvature = 0.0
    for k in range(n_max + 1):
        weight = 1.0 / (factorial(k) * 2.0**k)
        force += potential_derivative(2 * k + 1, Q, params) * rho ** (2 * k) * weight
        curvature += potential_derivative(2 * k + 2, Q, params) * rho ** (2 * k + 1) * weight
    dPi = params.hbar**2 / (4.0 * M * rho**3) - curvature
    return DerivativeVector(state.P / M, -force, state.Pi / M, dPi, empty, empty)


def extended_hamiltonian(state: ExtendedState, params: WellParams, m: float, rho_floor: float = 1e-12) -> float:
    _check_rho(state, params, rho_floor)
    system = ExtendedSystem(params, state.bath.omegas, m)
    return float(system.energy(system.pack(state)))


def integrate(
    state0: ExtendedState,
    params: WellParams,
    m: float,
    cfg: IntegratorConfig,
    meta: dict | None = None,
) -> Trajectory:
    """Adaptive DOP853 integration (max-norm error control) from ``state0`` for ``cfg.t_end``.

    Output is sampled every ``cfg.sample_dt`` (from ``state0.t``) through the
    method's dense interpolant.  Any stage that sees rho <= rho_floor makes
    the step fail the error test, so the step is retried smaller; the run
    only aborts once the step size underflows.
    """
    state0.check_mode(params, cfg.rho_floor)
    system = ExtendedSystem(params, state0.bath.omegas, m)
    y0 = system.pack(state0)
    if not np.all(np.isfinite(y0)):
        raise NonFiniteState("initial state has non-finite components", state0.t)
    t0 = state0.t
    t_final = t0 + cfg.t_end
    times = np.minimum(t0 + cfg.sample_times, t_final)

    floor_hit = [None]
    bad_rate = [None]

    def guarded(t, y):
        if not system.classical and not y[2] > cfg.rho_floor:
            floor_hit[0] = t
            return np.full_like(y, np.nan)
        out = system.rhs(t, y)
        if not np.all(np.isfinite(out)):
            bad_rate[0] = t
        return out

    solver = MaxNormDOP853(guarded, t0, y0, t_final, rtol=cfg.rel_tol, atol=cfg.abs_tol)
    samples = np.empty((len(times), system.dim))
    samples[0] = y0
    k = 1
    while solver.status == "running":
        message = solver.step()
        if solver.status == "failed":
            t_fail = solver.t
            if floor_hit[0] is not None:
                raise FluctuationCollapse(f"rho fell below floor {cfg.rho_floor!r}", floor_hit[0])
            if bad_rate[0] is not None:
                raise NonFiniteState("non-finite rates", bad_rate[0])
            raise StepSizeUnderflow(message or "step size underflow", t_fail)
        if not np.all(np.isfinite(solver.y)):
            raise NonFiniteState("non-finite state components", solver.t)
        if k < len(times) and times[k] <= solver.t:
            j = int(np.searchsorted(times, solver.t, side="right"))
            samples[k:j] = solver.dense_output()(times[k:j]).T
            k = j

    data = np.empty((len(times), 6))
    data[:, 0] = times
    data[:, 1] = samples[:, 0]
    data[:, 2] = samples[:, 1]
    if system.classical:
        data[:, 3:5] = 0.0
    else:
        data[:, 3] = samples[:, 2]
        data[:, 4] = samples[:, 3]
    data[:, 5] = system.energy(samples.T)

    info = {"params": asdict(params), "bath_mass": m, "integrator": asdict(cfg)}
    if meta:
        info.update(meta)
    return Trajectory(data, info, final=system.unpack(solver.y.copy(), t_final))
