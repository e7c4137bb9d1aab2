"""Quartic double-well potential and its bath renormalization."""

from __future__ import annotations

import math

import numpy as np

from .model import WellParams

_CANCEL_EPS = 8 * np.finfo(float).eps


def potential_energy(Q, params: WellParams):
    """V(Q) = -mu Q^2 + lam Q^4. Accepts scalars or arrays."""
    Q2 = Q * Q
    return -params.mu * Q2 + params.lam * Q2 * Q2


def potential_derivatives(Q, params: WellParams):
    """Return (V', V'', V''', V''''); higher derivatives vanish identically."""
    mu, lam = params.mu, params.lam
    return (
        -2.0 * mu * Q + 4.0 * lam * Q * Q * Q,
        -2.0 * mu + 12.0 * lam * Q * Q,
        24.0 * lam * Q,
        24.0 * lam + 0.0 * Q,
    )


def potential_derivative(order: int, Q, params: WellParams):
    """Derivative of any order n >= 0; zero for n >= 5."""
    if order < 0:
        raise ValueError("derivative order must be >= 0")
    if order == 0:
        return potential_energy(Q, params)
    if order > 4:
        return 0.0 * Q
    return potential_derivatives(Q, params)[order - 1]


def effective_quadratic_coefficient(params: WellParams, omegas, m: float) -> float:
    """mu - (m/2) sum(omega_n^2): the bath-shifted quadratic coefficient."""
    w = np.asarray(omegas, dtype=float)
    return float(renormalized_mu(params.mu, 0.5 * m * math.fsum((w * w).tolist())))


def renormalized_mu(mu, shift):
    """mu - shift, with results inside the operands' rounding noise set to 0.

    Vectorized over ``shift``.  A bath tuned exactly to the threshold (e.g.
    800 oscillators at w=5 with m=1e-4, mu=1) then lands on 0 instead of a
    sign decided by rounding.
    """
    shift = np.asarray(shift, dtype=float)
    mu_eff = mu - shift
    cancelled = np.abs(mu_eff) <= _CANCEL_EPS * np.maximum(abs(mu), shift)
    return np.where(cancelled, 0.0, mu_eff)


def critical_oscillator_number(mu: float, m: float, omega0: float, delta_omega: float) -> float:
    """Mean oscillator count at which a uniform bath makes the well monostable.

    Returns the real-valued mean ``2 mu / (m omega0^2) / (1 + dw^2 / (12 omega0^2))``.
    """
    if mu <= 0:
        raise ValueError("critical oscillator number requires mu > 0 (no bistability otherwise)")
    if m <= 0 or omega0 <= 0:
        raise ValueError("m and omega0 must be positive")
    if not 0 <= delta_omega <= 2 * omega0:
        raise ValueError("bandwidth must satisfy 0 <= delta_omega <= 2 omega0")
    return 2.0 * mu / (m * omega0 * omega0) / (1.0 + delta_omega**2 / (12.0 * omega0 * omega0))


def effective_minimum_abs(mu_eff: float, lam: float) -> float:
    """|Q_min| of -mu_eff Q^2 + lam Q^4; zero on the monostable side."""
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    if mu_eff <= 0:
        return 0.0
    return math.sqrt(mu_eff / (2.0 * lam))


def barrier_depth(mu_eff: float, lam: float) -> float:
    """|V(Q_min)| = mu_eff^2 / (4 lam), zero when monostable."""
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    if mu_eff <= 0:
        return 0.0
    return mu_eff * mu_eff / (4.0 * lam)
