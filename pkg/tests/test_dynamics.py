import math
from dataclasses import replace

import numpy as np
import pytest

from ehrenfest_dw.bath import sample_bath
from ehrenfest_dw.dynamics import (
    ExtendedSystem,
    FluctuationCollapse,
    NonFiniteState,
    extended_hamiltonian,
    integrate,
    rhs_extended,
    rhs_general_sum,
)
from ehrenfest_dw.model import BathSpec, BathState, ExtendedState, IntegratorConfig, WellParams

UNIT = WellParams(1.0, 1.0, 1.0, 1.0)
CLASSICAL = WellParams(1.0, 1.0, 1.0, 0.0)
Q_MIN = 1 / math.sqrt(2)


def random_bath(n, seed, T=1e-3, m=1e-3, Q0=0.5):
    return sample_bath(BathSpec(n, m, 0, 10, T, seed), Q0)


def grad_H(state: ExtendedState, params: WellParams, m: float):
    """Hand-differentiated gradient of the extended Hamiltonian.

    Returned in the flat order (Q, P, rho, Pi, q, p).
    """
    mu, lam, M, hbar = params.mu, params.lam, params.M, params.hbar
    Q, P, rho, Pi = state.Q, state.P, state.rho, state.Pi
    w2 = state.bath.omegas**2
    d = state.bath.q - Q
    dQ = -2 * mu * Q + 4 * lam * Q**3 + 12 * lam * Q * rho**2 - m * np.sum(w2 * d)
    dP = P / M
    drho = 12 * lam * Q**2 * rho - hbar**2 / (4 * M * rho**3) - 2 * mu * rho + 12 * lam * rho**3 + m * np.sum(w2) * rho
    dPi = Pi / M
    dq = m * w2 * d
    dp = state.bath.p / m
    return np.concatenate([[dQ, dP, drho, dPi], dq, dp])


def random_state(rng, n=0, m=1e-3):
    bath = random_bath(n, int(rng.integers(1 << 30)), m=m) if n else BathState.empty()
    return ExtendedState(0.0, *rng.uniform(0.01, 2, 1), *rng.uniform(-2, 2, 1),
                         *rng.uniform(0.01, 2, 1), *rng.uniform(-2, 2, 1), bath)


def test_classical_stationary_point():
    d = rhs_extended(ExtendedState(0, Q_MIN, 0.0), CLASSICAL, 1e-9)
    assert d.dQ == 0.0 and abs(d.dP) < 1e-15
    assert d.dRho == 0.0 and d.dPi == 0.0


def test_fluctuation_force_hand_value():
    state = ExtendedState(0, Q_MIN, 0.0, 0.03, 0.0)
    d = rhs_extended(state, UNIT, 1e-9)
    hand = 1 / (4 * 0.03**3) + 2 * (1 - 6 * 0.5) * 0.03 - 12 * 0.03**3
    assert d.dPi == pytest.approx(hand, rel=1e-14)
    assert d.dPi == pytest.approx(9259.14, abs=0.005)
    # dPi/dt = -dH/drho by central differences
    h = 1e-7
    up = extended_hamiltonian(replace(state, rho=0.03 + h), UNIT, 1e-9)
    down = extended_hamiltonian(replace(state, rho=0.03 - h), UNIT, 1e-9)
    assert d.dPi == pytest.approx(-(up - down) / (2 * h), rel=1e-7)


def test_hamiltonian_hand_values():
    assert extended_hamiltonian(ExtendedState(0, Q_MIN, 0.0), CLASSICAL, 1e-9) == pytest.approx(-0.25, abs=1e-15)
    rho = 0.03
    terms = [-0.5 + 0.25, 6 * 0.5 * rho**2, 1 / (8 * rho**2), -(rho**2), 3 * rho**4]
    value = extended_hamiltonian(ExtendedState(0, Q_MIN, 0.0, rho, 0.0), UNIT, 1e-9)
    assert value == pytest.approx(sum(terms), rel=1e-14)
    assert value == pytest.approx(138.6407, abs=1e-4)


def test_classical_hamiltonian_omits_fluctuation_terms():
    bath = random_bath(5, 1)
    state = ExtendedState(0, 0.3, 0.2, 0.0, 0.0, bath)
    from ehrenfest_dw.bath import bath_energy
    expected = 0.02 - 0.09 + 0.3**4 + bath_energy(bath, 0.3, 1e-3)
    assert extended_hamiltonian(state, CLASSICAL, 1e-3) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("params", [UNIT, CLASSICAL, WellParams(1.3, 0.4, 2.0, 0.6)])
def test_rates_are_hamiltonian_flow(params):
    """rhs equals the symplectic gradient of H, by central differences."""
    rng = np.random.default_rng(2)
    m = 1e-2
    state = random_state(rng, n=4, m=m)
    if params.classical:
        state = replace(state, rho=0.0, Pi=0.0)
    system = ExtendedSystem(params, state.bath.omegas, m)
    y = system.pack(state)
    rates = system.rhs(0.0, y)
    h = 1e-6
    grad = np.empty_like(y)
    for i in range(len(y)):
        e = np.zeros_like(y)
        e[i] = h
        grad[i] = (system.energy(y + e) - system.energy(y - e)) / (2 * h)
    head, n = system.head, system.n
    half = head // 2
    # dq/dt = dH/dp, dp/dt = -dH/dq for each conjugate pair
    pos = list(range(0, head, 2)) + list(range(head, head + n))
    mom = list(range(1, head, 2)) + list(range(head + n, head + 2 * n))
    assert np.allclose(rates[pos], grad[mom], rtol=1e-6, atol=1e-6)
    assert np.allclose(rates[mom], -grad[pos], rtol=1e-6, atol=1e-6)
    assert half in (1, 2)


def test_energy_is_conserved_along_rates():
    rng = np.random.default_rng(7)
    m = 1e-3
    for _ in range(100):
        state = random_state(rng, n=6, m=m)
        flow = rhs_extended(state, UNIT, m).as_array()
        H = extended_hamiltonian(state, UNIT, m)
        assert abs(np.dot(grad_H(state, UNIT, m), flow)) < 1e-10 * abs(H)


def test_general_sum_matches_closed_form():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        state = random_state(rng)
        a = rhs_extended(state, UNIT, 1e-9).as_array()
        b = rhs_general_sum(state, UNIT, n_max=2).as_array()
        worst = max(worst, np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-300)))
    assert worst < 1e-12


def test_general_sum_quartic_truncation_exact():
    state = ExtendedState(0, 0.8, -0.3, 0.4, 1.1)
    a = rhs_general_sum(state, UNIT, 2).as_array()
    b = rhs_general_sum(state, UNIT, 10).as_array()
    assert np.array_equal(a, b)


@pytest.mark.parametrize("n_max", [0, 1, 3])
def test_general_sum_harmonic(n_max):
    params = WellParams(-0.7, 0.0, 1.0, 1.0)
    state = ExtendedState(0, 0.9, 0.1, 0.6, -0.2)
    d = rhs_general_sum(state, params, n_max)
    assert d.dP == pytest.approx(2 * -0.7 * 0.9, rel=1e-15)
    assert d.dPi == pytest.approx(1 / (4 * 0.6**3) + 2 * -0.7 * 0.6, rel=1e-15)


def test_rhs_rejects_collapsed_width():
    with pytest.raises(FluctuationCollapse):
        rhs_extended(ExtendedState(0, 0.5, 0, 1e-13, 0), UNIT, 1e-9)
    with pytest.raises(FluctuationCollapse):
        extended_hamiltonian(ExtendedState(0, 0.5, 0, 0.0, 0), UNIT, 1e-9)


def test_derivative_vector_lengths_match_bath():
    bath = random_bath(7, 3)
    d = rhs_extended(ExtendedState(0, 0.5, 0, 0.3, 0, bath), UNIT, 1e-3)
    assert len(d.dq) == len(d.dp) == 7


# --- integration ---------------------------------------------------------------


def test_harmonic_classical_cosine():
    params = WellParams(-0.5, 0.0, 1.0, 0.0)
    traj = integrate(ExtendedState(0, 1.0, 0.0), params, 1.0, IntegratorConfig(t_end=10 * math.pi, sample_dt=0.01))
    assert np.max(np.abs(traj.Q - np.cos(traj.t))) < 1e-8
    assert np.all(traj.rho == 0) and np.all(traj.Pi == 0)


def test_harmonic_fluctuation_fixed_point():
    params = WellParams(-0.5, 0.0, 1.0, 1.0)
    rho_star = 0.25**0.25
    traj = integrate(ExtendedState(0, 1.0, 0.0, rho_star, 0.0), params, 1.0,
                     IntegratorConfig(t_end=10 * math.pi, sample_dt=0.01))
    assert np.max(np.abs(traj.rho - rho_star)) < 1e-8


def test_classical_rest_at_minimum():
    cfg = IntegratorConfig(t_end=5 * CLASSICAL.tau, sample_dt=0.01)
    traj = integrate(ExtendedState(0, Q_MIN, 0.0), CLASSICAL, 1e-9, cfg)
    assert np.max(np.abs(traj.Q - Q_MIN)) < 1e-10


@pytest.mark.parametrize("q0", [Q_MIN, 1.0])
def test_closed_energy_drift(q0):
    cfg = IntegratorConfig(t_end=5 * UNIT.tau, sample_dt=0.01)
    traj = integrate(ExtendedState(0, q0, 0.0, 0.03, 0.0), UNIT, 1e-9, cfg)
    assert np.max(np.abs(traj.H / traj.H[0] - 1)) < 1e3 * cfg.rel_tol


def test_open_energy_drift_small_bath():
    bath = random_bath(50, 4, T=1e-3, m=1e-4, Q0=1.0)
    cfg = IntegratorConfig(t_end=5 * UNIT.tau, sample_dt=0.05)
    traj = integrate(ExtendedState(0, 1.0, 0.0, 0.03, 0.0, bath), UNIT, 1e-4, cfg)
    assert np.max(np.abs(traj.H / traj.H[0] - 1)) < 1e3 * cfg.rel_tol


def test_uncertainty_floor_on_samples():
    cfg = IntegratorConfig(t_end=2 * UNIT.tau, sample_dt=0.01)
    traj = integrate(ExtendedState(0, 1.0, 0.0, 0.03, 0.0), UNIT, 1e-9, cfg)
    assert np.all(np.sqrt((traj.rho * traj.Pi) ** 2 + 0.25) >= 0.5)
    assert np.all(traj.rho > 0)


def round_trip(start, m, cfg):
    forward = integrate(start, UNIT, m, cfg)
    back = integrate(replace(forward.final.time_reversed(), t=0.0), UNIT, m, cfg).final.time_reversed()
    system = ExtendedSystem(UNIT, start.bath.omegas, m)
    return forward, np.abs(system.pack(back) - system.pack(start))


@pytest.mark.parametrize("rho0, pi0", [(0.5, 0.3), (1.0, 0.0)])
def test_time_reversal_round_trip(rho0, pi0):
    bath = random_bath(20, 9, T=1e-4, m=1e-4, Q0=1.0)
    cfg = IntegratorConfig(t_end=UNIT.tau, sample_dt=0.05)
    _, err = round_trip(ExtendedState(0, 1.0, 0.0, rho0, pi0, bath), 1e-4, cfg)
    assert err.max() < 1e-6


def test_time_reversal_from_fluctuation_turning_point():
    """At rho = 0.03 dPi/dt ~ hbar^2/(4 rho^3) ~ 1e4, so Pi is judged against its own range."""
    cfg = IntegratorConfig(t_end=UNIT.tau, sample_dt=0.01)
    forward, err = round_trip(ExtendedState(0, 1.0, 0.0, 0.03, 0.0), 1e-9, cfg)
    assert max(err[0], err[1], err[2]) < 1e-6
    assert err[3] < 1e-6 * np.abs(forward.Pi).max()


def test_parity_mirrors_exactly():
    bath = random_bath(30, 10, T=1e-3, m=1e-4, Q0=0.9)
    start = ExtendedState(0, 0.9, 0.1, 0.05, -0.2, bath)
    cfg = IntegratorConfig(t_end=UNIT.tau, sample_dt=0.02)
    a = integrate(start, UNIT, 1e-4, cfg)
    b = integrate(start.mirrored(), UNIT, 1e-4, cfg)
    assert np.array_equal(a.Q, -b.Q)
    assert np.array_equal(a.P, -b.P)
    assert np.array_equal(a.rho, b.rho) and np.array_equal(a.Pi, b.Pi)
    assert np.array_equal(a.H, b.H)


@pytest.mark.parametrize("q0", [Q_MIN, 1.0])
def test_tolerance_convergence(q0):
    """Error in Q(t_end) against a tight reference shrinks as the tolerances tighten."""
    start = ExtendedState(0, q0, 0.0, 0.03, 0.0)

    def q_end(tol):
        cfg = IntegratorConfig(abs_tol=tol, rel_tol=tol, t_end=5 * UNIT.tau, sample_dt=0.1)
        return integrate(start, UNIT, 1e-9, cfg).final.Q

    reference = q_end(1e-13)
    errors = [abs(q_end(tol) - reference) for tol in (1e-6, 1e-8, 1e-10)]
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 1e-6


def test_rho_floor_violation_is_reported_with_time():
    # a floor above the inner turning point makes the width cross it for real
    params = WellParams(1.0, 1.0, 1.0, 1.0)
    cfg = IntegratorConfig(t_end=2.0, sample_dt=0.01, rho_floor=0.05)
    start = ExtendedState(0, 1.0, 0.0, 0.3, -20.0)
    with pytest.raises(FluctuationCollapse) as info:
        integrate(start, params, 1e-9, cfg)
    # the dip below the floor lasts only a few ms, so the reference is sampled finely
    free = integrate(start, params, 1e-9, replace(cfg, rho_floor=1e-12, sample_dt=1e-5))
    crossing = free.t[np.argmax(free.rho < 0.05)]
    assert abs(info.value.t - crossing) < 1e-3


def test_non_finite_initial_state():
    with pytest.raises(NonFiniteState):
        integrate(ExtendedState(0, math.nan, 0.0, 0.1, 0.0), UNIT, 1e-9, IntegratorConfig())


def test_trajectory_spacing_and_meta():
    cfg = IntegratorConfig(t_end=5 * UNIT.tau, sample_dt=0.01)
    traj = integrate(ExtendedState(0, Q_MIN, 0.0, 0.03, 0.0), UNIT, 1e-9, cfg, meta={"tag": "fig2"})
    assert len(traj) == int(cfg.t_end / cfg.sample_dt) + 1
    steps = np.diff(traj.t)
    assert np.max(np.abs(steps - 0.01)) < 1e-9 * 0.01 * len(traj)
    assert traj.meta["tag"] == "fig2" and traj.meta["params"]["hbar"] == 1.0
    assert traj.final.t == pytest.approx(cfg.t_end)
