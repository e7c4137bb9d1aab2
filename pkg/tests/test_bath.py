import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from ehrenfest_dw.bath import (
    bath_energy,
    make_rng,
    oscillator_energies,
    read_bath_csv,
    sample_bath,
    sample_frequencies,
    sample_thermal_state,
    write_bath_csv,
)
from ehrenfest_dw.model import BathSpec, BathState


def test_degenerate_band_is_constant():
    omegas = sample_frequencies(BathSpec(3, 1e-4, 5, 5), make_rng(0))
    assert omegas.tolist() == [5.0, 5.0, 5.0]


def test_frequency_second_moment():
    omegas = sample_frequencies(BathSpec(2000, 1e-4, 0, 10), make_rng(3))
    # <w^2> of U[0, 10] = w0^2 + dw^2 / 12 = 25 + 100/12
    assert np.mean(omegas**2) == pytest.approx(25 + 100 / 12, abs=1.0)
    assert omegas.min() >= 0 and omegas.max() <= 10


@given(st.floats(0, 20), st.floats(0, 20), st.integers(0, 2**32 - 1))
def test_frequencies_within_support(a, b, seed):
    lo, hi = min(a, b), max(a, b)
    omegas = sample_frequencies(BathSpec(50, 1e-4, lo, hi), make_rng(seed))
    assert np.all((omegas >= lo) & (omegas <= hi))


def test_zero_temperature_is_exact():
    bath = sample_thermal_state(np.linspace(0, 10, 7), 1e-9, 0.0, 0.37, make_rng(1))
    assert np.all(bath.q == 0.37)
    assert np.all(bath.p == 0.0)
    assert bath_energy(bath, 0.37, 1e-9) == 0.0


def test_mean_energy_matches_temperature():
    T, m, Q0 = 1e-3, 1e-9, 0.7
    omegas = sample_frequencies(BathSpec(2000, m, 0, 10), make_rng(5))
    bath = sample_thermal_state(omegas, m, T, Q0, make_rng(6))
    energies = oscillator_energies(bath, Q0, m)
    assert energies.mean() == pytest.approx(T, rel=0.05)


def test_kinetic_equipartition():
    T, m = 1e-3, 1e-9
    omegas = np.full(100_000, 3.0)
    bath = sample_thermal_state(omegas, m, T, 0.0, make_rng(7))
    # <cos^2 phi> = 1/2, so <p^2 / 2m> = T / 2
    assert np.mean(bath.p**2 / (2 * m)) == pytest.approx(T / 2, rel=0.1)


def test_energy_distribution_is_exponential():
    T, m, Q0 = 2e-3, 1e-6, -0.4
    omegas = sample_frequencies(BathSpec(100_000, m, 0.5, 10), make_rng(8))
    bath = sample_thermal_state(omegas, m, T, Q0, make_rng(9))
    energies = oscillator_energies(bath, Q0, m)
    assert stats.kstest(energies, stats.expon(scale=T).cdf).pvalue > 1e-3


def test_free_oscillators_carry_momentum_only():
    bath = sample_thermal_state(np.zeros(500), 1e-6, 1e-3, 0.2, make_rng(10))
    assert np.all(bath.q == 0.2)
    signs = np.sign(bath.p)
    assert (signs > 0).any() and (signs < 0).any()
    assert np.mean(bath.p**2 / 2e-6) == pytest.approx(1e-3, rel=0.15)


def test_single_oscillator_energy():
    bath = BathState([2.0], [1.5], [0.0])
    assert bath_energy(bath, 0.5, 0.5) == pytest.approx(1.0, rel=1e-15)


def test_energy_additivity():
    a = sample_bath(BathSpec(30, 1e-3, 0, 10, 1e-2, 1), 0.3)
    b = sample_bath(BathSpec(20, 1e-3, 0, 10, 1e-2, 2), 0.3)
    joined = BathState(
        np.concatenate([a.omegas, b.omegas]), np.concatenate([a.q, b.q]), np.concatenate([a.p, b.p])
    )
    assert bath_energy(joined, 0.3, 1e-3) == pytest.approx(
        bath_energy(a, 0.3, 1e-3) + bath_energy(b, 0.3, 1e-3), rel=1e-14
    )


dyadic = st.integers(-2**20, 2**20).map(lambda k: k / 2**10)


@given(st.lists(st.tuples(dyadic, dyadic, st.integers(0, 64).map(lambda k: k / 4)), min_size=1, max_size=30),
       dyadic, dyadic)
def test_translational_invariance(rows, Q, shift):
    omegas, q, p = (np.array(col) for col in zip(*rows))
    bath = BathState(omegas, q, p)
    moved = BathState(omegas, q + shift, p)
    assert bath_energy(moved, Q + shift, 0.5) == bath_energy(bath, Q, 0.5)


def test_sampling_is_deterministic():
    spec = BathSpec(2000, 1e-9, 0, 10, 1e-6, 42)
    assert sample_bath(spec, 1.0) == sample_bath(spec, 1.0)
    assert sample_bath(spec, 1.0, 3) == sample_bath(spec, 1.0, 3)
    assert not np.array_equal(sample_bath(spec, 1.0, 3).omegas, sample_bath(spec, 1.0, 4).omegas)


def test_frequencies_shared_across_temperatures():
    cold = sample_bath(BathSpec(100, 1e-9, 0, 10, 1e-8, 5), 1.0)
    hot = sample_bath(BathSpec(100, 1e-9, 0, 10, 1e-2, 5), 1.0)
    assert np.array_equal(cold.omegas, hot.omegas)
    assert np.allclose(oscillator_energies(hot, 1.0, 1e-9) / oscillator_energies(cold, 1.0, 1e-9), 1e6)


def test_csv_round_trip(tmp_path):
    bath = sample_bath(BathSpec(25, 1e-9, 0, 10, 1e-3, 2), -0.7)
    path = tmp_path / "bath.csv"
    write_bath_csv(bath, path)
    assert path.read_text().splitlines()[0] == "index,omega,q,p"
    assert read_bath_csv(path) == bath
