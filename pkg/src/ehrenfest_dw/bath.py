"""Finite harmonic bath: frequency draws, thermal initial states, energy."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .model import BathSpec, BathState


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for ``seed``; extra integers select an independent sub-stream.

    Sub-streams use numpy's SeedSequence spawn keys, so (seed, trial) pairs
    give statistically independent generators regardless of call order.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(stream)))


def sample_frequencies(spec: BathSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.omega_min == spec.omega_max:
        return np.full(spec.n_osc, float(spec.omega_min))
    return rng.uniform(spec.omega_min, spec.omega_max, spec.n_osc)


def sample_thermal_state(omegas, m: float, T: float, Q0: float, rng: np.random.Generator) -> BathState:
    """Boltzmann-distributed oscillator states centred on the particle at Q0.

    Each oscillator gets an energy E ~ Exp(mean T) and phase phi ~ U[0, 2pi):
    q - Q0 = sqrt(2E/(m w^2)) sin(phi), p = sqrt(2 m E) cos(phi).
    The draws are made even at T = 0 so a given seed consumes the same
    stream at every temperature.
    """
    if T < 0 or m <= 0:
        raise ValueError("need T >= 0 and m > 0")
    omegas = np.asarray(omegas, dtype=float)
    n = len(omegas)
    energy = T * rng.standard_exponential(n)
    phase = rng.uniform(0.0, 2.0 * math.pi, n)
    sin_phi, cos_phi = np.sin(phase), np.cos(phase)
    p = np.sqrt(2.0 * m * energy) * cos_phi
    q = np.full(n, float(Q0))
    moving = omegas > 0
    q[moving] += np.sqrt(2.0 * energy[moving] / m) / omegas[moving] * sin_phi[moving]
    # free particles (w = 0) carry all their energy as momentum
    free = ~moving
    p[free] = np.copysign(np.sqrt(2.0 * m * energy[free]), cos_phi[free])
    return BathState(omegas, q, p)


def sample_bath(spec: BathSpec, Q0: float, *stream: int) -> BathState:
    """Frequencies and thermal state for ``spec`` from one seeded stream."""
    rng = make_rng(spec.seed, *stream)
    omegas = sample_frequencies(spec, rng)
    return sample_thermal_state(omegas, spec.m, spec.temperature, Q0, rng)


def oscillator_energies(bath: BathState, Q: float, m: float) -> np.ndarray:
    d = bath.q - Q
    return 0.5 * bath.p**2 / m + 0.5 * m * bath.omegas**2 * d * d


def bath_energy(bath: BathState, Q: float, m: float) -> float:
    """sum_n p_n^2/2m + (m/2) w_n^2 (q_n - Q)^2."""
    return math.fsum(oscillator_energies(bath, Q, m).tolist())


def write_bath_csv(bath: BathState, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "omega", "q", "p"])
        for i, (w, q, p) in enumerate(zip(bath.omegas, bath.q, bath.p)):
            writer.writerow([i, repr(float(w)), repr(float(q)), repr(float(p))])


def read_bath_csv(path) -> BathState:
    rows = list(csv.DictReader(Path(path).read_text().splitlines()))
    rows.sort(key=lambda r: int(r["index"]))
    return BathState(
        [float(r["omega"]) for r in rows],
        [float(r["q"]) for r in rows],
        [float(r["p"]) for r in rows],
    )
