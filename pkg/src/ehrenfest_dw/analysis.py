"""Post-processing: well hopping, interwell period, spectra and parameter scans."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .bath import make_rng, sample_bath, sample_frequencies
from .dynamics import IntegrationError, integrate
from .model import BathSpec, ExtendedState, IntegratorConfig, SpectrumResult, Trajectory, WellParams
from .potential import (
    barrier_depth,
    effective_minimum_abs,
    effective_quadratic_coefficient,
    renormalized_mu,
)

POWER_FLOOR = 1e-30


def parallel_map(fn: Callable, items: Iterable, workers: int = 1) -> list:
    """Ordered map; results come back in input order for any worker count."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# --- well transitions ------------------------------------------------------


@dataclass(frozen=True)
class HopRecord:
    times: tuple[float, ...]
    censored: bool

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("transition times must be strictly increasing")


def detect_well_transitions(traj: Trajectory | tuple, band: float) -> HopRecord:
    """Hysteresis-filtered well changes of Q(t).

    Samples with |Q| <= band are ignored; a transition is the first sample
    beyond the band on the side opposite the last confirmed well.  ``traj``
    may also be a ``(t, Q)`` pair of arrays.
    """
    if not band > 0:
        raise ValueError("band must be > 0")
    t, Q = (traj.t, traj.Q) if isinstance(traj, Trajectory) else map(np.asarray, traj)
    outside = np.abs(Q) > band
    side = np.sign(Q[outside])
    t_out = t[outside]
    change = np.nonzero(side[1:] != side[:-1])[0] + 1
    times = tuple(float(x) for x in t_out[change])
    return HopRecord(times, censored=len(times) < 2)


class Period(NamedTuple):
    value: float
    censored: bool


def interwell_period(hops: HopRecord, t_end: float) -> Period:
    """Full left-right-left cycle time: twice the mean gap between transitions.

    Censored records report the lower bound ``2 * t_end``.
    """
    if hops.censored or len(hops.times) < 2:
        return Period(2.0 * t_end, True)
    gaps = np.diff(hops.times)
    return Period(2.0 * float(np.mean(gaps)), False)


def default_band(params: WellParams, omegas=(), m: float = 0.0) -> float:
    """0.1 |Q_min| of the bath-renormalized well (bare well if monostable)."""
    q_eff = effective_minimum_abs(effective_quadratic_coefficient(params, omegas, m), params.lam)
    return 0.1 * (q_eff if q_eff > 0 else params.q_min)


# --- spectra ---------------------------------------------------------------


def power_spectrum(traj: Trajectory, n_samples: int = 8192, window: str | None = None) -> SpectrumResult:
    """One-sided periodogram of Q over the first ``n_samples`` samples.

    power[k] = |X_k|^2 / n for k = 0..n/2 with X the DFT of the mean-removed
    (optionally Hann-windowed) signal, so that the two-sided sum
    power[0] + 2 sum(power[1:-1]) + power[-1] equals sum((Q - mean)^2).
    """
    if n_samples < 2 or n_samples & (n_samples - 1):
        raise ValueError(f"n_samples={n_samples} is not a power of two")
    if len(traj) < n_samples:
        raise ValueError(f"trajectory has {len(traj)} samples, need {n_samples}")
    x = np.array(traj.Q[:n_samples], dtype=float)
    x -= x.mean()
    if window == "hann":
        x *= np.hanning(n_samples)
    elif window is not None:
        raise ValueError(f"unknown window {window!r}")
    power = np.abs(np.fft.rfft(x)) ** 2 / n_samples
    freqs = np.fft.rfftfreq(n_samples, d=traj.sample_dt)
    peak, integral, flatness = spectral_summaries(freqs, power)
    return SpectrumResult(freqs, power, peak, integral, flatness)


def two_sided_total(spec: SpectrumResult) -> float:
    p = spec.power
    return float(p[0] + 2.0 * p[1:-1].sum() + p[-1])


def spectral_summaries(freqs, power=None) -> tuple[float, float, float]:
    """(peak frequency, trapezoidal integral, spectral flatness).

    Accepts a ``SpectrumResult`` or separate frequency/power arrays.  Flatness
    floors empty bins at 1e-30 for the geometric mean; an all-zero spectrum
    has flatness 0.
    """
    if power is None:
        freqs, power = freqs.freqs, freqs.power
    freqs = np.asarray(freqs, dtype=float)
    power = np.asarray(power, dtype=float)
    if power.size == 0:
        raise ValueError("empty spectrum")
    peak = float(freqs[int(np.argmax(power))])
    integral = float(np.trapezoid(power, freqs))
    mean = power.mean()
    if mean <= 0:
        return peak, integral, 0.0
    geometric = math.exp(np.mean(np.log(np.maximum(power, POWER_FLOOR))))
    return peak, integral, min(1.0, geometric / mean)


# --- critical oscillator number scan ----------------------------------------


class BistabilityRow(NamedTuple):
    N: int
    mean_qmin: float
    mean_vmin: float
    std_vmin: float


def _trial_mu_eff(args) -> np.ndarray:
    """mu_eff after each of the first n oscillators of one trial (index 0 is N=0)."""
    mu, m, spec, n_max, trial = args
    omegas = _trial_frequencies(spec, n_max, trial)
    shift = 0.5 * m * np.concatenate([[0.0], np.cumsum(omegas * omegas)])
    return renormalized_mu(mu, shift)


def _trial_frequencies(spec: BathSpec, n_max: int, trial: int) -> np.ndarray:
    return sample_frequencies(replace(spec, n_osc=n_max), make_rng(spec.seed, trial))


def _bath_band(omega0: float, delta_omega: float, m: float, seed: int) -> BathSpec:
    return BathSpec(0, m, omega0 - 0.5 * delta_omega, omega0 + 0.5 * delta_omega, 0.0, seed)


def bistability_trials(
    params: WellParams, m: float, omega0: float, delta_omega: float, n_max: int,
    trials: int, seed: int = 0, workers: int = 1,
) -> np.ndarray:
    """mu_eff for N = 0..n_max oscillators, one row per trial.

    Oscillators are added one at a time from each trial's stream, so N and
    N + 1 share their first N frequencies.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    spec = _bath_band(omega0, delta_omega, m, seed)
    jobs = [(params.mu, m, spec, n_max, k) for k in range(trials)]
    return np.vstack(parallel_map(_trial_mu_eff, jobs, workers))


def first_monostable_counts(mu_eff: np.ndarray) -> np.ndarray:
    """Per trial, the smallest N with mu_eff <= 0 (-1 if never reached)."""
    hit = mu_eff <= 0
    first = np.argmax(hit, axis=1)
    return np.where(hit.any(axis=1), first, -1)


def scan_bistability(
    params: WellParams, m: float, omega0: float, delta_omega: float,
    N_grid: Sequence[int], trials: int = 1, seed: int = 0, workers: int = 1,
) -> list[BistabilityRow]:
    """Mean |Q_min| and |V_min| of the renormalized well against bath size."""
    N_grid = [int(n) for n in N_grid]
    if min(N_grid) < 0:
        raise ValueError("oscillator counts must be >= 0")
    mu_eff = bistability_trials(params, m, omega0, delta_omega, max(N_grid), trials, seed, workers)
    rows = []
    for n in N_grid:
        col = mu_eff[:, n]
        qmin = np.array([effective_minimum_abs(x, params.lam) for x in col])
        vmin = np.array([barrier_depth(x, params.lam) for x in col])
        rows.append(BistabilityRow(n, float(qmin.mean()), float(vmin.mean()), float(vmin.std())))
    return rows


# --- trajectory scans --------------------------------------------------------


class PeriodRow(NamedTuple):
    q0_over_qmin: float
    period: float
    censored: bool
    error: str = ""


def _period_point(ratio, *, params, spec, p0, rho0, pi0, cfg, band):
    Q0 = ratio * params.q_min
    bath = sample_bath(spec, Q0)
    state0 = ExtendedState(0.0, Q0, p0, rho0, pi0, bath)
    try:
        traj = integrate(state0, params, spec.m, cfg)
    except IntegrationError as exc:
        return PeriodRow(ratio, math.nan, True, f"{type(exc).__name__}: {exc}")
    width = band if band is not None else default_band(params, bath.omegas, spec.m)
    period = interwell_period(detect_well_transitions(traj, width), cfg.t_end)
    return PeriodRow(ratio, period.value, period.censored)


def scan_period_vs_initial_position(
    params: WellParams, spec: BathSpec, q0_grid: Sequence[float],
    p0: float, rho0: float, pi0: float, cfg: IntegratorConfig,
    band: float | None = None, workers: int = 1,
) -> list[PeriodRow]:
    """Interwell period for each initial position ``Q0 = ratio * Q_min``.

    ``q0_grid`` holds ratios to the bare minimum.  Every point draws the same
    bath frequencies (same seed); a failed integration is reported in its
    row and the scan carries on.
    """
    if params.q_min <= 0:
        raise ValueError("period scan needs a bistable bare well (mu > 0, lambda > 0)")
    if spec.temperature != 0:
        raise ValueError("period scan is defined for a zero-temperature bath")
    point = partial(
        _period_point, params=params, spec=spec, p0=p0, rho0=rho0, pi0=pi0, cfg=cfg, band=band
    )
    return parallel_map(point, [float(r) for r in q0_grid], workers)


class SpectrumRow(NamedTuple):
    temperature: float
    seed: int
    peak_freq: float
    integral: float
    flatness: float


def run_spectrum(
    params: WellParams, spec: BathSpec, state: ExtendedState, cfg: IntegratorConfig,
    n_samples: int = 8192, window: str | None = None,
) -> tuple[Trajectory, SpectrumResult]:
    """Sample a bath for ``spec``, integrate, and transform the first n_samples of Q."""
    need = (n_samples - 1) * cfg.sample_dt
    if cfg.t_end < need * (1 - 1e-12):
        cfg = replace(cfg, t_end=need)
    bath = sample_bath(spec, state.Q)
    traj = integrate(replace(state, bath=bath), params, spec.m, cfg)
    return traj, power_spectrum(traj, n_samples, window)


def _spectrum_point(job, *, params, state, cfg, n_samples, window):
    spec = job
    _, result = run_spectrum(params, spec, state, cfg, n_samples, window)
    return SpectrumRow(spec.temperature, spec.seed, result.peak_freq, result.integral, result.flatness)


def scan_spectral_flatness(
    params: WellParams, spec: BathSpec, temperatures: Sequence[float], seeds: Sequence[int],
    state: ExtendedState, cfg: IntegratorConfig, n_samples: int = 8192,
    window: str | None = None, workers: int = 1,
) -> list[SpectrumRow]:
    """Spectral summaries for every (temperature, seed) pair, temperature-major."""
    jobs = [replace(spec, temperature=float(T), seed=int(s)) for T in temperatures for s in seeds]
    point = partial(
        _spectrum_point, params=params, state=state, cfg=cfg, n_samples=n_samples, window=window
    )
    return parallel_map(point, jobs, workers)
