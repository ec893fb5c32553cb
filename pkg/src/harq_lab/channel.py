"""Finite-state Markov model of a time-correlated Rayleigh channel.

The SNR axis is cut into consecutive intervals (states). Transitions
between the state seen at one transmission and the state seen at the next
follow from the bivariate Rayleigh envelope density, with the envelope
correlation set by the Doppler spread and the inter-transmission interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .numerics import (
    DEFAULT_QUADRATURE,
    DomainError,
    QuadratureSpec,
    bessel_i0_scaled,
    bessel_j0,
    integrate_2d,
)

# Correlations this close to one use the fully-correlated path.
DEGENERATE_RHO = 1.0 - 1e-12
ROW_SUM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class FadingParams:
    """Mean SNR (linear) and maximum Doppler frequency.

    ``doppler_hz = math.inf`` stands for independent fading between
    transmissions and ``0`` for a channel frozen over a packet's lifetime.
    """

    mean_snr: float
    doppler_hz: float

    def __post_init__(self):
        if not (self.mean_snr > 0 and math.isfinite(self.mean_snr)):
            raise DomainError(f"mean_snr must be positive and finite, got {self.mean_snr}")
        if not self.doppler_hz >= 0:
            raise DomainError(f"doppler_hz must be >= 0, got {self.doppler_hz}")


@dataclass(frozen=True)
class StatePartition:
    thresholds: tuple

    def __post_init__(self):
        t = tuple(float(x) for x in self.thresholds)
        object.__setattr__(self, "thresholds", t)
        if len(t) < 2 or t[0] != 0.0 or t[-1] != math.inf:
            raise ValueError("thresholds must start at 0 and end at +inf")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError(f"thresholds must strictly increase: {t}")

    @property
    def n_states(self) -> int:
        return len(self.thresholds) - 1

    def bounds(self, n: int) -> tuple[float, float]:
        return self.thresholds[n], self.thresholds[n + 1]

    def state_of(self, gamma):
        gamma = np.asarray(gamma, dtype=float)
        if np.any(gamma < 0):
            raise DomainError("SNR must be nonnegative")
        idx = np.searchsorted(self.thresholds, gamma, side="right") - 1
        return int(idx) if idx.ndim == 0 else idx


@dataclass(frozen=True, eq=False)
class MarkovChannel:
    partition: StatePartition
    mean_snr: float
    doppler_hz: float
    per_mode_interval: tuple
    rho: np.ndarray
    P: np.ndarray
    pi: np.ndarray
    row_residual: float = 0.0  # largest |row sum - 1| before rows were renormalised

    @property
    def n_states(self) -> int:
        return self.partition.n_states

    def envelope_bounds(self, n: int) -> tuple[float, float]:
        lo, hi = self.partition.bounds(n)
        return math.sqrt(lo / self.mean_snr), math.sqrt(hi / self.mean_snr)


def gain_correlation(doppler_hz: float, interval_s: float) -> float:
    """Correlation of the complex Gaussian gain at lag ``interval_s``."""
    if math.isnan(doppler_hz) or not math.isfinite(interval_s):
        raise DomainError("doppler and interval must be finite")
    if doppler_hz < 0 or interval_s < 0:
        raise DomainError("doppler and interval must be nonnegative")
    if math.isinf(doppler_hz):
        return 0.0
    return bessel_j0(2.0 * math.pi * doppler_hz * interval_s)


def envelope_correlation(doppler_hz: float, interval_s: float) -> float:
    """Correlation between Rayleigh powers ``interval_s`` apart: ``J0(2 pi fD tau)^2``."""
    if interval_s <= 0 and not math.isnan(interval_s):
        raise DomainError(f"interval must be positive, got {interval_s}")
    return gain_correlation(doppler_hz, interval_s) ** 2


def bivariate_rayleigh_pdf(r1, r2, rho):
    """Joint density of two unit-power Rayleigh envelopes with power correlation ``rho``."""
    if not 0 <= rho < 1:
        raise DomainError(
            f"rho={rho} outside [0, 1); use the fully-correlated path for rho -> 1"
        )
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    one_m = 1.0 - rho
    x = 2.0 * r1 * r2 * math.sqrt(rho) / one_m
    # I0(x) e^{-(r1^2+r2^2)/(1-rho)} = i0e(x) e^{x - (r1^2+r2^2)/(1-rho)}; exponent <= 0
    expo = (x - (r1 * r1 + r2 * r2) / one_m)
    with np.errstate(invalid="ignore"):
        out = 4.0 * r1 * r2 / one_m * np.exp(expo) * bessel_i0_scaled(x)
    out = np.nan_to_num(out, nan=0.0, posinf=0.0)
    return float(out) if out.ndim == 0 else out


def state_probability(n: int, partition: StatePartition, mean_snr: float) -> float:
    """Probability of state ``n`` under the exponential SNR law."""
    if not 0 <= n < partition.n_states:
        raise IndexError(f"state {n} out of range")
    lo, hi = partition.bounds(n)
    if hi == math.inf:
        return math.exp(-lo / mean_snr)
    return math.exp(-lo / mean_snr) * -math.expm1(-(hi - lo) / mean_snr)


def _pair_mass_quadrature(z1, z2, rho, spec):
    (a1, b1), (a2, b2) = z1, z2
    return integrate_2d(lambda x, y: bivariate_rayleigh_pdf(x, y, rho), (a1, b1), (a2, b2), spec)


def transition_probability(n: int, k: int, channel: MarkovChannel,
                           spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """``P{next state = k | current state = n}`` by direct 2-D quadrature."""
    pi_n = state_probability(n, channel.partition, channel.mean_snr)
    if pi_n <= 0:
        raise DomainError(f"state {n} has zero probability")
    rho = float(channel.rho[n])
    if rho >= DEGENERATE_RHO:
        return 1.0 if n == k else 0.0
    spec = replace(spec, abs_tol=spec.abs_tol * pi_n)
    mass = _pair_mass_quadrature(channel.envelope_bounds(n), channel.envelope_bounds(k), rho, spec)
    return mass / pi_n


class TransitionError(DomainError):
    def __init__(self, message, n, k=None):
        super().__init__(f"{message} (row {n}" + ("" if k is None else f", column {k}") + ")")
        self.n, self.k = n, k


def build_markov_channel(params: FadingParams, partition: StatePartition, per_mode_interval,
                         spec: QuadratureSpec = DEFAULT_QUADRATURE) -> MarkovChannel:
    """Assemble state probabilities, per-state correlations and the transition matrix."""
    ns = partition.n_states
    intervals = tuple(float(t) for t in per_mode_interval)
    if len(intervals) != ns:
        raise ValueError(f"need {ns} intervals (one per state), got {len(intervals)}")
    if any(not t > 0 for t in intervals):
        raise DomainError("intervals must be positive")
    rho = np.array([envelope_correlation(params.doppler_hz, t) for t in intervals])
    pi = np.array([state_probability(n, partition, params.mean_snr) for n in range(ns)])
    zeta = [math.sqrt(t / params.mean_snr) for t in partition.thresholds]
    P = np.zeros((ns, ns))
    residual = 0.0
    for n in range(ns):
        if pi[n] <= 0:
            raise TransitionError("state has zero probability", n)
        if rho[n] >= DEGENERATE_RHO:
            P[n, n] = 1.0
            continue
        # absolute tolerance relative to the row's own probability scale
        row_spec = replace(spec, abs_tol=spec.abs_tol * pi[n])
        for k in range(ns):
            try:
                mass = _pair_mass_quadrature((zeta[n], zeta[n + 1]), (zeta[k], zeta[k + 1]), rho[n], row_spec)
            except Exception as exc:
                raise TransitionError(f"quadrature failed: {exc}", n, k) from exc
            P[n, k] = max(mass, 0.0) / pi[n]
        total = P[n].sum()
        if abs(total - 1.0) > ROW_SUM_TOLERANCE:
            raise TransitionError(f"row sums to {total!r}", n)
        residual = max(residual, abs(total - 1.0))
        P[n] /= total
    for arr in (rho, pi, P):
        arr.setflags(write=False)
    return MarkovChannel(partition, params.mean_snr, params.doppler_hz, intervals, rho, P, pi, residual)


def complex_gain(rng: np.random.Generator, size):
    """Unit-power circularly symmetric complex Gaussian samples."""
    z = rng.standard_normal((2,) + ((size,) if np.isscalar(size) else tuple(size)))
    return (z[0] + 1j * z[1]) * math.sqrt(0.5)


def evolve_gain(gain, rho_g, rng: np.random.Generator):
    """One autoregressive step with lag correlation ``rho_g`` (scalar or array)."""
    gain = np.asarray(gain)
    rho_g = np.asarray(rho_g, dtype=float)
    w = complex_gain(rng, gain.shape)
    return rho_g * gain + np.sqrt(np.maximum(1.0 - rho_g * rho_g, 0.0)) * w


def sample_snr_path(params: FadingParams, times, seed: int) -> np.ndarray:
    """Correlated SNR samples at the given strictly increasing instants."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise DomainError("times must be a nonempty 1-D sequence")
    if not np.all(np.isfinite(times)) or np.any(np.diff(times) <= 0):
        raise DomainError("times must be finite and strictly increasing")
    rng = np.random.default_rng(seed)
    gains = np.empty(times.size, dtype=complex)
    g = complex_gain(rng, 1)[0]
    gains[0] = g
    for j, dt in enumerate(np.diff(times), start=1):
        g = evolve_gain(g, gain_correlation(params.doppler_hz, dt), rng)
        gains[j] = g
    return params.mean_snr * np.abs(gains) ** 2


def sample_transition_counts(channel: MarkovChannel, n_pairs: int, seed: int) -> np.ndarray:
    """Count state pairs over independent (first, next) SNR draws.

    The first SNR is drawn from the stationary law; the second follows one
    gain step of the first state's interval.
    """
    rng = np.random.default_rng(seed)
    g1 = complex_gain(rng, n_pairs)
    s1 = channel.partition.state_of(channel.mean_snr * np.abs(g1) ** 2)
    rho_g = np.array([gain_correlation(channel.doppler_hz, t) for t in channel.per_mode_interval])
    g2 = evolve_gain(g1, rho_g[s1], rng)
    s2 = channel.partition.state_of(channel.mean_snr * np.abs(g2) ** 2)
    ns = channel.n_states
    return np.bincount(s1 * ns + s2, minlength=ns * ns).reshape(ns, ns)
