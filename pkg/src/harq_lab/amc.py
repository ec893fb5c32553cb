"""Transmission modes, the piecewise-exponential PER model and AMC thresholds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .channel import StatePartition
from .numerics import DomainError, QuadratureSpec, find_root_bracketed, integrate_1d

# Upper end of the threshold search, linear SNR.
MAX_THRESHOLD = 1e6


class InfeasibleTargetError(ValueError):
    def __init__(self, mode_index: int, message: str):
        super().__init__(f"mode {mode_index}: {message}")
        self.mode_index = mode_index


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class AmcMode:
    """One modulation/coding pair with its PER fit ``a * exp(-g * snr)``.

    ``gamma_p`` is the linear-SNR knee below which every packet fails.
    """

    index: int
    modulation: str
    code_rate: Fraction
    rate_bps: float
    a: float
    g: float
    gamma_p: float
    gamma_p_db: float | None = None

    def __post_init__(self):
        if self.gamma_p_db is None:
            object.__setattr__(self, "gamma_p_db", float(linear_to_db(self.gamma_p)))
        if self.a < 0 or self.g < 0 or not self.gamma_p >= 0:
            raise ValueError(f"mode {self.index}: a, g and gamma_p must be nonnegative")
        if not self.rate_bps > 0:
            raise ValueError(f"mode {self.index}: rate must be positive")

    @classmethod
    def from_db(cls, index, modulation, code_rate, rate_bps, a, g, gamma_p_db):
        return cls(index, modulation, Fraction(code_rate), float(rate_bps), float(a), float(g),
                   float(db_to_linear(gamma_p_db)), float(gamma_p_db))

    def knee_mismatch(self) -> float:
        """Distance between the two PER branches at the knee, ``|a e^{-g gamma_p} - 1|``."""
        return abs(self.a * math.exp(-self.g * self.gamma_p) - 1.0)


# (modulation, code rate, R_m, a_m, g_m, gamma_pm in dB)
_MODE_ROWS = (
    ("BPSK", "1/2", 0.50, 274.7229, 7.9932, -1.5331),
    ("QPSK", "1/2", 1.00, 90.2514, 3.4998, 1.0942),
    ("QPSK", "3/4", 1.50, 67.6181, 1.6883, 3.9722),
    ("16-QAM", "9/16", 2.25, 50.1222, 0.6644, 7.7021),
    ("16-QAM", "3/4", 3.00, 53.3987, 0.3756, 10.2488),
    ("64-QAM", "3/4", 4.50, 35.3508, 0.0900, 15.9784),
)

DEFAULT_MODES = tuple(AmcMode.from_db(i + 1, *row) for i, row in enumerate(_MODE_ROWS))


@dataclass(frozen=True)
class ModeTable:
    modes: tuple = DEFAULT_MODES
    per_target: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not 0 < self.per_target < 1:
            raise ValueError(f"per_target must lie in (0, 1), got {self.per_target}")
        if not self.modes:
            raise ValueError("mode table is empty")
        for i, m in enumerate(self.modes, start=1):
            if m.index != i:
                raise ValueError(f"mode indices must run 1..M, found {m.index} at position {i}")
        rates = [m.rate_bps for m in self.modes]
        if any(r2 <= r1 for r1, r2 in zip(rates, rates[1:])):
            raise ValueError("mode rates must strictly increase with index")

    def __len__(self):
        return len(self.modes)

    def __getitem__(self, index: int) -> AmcMode:
        """1-based lookup, matching the state numbering."""
        if not 1 <= index <= len(self.modes):
            raise IndexError(f"mode index {index} out of range")
        return self.modes[index - 1]

    def arrays(self):
        """``(a, g, gamma_p)`` arrays padded with an outage row at index 0."""
        a = np.array([1.0] + [m.a for m in self.modes])
        g = np.array([0.0] + [m.g for m in self.modes])
        gp = np.array([math.inf] + [m.gamma_p for m in self.modes])
        return a, g, gp

    def state_intervals(self, base_packet_s: float = 1e-3, rtt_s: float = 2e-3) -> tuple:
        """Time between successive transmissions for each channel state.

        Packet duration scales inversely with the mode rate so that the
        slowest mode lasts ``base_packet_s``. State 0 (outage) re-senses
        after the slowest mode's interval.
        """
        r1 = self.modes[0].rate_bps
        per_mode = [base_packet_s * r1 / m.rate_bps + rtt_s for m in self.modes]
        return tuple([per_mode[0]] + per_mode)


def per_instantaneous(mode: AmcMode, gamma):
    """Packet error probability of ``mode`` at instantaneous SNR ``gamma``."""
    gamma = np.asarray(gamma, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        tail = mode.a * np.exp(-mode.g * gamma)
    out = np.where(gamma < mode.gamma_p, 1.0, np.clip(np.nan_to_num(tail, nan=0.0), 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


def per_table(a, g, gp, state, gamma):
    """Vectorised PER over a mixed batch; ``state`` indexes the padded arrays."""
    with np.errstate(over="ignore", invalid="ignore"):
        tail = a[state] * np.exp(-g[state] * gamma)
    tail = np.clip(np.nan_to_num(tail, nan=0.0), 0.0, 1.0)
    return np.where(gamma < gp[state], 1.0, tail)


def interval_mass(lo: float, hi: float, mean_snr: float) -> float:
    """Probability that an exponential SNR with mean ``mean_snr`` lies in ``[lo, hi)``."""
    if hi == math.inf:
        return math.exp(-lo / mean_snr)
    return math.exp(-lo / mean_snr) * -math.expm1(-(hi - lo) / mean_snr)


def avg_per_first_tx(mode: AmcMode, lo: float, hi: float, mean_snr: float,
                     method: str = "closed", spec: QuadratureSpec | None = None) -> float:
    """Average exponential-branch PER over ``[lo, hi)`` given the SNR lies there.

    Only the exponential branch enters, so ``lo`` is expected to sit at or
    above the mode's knee.
    """
    if not hi > lo:
        raise DomainError(f"empty interval [{lo}, {hi})")
    if method == "quad":
        mass = interval_mass(lo, hi, mean_snr)
        if mass <= 0:
            raise DomainError("interval carries zero probability mass")

        def integrand(x):
            return mode.a * math.exp(-mode.g * x - x / mean_snr) / mean_snr

        spec = spec or QuadratureSpec(abs_tol=1e-300, rel_tol=1e-12)
        return integrate_1d(integrand, lo, hi, spec) / mass
    if method != "closed":
        raise ValueError(f"unknown method {method!r}")
    # conditional law of (snr - lo) is exponential truncated to width w
    c = mode.g + 1.0 / mean_snr
    if hi == math.inf:
        ratio = 1.0
    else:
        w = hi - lo
        den = -math.expm1(-w / mean_snr)
        if den <= 0:
            raise DomainError("interval carries zero probability mass")
        ratio = -math.expm1(-c * w) / den
    return mode.a * math.exp(-mode.g * lo) * ratio / (1.0 + mode.g * mean_snr)


def _avg_per_or_limit(mode, lo, hi, mean_snr):
    if math.isfinite(hi) and hi - lo <= 1e-12 * max(1.0, hi):
        return mode.a * math.exp(-mode.g * lo)
    return avg_per_first_tx(mode, lo, hi, mean_snr)


def solve_thresholds(table: ModeTable, mean_snr: float) -> StatePartition:
    """Solve the per-mode average-PER constraint from the top mode downward."""
    if not mean_snr > 0:
        raise DomainError(f"mean_snr must be positive, got {mean_snr}")
    target = table.per_target
    upper = math.inf
    solved = []
    for mode in reversed(table.modes):
        lo = mode.gamma_p
        if not lo < upper:
            raise InfeasibleTargetError(mode.index, "knee lies above the next threshold")
        if not math.isfinite(lo):
            raise InfeasibleTargetError(mode.index, "mode never decodes")

        def excess(x, mode=mode, upper=upper):
            return _avg_per_or_limit(mode, x, upper, mean_snr) - target

        if excess(lo) <= 0:
            gamma = lo
        else:
            hi = upper if math.isfinite(upper) else MAX_THRESHOLD
            if excess(hi) > 0:
                raise InfeasibleTargetError(
                    mode.index, f"no threshold in [{lo:.6g}, {hi:.6g}] meets PER {target:g}"
                )
            gamma = find_root_bracketed(excess, lo, hi, tol=1e-13 * hi)
            # land on the feasible side of the root
            while excess(gamma) > 0:
                gamma += 2e-13 * hi
        solved.append(gamma)
        upper = gamma
    return StatePartition((0.0, *reversed(solved), math.inf))


def select_mode(gamma, partition: StatePartition):
    """State index for ``gamma``; 0 is outage. Intervals are ``[lower, upper)``."""
    return partition.state_of(gamma)
