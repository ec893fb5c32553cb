"""Packet loss rate and throughput of truncated Chase-combining HARQ (one retransmission).

Non-cooperative link S->D and the single decode-and-forward relay network.
Conditional error probabilities are averaged over the Markov channel
states; the first- and second-attempt error events are combined per
channel-state pair as a product of their state-conditional averages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .amc import ModeTable, per_instantaneous
from .channel import DEGENERATE_RHO, MarkovChannel
from .numerics import QuadratureSpec, DomainError, integrate_1d, integrate_2d

N_RETX = 1
TRUNCATION_MASS = 1e-300

_TIGHT_1D = QuadratureSpec(abs_tol=1e-15, rel_tol=1e-10)
_TIGHT_2D = QuadratureSpec(abs_tol=1e-13, rel_tol=1e-8, max_subdivisions=20000)


class UndefinedThroughputError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class LinkModel:
    """One hop. ``channel`` fixes the state partition shared by all hops."""

    channel: MarkovChannel
    table: ModeTable
    mean_snr: float
    label: str = "SD"

    def __post_init__(self):
        if self.label not in ("SD", "SR", "RD"):
            raise ValueError(f"unknown link label {self.label!r}")
        if not self.mean_snr > 0:
            raise DomainError("mean_snr must be positive")
        if self.channel.n_states != len(self.table) + 1:
            raise ValueError("partition and mode table disagree on the number of modes")

    @property
    def n_modes(self) -> int:
        return len(self.table)

    def state_law(self) -> np.ndarray:
        """First-transmission state law over states 1..M, renormalised off outage."""
        pi = np.asarray(self.channel.pi[1:], dtype=float)
        total = pi.sum()
        if total <= 0:
            raise DomainError("every state is outage")
        return pi / total


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    topology: str
    plr: float
    throughput: float
    p_nt: tuple
    state_law: np.ndarray
    p_fail_first: np.ndarray
    p_fail_second: np.ndarray
    truncated: np.ndarray
    p_relay_fail: np.ndarray | None = None
    p_fail_srd: np.ndarray | None = None
    plr_srd: float | None = None
    plr_noncoop: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def completeness_residual(self) -> float:
        return abs(self.p_nt[0] + self.p_nt[1] + self.plr - 1.0)


def throughput_from(plr: float, p_nt, n_retx: int = N_RETX) -> float:
    """Delivered packets per transmission given loss and per-count success probabilities."""
    denom = (n_retx + 1) * plr + sum(i * p for i, p in enumerate(p_nt, start=1))
    if denom <= 0:
        raise UndefinedThroughputError("no transmissions are ever performed")
    return (1.0 - plr) / denom


def _mean_per(mode, lo, hi, mean_snr, scale=1.0):
    """E[PER(scale * snr) | snr in [lo, hi)] under the exponential law."""
    mass = math.exp(-lo / mean_snr) * (1.0 if hi == math.inf else -math.expm1(-(hi - lo) / mean_snr))
    if mass <= 0:
        raise DomainError(f"interval [{lo}, {hi}) has zero mass")
    # work in u = snr - lo with the conditional density
    width = hi - lo

    def f(u):
        return per_instantaneous(mode, scale * (lo + u)) * math.exp(-u / mean_snr) / mean_snr

    knee = mode.gamma_p / scale - lo
    if width == math.inf:
        if 0 < knee < math.inf:
            total = integrate_1d(f, 0.0, knee, _TIGHT_1D) + integrate_1d(f, knee, math.inf, _TIGHT_1D)
        else:
            total = integrate_1d(f, 0.0, math.inf, _TIGHT_1D)
    else:
        total = integrate_1d(f, 0.0, width, _TIGHT_1D, points=[knee] if 0 < knee < width else None)
    return total * math.exp(-lo / mean_snr) / mass


def p_fail_first(link: LinkModel, n: int) -> float:
    """Average first-transmission PER for a packet sent in state ``n``."""
    if not 1 <= n <= link.n_modes:
        raise DomainError(f"state {n} carries no transmission")
    lo, hi = link.channel.partition.bounds(n)
    mode = link.table[n]
    if lo >= mode.gamma_p and mode.g > 0:
        from .amc import avg_per_first_tx

        return avg_per_first_tx(mode, lo, hi, link.mean_snr)
    return _mean_per(mode, lo, hi, link.mean_snr)


def _second_combined(link: LinkModel, n: int, k: int, spec=None):
    """Returns ``(probability, truncated)``."""
    ch = link.channel
    mode = link.table[n]
    rho = float(ch.rho[n])
    pi_n = float(ch.pi[n])
    if rho >= DEGENERATE_RHO:
        if k != n:
            return 0.0, True
        lo, hi = ch.partition.bounds(n)
        return _mean_per(mode, lo, hi, link.mean_snr, scale=2.0), False
    mass = pi_n * float(ch.P[n, k])
    if mass < TRUNCATION_MASS:
        return 0.0, True
    lo_n, _ = ch.partition.bounds(n)
    lo_k, _ = ch.partition.bounds(k)
    floor = lo_n + lo_k
    bound = float(per_instantaneous(mode, floor))
    if bound == 0.0:
        return 0.0, False
    (a1, b1), (a2, b2) = ch.envelope_bounds(n), ch.envelope_bounds(k)
    gbar = link.mean_snr
    from .channel import bivariate_rayleigh_pdf

    if floor >= mode.gamma_p:
        # pure exponential branch: normalise by its value at the region's corner
        def integrand(r1, r2):
            excess = gbar * (r1 * r1 + r2 * r2) - floor
            return np.exp(-mode.g * excess) * bivariate_rayleigh_pdf(r1, r2, rho)
    else:
        def integrand(r1, r2):
            return per_instantaneous(mode, gbar * (r1 * r1 + r2 * r2)) * bivariate_rayleigh_pdf(r1, r2, rho)
        bound = 1.0
    base = spec or _TIGHT_2D
    spec = QuadratureSpec(abs_tol=base.abs_tol * mass, rel_tol=base.rel_tol,
                          max_subdivisions=base.max_subdivisions)
    value = integrate_2d(integrand, (a1, b1), (a2, b2), spec)
    return min(max(bound * value / mass, 0.0), bound), False


def p_fail_second_combined(link: LinkModel, n: int, k: int, spec: QuadratureSpec | None = None) -> float:
    """Average PER after Chase-combining a retransmission sent from state ``k``.

    The packet was first sent in state ``n`` and keeps mode ``n``.
    Returns 0 when the state pair is (numerically) impossible.
    """
    if not 1 <= n <= link.n_modes or not 0 <= k <= link.n_modes:
        raise DomainError(f"invalid state pair ({n}, {k})")
    return _second_combined(link, n, k, spec)[0]


def _second_matrix(link: LinkModel):
    M = link.n_modes
    out = np.zeros((M, M + 1))
    trunc = np.zeros((M, M + 1), dtype=bool)
    for n in range(1, M + 1):
        for k in range(M + 1):
            out[n - 1, k], trunc[n - 1, k] = _second_combined(link, n, k)
    return out, trunc


def _noncoop_parts(link: LinkModel):
    M = link.n_modes
    law = link.state_law()
    pf1 = np.array([p_fail_first(link, n) for n in range(1, M + 1)])
    pf2, trunc = _second_matrix(link)
    P = np.asarray(link.channel.P)[1:, :]
    fail2 = (P * pf2).sum(axis=1)  # P{F2 | F1 state n} averaged over k
    return law, pf1, pf2, trunc, P, fail2


def analyze_noncoop(link: LinkModel) -> AnalysisResult:
    law, pf1, pf2, trunc, P, fail2 = _noncoop_parts(link)
    plr = float(np.sum(law * pf1 * fail2))
    p1 = float(np.sum(law * (1.0 - pf1)))
    p2 = float(np.sum(law * pf1 * (P * (1.0 - pf2)).sum(axis=1)))
    return AnalysisResult(
        topology="noncoop",
        plr=plr,
        throughput=throughput_from(plr, (p1, p2)),
        p_nt=(p1, p2),
        state_law=law,
        p_fail_first=pf1,
        p_fail_second=pf2,
        truncated=trunc,
    )


def plr_noncoop(link: LinkModel) -> float:
    return analyze_noncoop(link).plr


def p_nt_noncoop(link: LinkModel, n_t: int) -> float:
    if n_t not in (1, 2):
        raise DomainError("n_t must be 1 or 2")
    return analyze_noncoop(link).p_nt[n_t - 1]


def throughput_noncoop(link: LinkModel) -> float:
    return analyze_noncoop(link).throughput


def p_relay_fail(sr_link: LinkModel, sd_state: int) -> float:
    """Probability the relay fails to decode a packet sent in the SD-selected mode."""
    mode = sr_link.table[sd_state]
    gbar = sr_link.mean_snr
    if not math.isfinite(mode.gamma_p):
        return 1.0
    below = -math.expm1(-mode.gamma_p / gbar)
    # above the knee, in units of the mean: u = (x - gamma_p) / gbar
    tail = integrate_1d(lambda u: per_instantaneous(mode, mode.gamma_p + gbar * u) * math.exp(-u),
                        0.0, math.inf, _TIGHT_1D)
    return min(below + math.exp(-mode.gamma_p / gbar) * tail, 1.0)


def p_fail_srd(sd_link: LinkModel, rd_link: LinkModel, n: int, spec: QuadratureSpec | None = None) -> float:
    """PER after combining the source's state-``n`` copy with a fresh relay copy."""
    mode = sd_link.table[n]
    lo, hi = sd_link.channel.partition.bounds(n)
    g_sd, g_rd = sd_link.mean_snr, rd_link.mean_snr
    width = (hi - lo) / g_sd
    norm = 1.0 if width == math.inf else -math.expm1(-width)
    bound = float(per_instantaneous(mode, lo))
    if bound == 0.0:
        return 0.0

    # s, t are the SD excess over lo and the RD SNR, both in units of their means
    if lo >= mode.gamma_p:
        def integrand(s, t):
            return np.exp(-mode.g * (g_sd * s + g_rd * t) - s - t) / norm
    else:
        bound = 1.0

        def integrand(s, t):
            return per_instantaneous(mode, lo + g_sd * s + g_rd * t) * np.exp(-s - t) / norm

    value = integrate_2d(integrand, (0.0, width), (0.0, math.inf), spec or _TIGHT_2D)
    return min(max(bound * value, 0.0), bound)


def _coop_parts(sd, sr, rd):
    law, pf1, pf2, trunc, P, fail2 = _noncoop_parts(sd)
    M = sd.n_modes
    q = np.array([p_relay_fail(sr, n) for n in range(1, M + 1)])
    srd = np.array([p_fail_srd(sd, rd, n) for n in range(1, M + 1)])
    return law, pf1, pf2, trunc, P, fail2, q, srd


def analyze_coop(sd: LinkModel, sr: LinkModel, rd: LinkModel, diagnostics: bool = False) -> AnalysisResult:
    """Cooperative network with the relay's decoding paired to the SD-selected mode."""
    law, pf1, pf2, trunc, P, fail2, q, srd = _coop_parts(sd, sr, rd)
    plr_nc = float(np.sum(law * pf1 * fail2))
    plr_srd_joint = float(np.sum(law * pf1 * srd))
    plr = float(np.sum(law * pf1 * (q * fail2 + (1.0 - q) * srd)))
    p1 = float(np.sum(law * (1.0 - pf1)))
    p2 = float(np.sum(law * pf1 * (q * (1.0 - fail2) + (1.0 - q) * (1.0 - srd))))
    diag = {}
    if diagnostics:
        relay_fail = float(np.sum(law * q))
        srd_weighted = float(np.sum(law * srd))
        diag = {
            "relay_fail_avg": relay_fail,
            "plr_coop_factored": plr_nc * relay_fail + plr_srd_joint * (1.0 - relay_fail),
            "plr_coop_literal": plr_nc * relay_fail + srd_weighted * p1,
            "plr_srd_weighted": srd_weighted,
            "plr_srd_unweighted": float(np.sum(srd)),
        }
    return AnalysisResult(
        topology="coop",
        plr=plr,
        throughput=throughput_from(plr, (p1, p2)),
        p_nt=(p1, p2),
        state_law=law,
        p_fail_first=pf1,
        p_fail_second=pf2,
        truncated=trunc,
        p_relay_fail=q,
        p_fail_srd=srd,
        plr_srd=plr_srd_joint,
        plr_noncoop=plr_nc,
        diagnostics=diag,
    )


def plr_srd(sd_link: LinkModel, rd_link: LinkModel) -> float:
    """Probability that the source copy and the relay copy both fail (relay decoded)."""
    law = sd_link.state_law()
    M = sd_link.n_modes
    pf1 = np.array([p_fail_first(sd_link, n) for n in range(1, M + 1)])
    srd = np.array([p_fail_srd(sd_link, rd_link, n) for n in range(1, M + 1)])
    return float(np.sum(law * pf1 * srd))


def plr_coop(sd: LinkModel, sr: LinkModel, rd: LinkModel) -> float:
    return analyze_coop(sd, sr, rd).plr


def throughput_coop(sd: LinkModel, sr: LinkModel, rd: LinkModel) -> float:
    return analyze_coop(sd, sr, rd).throughput


def joint_noncoop_plr(link: LinkModel) -> float:
    """Loss probability with both error events driven by the same SNR pair.

    Diagnostic companion to :func:`analyze_noncoop`: integrates
    ``PER(g1) * PER(g1 + g2)`` jointly instead of multiplying the two
    state-conditional averages.
    """
    from .channel import bivariate_rayleigh_pdf

    ch, gbar = link.channel, link.mean_snr
    law = link.state_law()
    total = 0.0
    for n in range(1, link.n_modes + 1):
        mode = link.table[n]
        rho = float(ch.rho[n])
        if rho >= DEGENERATE_RHO:
            lo, hi = ch.partition.bounds(n)

            def f(u, lo=lo, mode=mode):
                x = lo + u
                return per_instantaneous(mode, x) * per_instantaneous(mode, 2 * x) * math.exp(-u / gbar) / gbar

            w = hi - lo
            cond = integrate_1d(f, 0.0, w, _TIGHT_1D) / (1.0 if w == math.inf else -math.expm1(-w / gbar))
            total += law[n - 1] * cond
            continue
        acc = 0.0
        for k in range(link.n_modes + 1):
            mass = float(ch.pi[n] * ch.P[n, k])
            if mass < TRUNCATION_MASS:
                continue

            def h(r1, r2, mode=mode, rho=rho):
                g1 = gbar * r1 * r1
                return (per_instantaneous(mode, g1) * per_instantaneous(mode, g1 + gbar * r2 * r2)
                        * bivariate_rayleigh_pdf(r1, r2, rho))

            spec = QuadratureSpec(abs_tol=1e-16 * mass, rel_tol=1e-7, max_subdivisions=20000)
            acc += integrate_2d(h, ch.envelope_bounds(n), ch.envelope_bounds(k), spec)
        total += law[n - 1] * acc / float(ch.pi[n])
    return total
