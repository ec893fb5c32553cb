"""Packet-level Monte Carlo of AMC + truncated Chase-combining HARQ.

Each run owns three independent random streams spawned from its seed:
channel gains, decoding draws at the destination, and everything the
relay touches. Keeping the relay on its own stream makes a relay that
never decodes reproduce the non-cooperative run draw for draw.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .amc import DEFAULT_MODES, ModeTable, db_to_linear, per_table, solve_thresholds
from .channel import StatePartition, complex_gain, evolve_gain, gain_correlation

CHUNK = 1 << 20
TOPOLOGIES = ("noncoop", "coop")


@dataclass(frozen=True)
class ScenarioConfig:
    topology: str = "noncoop"
    mean_snr_sd: float = 10.0  # dB
    relay_gain: float = 4.0
    doppler_hz: float = 10.0  # math.inf: independent fading
    rtt_s: float = 2e-3
    base_packet_s: float = 1e-3
    per_target: float = 1e-4
    n_retx_max: int = 1
    n_packets: int = 1_000_000
    seed: int = 2018
    correlated_new_packet: bool = False
    modes: tuple = DEFAULT_MODES

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        if self.n_packets < 1:
            raise ValueError("n_packets must be >= 1")
        if not (self.rtt_s > 0 and self.base_packet_s > 0):
            raise ValueError("rtt_s and base_packet_s must be positive")
        if not 0 < self.per_target < 1:
            raise ValueError("per_target must lie in (0, 1)")
        if self.n_retx_max < 1:
            raise ValueError("n_retx_max must be >= 1")
        if self.topology == "coop" and self.n_retx_max != 1:
            raise ValueError("the cooperative protocol allows exactly one retransmission")
        if not self.relay_gain >= 0:
            raise ValueError("relay_gain must be >= 0")
        if not self.doppler_hz >= 0:
            raise ValueError("doppler_hz must be >= 0")
        if not math.isfinite(self.mean_snr_sd):
            raise ValueError("mean_snr_sd must be finite")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def mode_table(self) -> ModeTable:
        return ModeTable(self.modes, self.per_target)

    @property
    def mean_snr_linear(self) -> float:
        return float(db_to_linear(self.mean_snr_sd))


@dataclass(frozen=True)
class SimStats:
    topology: str
    seed: int
    offered: int
    delivered: int
    lost: int
    outage_skips: int
    transmissions: int
    nt_histogram: tuple
    relay_decode_success: int
    mode_usage: tuple

    @property
    def sent(self) -> int:
        return self.delivered + self.lost

    @property
    def plr_estimate(self) -> float:
        return self.lost / self.sent if self.sent else math.nan

    @property
    def plr_se(self) -> float:
        p = self.plr_estimate
        return math.sqrt(p * (1 - p) / self.sent) if self.sent else math.nan

    @property
    def throughput_estimate(self) -> float:
        return self.delivered / self.transmissions if self.transmissions else math.nan

    @property
    def throughput_se(self) -> float:
        """Delta-method standard error of the ratio estimator."""
        if not self.sent:
            return math.nan
        eta = self.throughput_estimate
        n_max = len(self.nt_histogram)
        sq = sum(c * (1 - eta * t) ** 2 for t, c in enumerate(self.nt_histogram, start=1))
        sq += self.lost * (eta * n_max) ** 2
        mean_t = self.transmissions / self.sent
        return math.sqrt(sq / self.sent) / (mean_t * math.sqrt(self.sent))


class _Counters:
    def __init__(self, n_modes, n_tx_max):
        self.outage = 0
        self.lost = 0
        self.relay_ok = 0
        self.hist = np.zeros(n_tx_max, dtype=np.int64)
        self.usage = np.zeros(n_modes + 1, dtype=np.int64)

    def finish(self, config):
        delivered = int(self.hist.sum())
        transmissions = int(np.dot(np.arange(1, len(self.hist) + 1), self.hist)) + len(self.hist) * self.lost
        return SimStats(
            topology=config.topology,
            seed=config.seed,
            offered=config.n_packets,
            delivered=delivered,
            lost=int(self.lost),
            outage_skips=int(self.outage),
            transmissions=transmissions,
            nt_histogram=tuple(int(x) for x in self.hist),
            relay_decode_success=int(self.relay_ok),
            mode_usage=tuple(int(x) for x in self.usage[1:]),
        )


def _setup(config, partition):
    table = config.mode_table
    gbar = config.mean_snr_linear
    if partition is None:
        partition = solve_thresholds(table, gbar)
    if partition.n_states != len(table) + 1:
        raise ValueError("partition does not match the mode table")
    intervals = table.state_intervals(config.base_packet_s, config.rtt_s)
    rho_g = np.array([gain_correlation(config.doppler_hz, t) for t in intervals])
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3)]
    return table, gbar, partition, intervals, rho_g, streams


def _retransmit_from_source(g, comb, state, rho_g, gbar, arrays, n_retx, ch_rng, dec_rng, cnt):
    """Chase-combining retransmissions by the source; updates counters."""
    alive = np.ones(len(state), dtype=bool)
    for r in range(1, n_retx + 1):
        g = evolve_gain(g, rho_g[state], ch_rng)
        comb = comb + gbar * np.abs(g) ** 2
        fail = dec_rng.random(len(state)) < per_table(*arrays, state, comb)
        cnt.hist[r] += int(np.count_nonzero(alive & ~fail))
        alive &= fail
    cnt.lost += int(np.count_nonzero(alive))


def _run_fresh(config, partition):
    table, gbar, partition, _, rho_g, (ch_rng, dec_rng, relay_rng) = _setup(config, partition)
    arrays = table.arrays()
    coop = config.topology == "coop"
    relay_snr = config.relay_gain * gbar
    cnt = _Counters(len(table), config.n_retx_max + 1)
    remaining = config.n_packets
    while remaining:
        size = min(CHUNK, remaining)
        remaining -= size
        g1 = complex_gain(ch_rng, size)
        snr1 = gbar * np.abs(g1) ** 2
        state = partition.state_of(snr1)
        cnt.usage += np.bincount(state, minlength=len(table) + 1)
        tx = state > 0
        cnt.outage += size - int(np.count_nonzero(tx))
        g1, snr1, state = g1[tx], snr1[tx], state[tx]

        fail1 = dec_rng.random(len(state)) < per_table(*arrays, state, snr1)
        cnt.hist[0] += len(state) - int(np.count_nonzero(fail1))

        if coop:
            with np.errstate(invalid="ignore"):
                snr_sr = relay_snr * relay_rng.standard_exponential(len(state))
            snr_sr = np.nan_to_num(snr_sr, nan=0.0)
            relay_ok = relay_rng.random(len(state)) >= per_table(*arrays, state, snr_sr)
            cnt.relay_ok += int(np.count_nonzero(relay_ok))
            via_relay = fail1 & relay_ok
            src = fail1 & ~relay_ok

            rs = state[via_relay]
            with np.errstate(invalid="ignore"):
                snr_rd = np.nan_to_num(relay_snr * relay_rng.standard_exponential(len(rs)), nan=0.0)
            fail2 = relay_rng.random(len(rs)) < per_table(*arrays, rs, snr1[via_relay] + snr_rd)
            cnt.hist[1] += len(rs) - int(np.count_nonzero(fail2))
            cnt.lost += int(np.count_nonzero(fail2))
        else:
            src = fail1

        _retransmit_from_source(g1[src], snr1[src], state[src], rho_g, gbar, arrays,
                                config.n_retx_max, ch_rng, dec_rng, cnt)
    return cnt.finish(config)


def _run_continuous(config, partition):
    """One continuous fading path; every packet sees the channel where the last left it."""
    table, gbar, partition, intervals, rho_g, (ch_rng, dec_rng, relay_rng) = _setup(config, partition)
    arrays = table.arrays()
    coop = config.topology == "coop"
    relay_snr = config.relay_gain * gbar
    n_retx = config.n_retx_max
    cnt = _Counters(len(table), n_retx + 1)
    g = complex_gain(ch_rng, 1)[0]
    step = None
    for _ in range(config.n_packets):
        if step is not None:
            g = complex(evolve_gain(g, step, ch_rng))
        snr1 = gbar * abs(g) ** 2
        state = int(partition.state_of(snr1))
        cnt.usage[state] += 1
        step = rho_g[state]
        if state == 0:
            cnt.outage += 1
            continue
        per = lambda snr: float(per_table(*arrays, state, snr))  # noqa: E731
        ok1 = dec_rng.random() >= per(snr1)
        relay_ok = False
        if coop:
            snr_sr = relay_snr * relay_rng.standard_exponential() if relay_snr else 0.0
            relay_ok = relay_rng.random() >= per(snr_sr)
            cnt.relay_ok += relay_ok
        if ok1:
            cnt.hist[0] += 1
            continue
        if relay_ok:
            snr_rd = relay_snr * relay_rng.standard_exponential() if relay_snr else 0.0
            if relay_rng.random() < per(snr1 + snr_rd):
                cnt.lost += 1
            else:
                cnt.hist[1] += 1
            continue
        comb = snr1
        for r in range(1, n_retx + 1):
            g = complex(evolve_gain(g, step, ch_rng))
            comb += gbar * abs(g) ** 2
            if dec_rng.random() >= per(comb):
                cnt.hist[r] += 1
                break
        else:
            cnt.lost += 1
    return cnt.finish(config)


def run_noncoop(config: ScenarioConfig, partition: StatePartition | None = None) -> SimStats:
    """Simulate the S->D link; ``partition`` overrides the solved AMC thresholds."""
    if config.topology != "noncoop":
        config = replace(config, topology="noncoop")
    return (_run_continuous if config.correlated_new_packet else _run_fresh)(config, partition)


def run_coop(config: ScenarioConfig, partition: StatePartition | None = None) -> SimStats:
    """Simulate the relay network with decode-and-forward retransmission."""
    if config.topology != "coop":
        config = replace(config, topology="coop")
    return (_run_continuous if config.correlated_new_packet else _run_fresh)(config, partition)


def run_scenario(config: ScenarioConfig, partition: StatePartition | None = None) -> SimStats:
    return (run_coop if config.topology == "coop" else run_noncoop)(config, partition)


def _float_key(x: float) -> int:
    return int.from_bytes(struct.pack(">d", float(x)), "big")


def derive_cell_seed(seed: int, topology: str, snr_db: float, doppler_hz: float, replicate: int) -> int:
    """Seed for one grid cell, a function of the base seed and the cell's coordinates only."""
    key = (TOPOLOGIES.index(topology), _float_key(snr_db), _float_key(doppler_hz), int(replicate))
    ss = np.random.SeedSequence(seed, spawn_key=key)
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class GridCell:
    topology: str
    snr_db: float
    doppler_hz: float
    replicate: int
    seed: int
    stats: SimStats | None = None
    error: str | None = None

    @property
    def key(self):
        return (self.topology, self.snr_db, self.doppler_hz, self.replicate)


def _run_cell(cell_config):
    try:
        return run_scenario(cell_config), None
    except Exception as exc:  # recorded per cell, reported by the caller
        return None, f"{type(exc).__name__}: {exc}"


def run_grid(base: ScenarioConfig, snr_points, doppler_points, replicates: int = 1,
             topologies=TOPOLOGIES, workers: int = 1) -> list[GridCell]:
    """Run every (topology, SNR, Doppler, replicate) cell with coordinate-derived seeds."""
    if not snr_points or not doppler_points or replicates < 1 or not topologies:
        raise ValueError("grids must be nonempty and replicates >= 1")
    cells = []
    for topo in topologies:
        for snr in snr_points:
            for fd in doppler_points:
                for rep in range(replicates):
                    seed = derive_cell_seed(base.seed, topo, snr, fd, rep)
                    cfg = replace(base, topology=topo, mean_snr_sd=float(snr), doppler_hz=float(fd), seed=seed)
                    cells.append((GridCell(topo, float(snr), float(fd), rep, seed), cfg))
    configs = [cfg for _, cfg in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, configs))
    else:
        outcomes = [_run_cell(cfg) for cfg in configs]
    return [replace(cell, stats=stats, error=err) for (cell, _), (stats, err) in zip(cells, outcomes)]
