"""Experiment orchestration: analytic and Monte Carlo sweeps plus their artifacts."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .amc import avg_per_first_tx, db_to_linear, linear_to_db, solve_thresholds
from .analysis import AnalysisResult, LinkModel, analyze_coop, analyze_noncoop, joint_noncoop_plr
from .channel import FadingParams, build_markov_channel
from .config import ExperimentSpec, emit_config, format_doppler
from .simulator import TOPOLOGIES, GridCell, run_grid

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_GATE = 0, 1, 2, 3


def fmt(x) -> str:
    """Canonical number format shared by every CSV and plot file."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


@dataclass
class AnalysisCell:
    snr_db: float
    doppler_hz: float
    results: dict | None = None  # topology -> AnalysisResult
    joint_plr: float | None = None
    error: str | None = None


def analyze_point(spec: ExperimentSpec, snr_db: float, doppler_hz: float) -> AnalysisCell:
    sc = spec.scenario
    table = sc.mode_table
    gbar = float(db_to_linear(snr_db))
    try:
        partition = solve_thresholds(table, gbar)
        channel = build_markov_channel(FadingParams(gbar, doppler_hz), partition,
                                       table.state_intervals(sc.base_packet_s, sc.rtt_s))
        sd = LinkModel(channel, table, gbar, "SD")
        sr = LinkModel(channel, table, sc.relay_gain * gbar, "SR")
        rd = LinkModel(channel, table, sc.relay_gain * gbar, "RD")
        coop = analyze_coop(sd, sr, rd, diagnostics=spec.emit_diagnostics)
        nc = analyze_noncoop(sd)
        joint = joint_noncoop_plr(sd) if spec.emit_diagnostics else None
    except Exception as exc:
        return AnalysisCell(snr_db, doppler_hz, error=f"{type(exc).__name__}: {exc}")
    return AnalysisCell(snr_db, doppler_hz, {"noncoop": nc, "coop": coop}, joint)


def _analyze_star(args):
    return analyze_point(*args)


def run_analysis(spec: ExperimentSpec) -> list[AnalysisCell]:
    jobs = [(spec, s, d) for s in spec.snr_grid for d in spec.doppler_grid]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            return list(pool.map(_analyze_star, jobs))
    return [_analyze_star(j) for j in jobs]


def analysis_header(n_modes: int, diagnostics: bool) -> list[str]:
    cols = ["topology", "snr_db", "doppler_hz", "plr", "throughput", "p_nt1", "p_nt2",
            "plr_srd", "plr_noncoop_ref"]
    cols += [f"state_law_{m}" for m in range(1, n_modes + 1)]
    cols += [f"p_fail_first_{m}" for m in range(1, n_modes + 1)]
    cols += [f"p_relay_fail_{m}" for m in range(1, n_modes + 1)]
    cols += [f"p_fail_srd_{m}" for m in range(1, n_modes + 1)]
    cols += [f"p_fail_second_{n}_{k}" for n in range(1, n_modes + 1) for k in range(n_modes + 1)]
    if diagnostics:
        cols += ["plr_noncoop_joint", "relay_fail_avg", "plr_coop_factored", "plr_coop_literal",
                 "plr_srd_weighted", "plr_srd_unweighted"]
    return cols


def analysis_row(topo: str, cell: AnalysisCell, n_modes: int, diagnostics: bool) -> list[str]:
    r: AnalysisResult = cell.results[topo]
    row = [topo, fmt(cell.snr_db), format_doppler(cell.doppler_hz), fmt(r.plr), fmt(r.throughput),
           fmt(r.p_nt[0]), fmt(r.p_nt[1]), fmt(r.plr_srd), fmt(r.plr_noncoop)]
    row += [fmt(x) for x in r.state_law]
    row += [fmt(x) for x in r.p_fail_first]
    row += [fmt(x) for x in r.p_relay_fail] if r.p_relay_fail is not None else [""] * n_modes
    row += [fmt(x) for x in r.p_fail_srd] if r.p_fail_srd is not None else [""] * n_modes
    row += [fmt(x) for x in np.ravel(r.p_fail_second)]
    if diagnostics:
        d = r.diagnostics
        row += [fmt(cell.joint_plr) if topo == "noncoop" else ""]
        row += [fmt(d.get(k)) for k in ("relay_fail_avg", "plr_coop_factored", "plr_coop_literal",
                                        "plr_srd_weighted", "plr_srd_unweighted")]
    return row


SIM_HEADER = ["topology", "snr_db", "doppler_hz", "plr_estimate", "plr_se", "throughput_estimate",
              "throughput_se", "offered", "delivered", "lost", "outage_skips", "transmissions",
              "relay_decode_success", "seed"]


def simulation_header(n_modes: int, n_tx: int) -> list[str]:
    return (SIM_HEADER + [f"nt_{i}" for i in range(1, n_tx + 1)]
            + [f"mode_usage_{m}" for m in range(1, n_modes + 1)])


def simulation_row(cell: GridCell) -> list[str]:
    s = cell.stats
    return ([cell.topology, fmt(cell.snr_db), format_doppler(cell.doppler_hz), fmt(s.plr_estimate),
             fmt(s.plr_se), fmt(s.throughput_estimate), fmt(s.throughput_se), fmt(s.offered),
             fmt(s.delivered), fmt(s.lost), fmt(s.outage_skips), fmt(s.transmissions),
             fmt(s.relay_decode_success), fmt(cell.seed)]
            + [fmt(x) for x in s.nt_histogram] + [fmt(x) for x in s.mode_usage])


def null_se_plr(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)


def null_se_throughput(r: AnalysisResult, n: int) -> float:
    eta = r.throughput
    p1, p2 = r.p_nt
    var = p1 * (1 - eta) ** 2 + p2 * (1 - 2 * eta) ** 2 + r.plr * (2 * eta) ** 2
    mean_t = p1 + 2 * p2 + 2 * r.plr
    return math.sqrt(var / n) / mean_t


def z_score(sim: float, ana: float, se_sim: float, se_null: float) -> float:
    """``(sim - analysis) / SE``; the SE is floored by its value under the analytic law.

    The floor keeps cells with zero observed losses (SE_sim = 0) finite.
    """
    se = max(se_sim, se_null)
    if se == 0:
        return 0.0 if sim == ana else math.inf
    return (sim - ana) / se


COMPARE_HEADER = ["topology", "snr_db", "doppler_hz", "plr_analysis", "plr_simulation", "plr_z",
                  "throughput_analysis", "throughput_simulation", "throughput_z", "within_gate"]


def compare_rows(ana_cells, sim_cells, gate, diagnostics):
    by_key = {(c.snr_db, c.doppler_hz): c for c in ana_cells if c.error is None}
    rows, worst = [], 0.0
    for cell in sim_cells:
        a = by_key.get((cell.snr_db, cell.doppler_hz))
        if a is None or cell.stats is None:
            continue
        r = a.results[cell.topology]
        s = cell.stats
        zp = z_score(s.plr_estimate, r.plr, s.plr_se, null_se_plr(r.plr, s.sent))
        zt = z_score(s.throughput_estimate, r.throughput, s.throughput_se, null_se_throughput(r, s.sent))
        ok = abs(zp) <= gate and abs(zt) <= gate
        worst = max(worst, abs(zp), abs(zt))
        row = [cell.topology, fmt(cell.snr_db), format_doppler(cell.doppler_hz), fmt(r.plr),
               fmt(s.plr_estimate), fmt(zp), fmt(r.throughput), fmt(s.throughput_estimate), fmt(zt),
               "1" if ok else "0"]
        if diagnostics:
            joint = a.joint_plr if cell.topology == "noncoop" else None
            zj = (z_score(s.plr_estimate, joint, s.plr_se, null_se_plr(joint, s.sent))
                  if joint is not None else None)
            row += [fmt(joint), fmt(zj)]
        rows.append(row)
    return rows, worst


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _write_dat(path: Path, title: str, column: str, series):
    """``series``: list of (label, [(snr_str, value_str), ...])."""
    out = [f"# {title}", f"# columns: snr_db {column}", ""]
    for label, points in series:
        out.append(f"# series: {label}")
        out += [f"{x} {y}" for x, y in points]
        out += ["", ""]
    path.write_text("\n".join(out))


def _curve_series(spec, ana_cells, sim_cells, metric):
    series = []
    if ana_cells is not None:
        lookup = {(c.snr_db, c.doppler_hz): c for c in ana_cells if c.error is None}
        for topo in TOPOLOGIES:
            for fd in spec.doppler_grid:
                pts = [(fmt(s), fmt(getattr(lookup[(s, fd)].results[topo], metric)))
                       for s in spec.snr_grid if (s, fd) in lookup]
                series.append((f"topology={topo} doppler_hz={format_doppler(fd)} source=analysis", pts))
    else:
        attr = "plr_estimate" if metric == "plr" else "throughput_estimate"
        lookup = {(c.topology, c.snr_db, c.doppler_hz): c for c in sim_cells if c.stats is not None}
        for topo in TOPOLOGIES:
            for fd in spec.doppler_grid:
                pts = [(fmt(s), fmt(getattr(lookup[(topo, s, fd)].stats, attr)))
                       for s in spec.snr_grid if (topo, s, fd) in lookup]
                series.append((f"topology={topo} doppler_hz={format_doppler(fd)} source=simulation", pts))
    return series


@dataclass
class ExperimentOutcome:
    status: int
    analysis: list | None
    simulation: list | None
    failures: list
    worst_z: float


def run_experiment(spec: ExperimentSpec, timestamp: str | None = None) -> ExperimentOutcome:
    """Run the configured engines and write every artifact into ``spec.output_dir``."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_modes = len(spec.mode_table)
    failures = []

    ana_cells = sim_cells = None
    if spec.engines in ("analysis", "both"):
        ana_cells = run_analysis(spec)
        failures += [f"analysis snr_db={fmt(c.snr_db)} doppler_hz={format_doppler(c.doppler_hz)}: {c.error}"
                     for c in ana_cells if c.error]
        rows = [analysis_row(t, c, n_modes, spec.emit_diagnostics)
                for t in TOPOLOGIES for c in ana_cells if c.error is None]
        _write_csv(out / "analysis.csv", analysis_header(n_modes, spec.emit_diagnostics), rows)
    if spec.engines in ("simulation", "both"):
        sim_cells = run_grid(spec.scenario, list(spec.snr_grid), list(spec.doppler_grid), 1,
                             TOPOLOGIES, spec.workers)
        failures += [f"simulation {c.topology} snr_db={fmt(c.snr_db)} "
                     f"doppler_hz={format_doppler(c.doppler_hz)}: {c.error}" for c in sim_cells if c.error]
        rows = [simulation_row(c) for c in sim_cells if c.stats is not None]
        _write_csv(out / "simulation.csv",
                   simulation_header(n_modes, spec.scenario.n_retx_max + 1), rows)

    worst = 0.0
    if ana_cells is not None and sim_cells is not None:
        rows, worst = compare_rows(ana_cells, sim_cells, spec.gate, spec.emit_diagnostics)
        header = COMPARE_HEADER + (["plr_noncoop_joint", "plr_joint_z"] if spec.emit_diagnostics else [])
        _write_csv(out / "compare.csv", header, rows)

    _write_dat(out / "fig3_plr.dat", "packet loss rate vs mean S-D SNR", "plr",
               _curve_series(spec, ana_cells, sim_cells, "plr"))
    _write_dat(out / "fig4_throughput.dat", "throughput (packets per transmission) vs mean S-D SNR",
               "throughput", _curve_series(spec, ana_cells, sim_cells, "throughput"))

    if failures:
        status = EXIT_NUMERICAL
    elif worst > spec.gate:
        status = EXIT_GATE
    else:
        status = EXIT_OK
    _write_manifest(out / "manifest.txt", spec, sim_cells, failures, status, timestamp)
    return ExperimentOutcome(status, ana_cells, sim_cells, failures, worst)


def _write_manifest(path, spec, sim_cells, failures, status, timestamp):
    stamp = timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    lines = [
        f"created: {stamp}",
        f"harq-lab {__version__}; python {platform.python_version()}; numpy {np.__version__}; "
        f"scipy {scipy.__version__}",
        f"exit_status: {status}",
        "",
        "## resolved configuration",
        emit_config(spec).rstrip("\n"),
        "",
        "## simulation seeds",
    ]
    for c in sim_cells or []:
        lines.append(f"{c.topology} snr_db={fmt(c.snr_db)} doppler_hz={format_doppler(c.doppler_hz)} "
                     f"seed={c.seed} {'OK' if c.error is None else 'FAILED'}")
    lines += ["", "## failures"]
    lines += [f"FAILED {f}" for f in failures] or ["none"]
    path.write_text("\n".join(lines) + "\n")


THRESHOLD_FIELDS = ("snr_db", "per_target")


def emit_thresholds(spec: ExperimentSpec) -> Path:
    """Write ``thresholds.csv``: solved switching thresholds and their re-evaluated PER."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = spec.mode_table
    M = len(table)
    header = list(THRESHOLD_FIELDS) + [f"gamma_{m}_db" for m in range(1, M + 1)] + \
        [f"avg_per_{m}" for m in range(1, M + 1)]
    rows = []
    for snr in spec.snr_grid:
        gbar = float(db_to_linear(snr))
        part = solve_thresholds(table, gbar)
        th = part.thresholds
        pers = [avg_per_first_tx(table[m], th[m], th[m + 1], gbar) for m in range(1, M + 1)]
        rows.append([fmt(snr), fmt(table.per_target)] + [fmt(float(linear_to_db(x))) for x in th[1:-1]]
                    + [fmt(p) for p in pers])
    path = out / "thresholds.csv"
    _write_csv(path, header, rows)
    return path
