"""Experiment configuration: a strict line-oriented ``key = value`` format.

Example::

    [scenario]
    per_target = 1e-4
    n_packets = 1000000

    [grids]
    snr_db = 0:30:2            # start:stop:step, stop inclusive
    doppler_hz = 0, 10, 30, 50, independent

    [experiment]
    engines = both

    [modes]                     # optional; replaces the whole built-in table
    mode1 = BPSK, 1/2, 0.50, 274.7229, 7.9932, -1.5331

Unknown sections or keys, duplicated keys and out-of-range values are
errors that name the offending key and line.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .amc import AmcMode, ModeTable
from .simulator import ScenarioConfig

ENGINES = ("analysis", "simulation", "both")
DEFAULT_SNR_GRID = tuple(float(x) for x in range(0, 31, 2))
DEFAULT_DOPPLER_GRID = (0.0, 10.0, 30.0, 50.0, math.inf)


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message}" + (f" ({', '.join(where)})" if where else ""))
        self.key, self.line = key, line


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    snr_grid: tuple = DEFAULT_SNR_GRID
    doppler_grid: tuple = DEFAULT_DOPPLER_GRID
    engines: str = "both"
    output_dir: str = "results"
    emit_diagnostics: bool = False
    gate: float = 3.0
    workers: int = 1

    def __post_init__(self):
        if not self.snr_grid or not self.doppler_grid:
            raise ConfigError("grids must be nonempty")
        if self.engines not in ENGINES:
            raise ConfigError(f"engines must be one of {ENGINES}", "engines")
        if not self.gate > 0:
            raise ConfigError("gate must be positive", "gate")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", "workers")
        if self.engines != "simulation" and self.scenario.n_retx_max != 1:
            raise ConfigError("the analytic engine supports n_retx_max = 1 only", "n_retx_max")
        if any(not d >= 0 for d in self.doppler_grid):
            raise ConfigError("doppler values must be >= 0", "doppler_hz")

    @property
    def mode_table(self) -> ModeTable:
        return self.scenario.mode_table


def format_doppler(fd: float) -> str:
    return "independent" if math.isinf(fd) else _fmt(fd)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if x == int(x) and abs(x) < 1e15:
            return str(int(x))
        return repr(x)
    return str(x)


# key -> (section, parser, attribute owner)
def _parse_bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _parse_snr_grid(text):
    m = re.fullmatch(r"\s*(-?[\d.eE+-]+)\s*:\s*(-?[\d.eE+-]+)\s*:\s*([\d.eE+-]+)\s*", text)
    if m:
        start, stop, step = (float(x) for x in m.groups())
        if not step > 0 or stop < start:
            raise ValueError("range needs step > 0 and stop >= start")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(start + i * step for i in range(count))
    values = tuple(float(x) for x in _split(text))
    if any(not math.isfinite(v) for v in values):
        raise ValueError("SNR values must be finite")
    return values


def _parse_doppler_grid(text):
    out = []
    for item in _split(text):
        out.append(math.inf if item.lower() == "independent" else float(item))
    return tuple(out)


def _split(text):
    items = [t.strip() for t in text.split(",")]
    if not items or any(not t for t in items):
        raise ValueError("expected a comma-separated list")
    return items


SCENARIO_KEYS = {
    "relay_gain": float,
    "rtt_s": float,
    "base_packet_s": float,
    "per_target": float,
    "n_retx_max": _parse_int,
    "n_packets": _parse_int,
    "seed": _parse_int,
    "correlated_new_packet": _parse_bool,
}
GRID_KEYS = {"snr_db": ("snr_grid", _parse_snr_grid), "doppler_hz": ("doppler_grid", _parse_doppler_grid)}
EXPERIMENT_KEYS = {
    "engines": str,
    "output_dir": str,
    "emit_diagnostics": _parse_bool,
    "gate": float,
    "workers": _parse_int,
}
SECTIONS = ("scenario", "grids", "experiment", "modes")


def _parse_mode(key, text):
    m = re.fullmatch(r"mode(\d+)", key)
    if not m:
        raise KeyError(key)
    parts = _split(text)
    if len(parts) != 6:
        raise ValueError("expected: modulation, code_rate, rate_bps, a, g, gamma_p_db")
    mod, rate_code, rate, a, g, gp_db = parts
    return AmcMode.from_db(int(m.group(1)), mod, Fraction(rate_code), float(rate), float(a), float(g), float(gp_db))


def parse_config_text(text: str) -> ExperimentSpec:
    section = None
    seen: dict[str, int] = {}
    scenario, top, modes = {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[([A-Za-z_]+)\]", line)
        if m:
            section = m.group(1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", line=lineno)
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if section is None:
            raise ConfigError("key outside of any section", key, lineno)
        qualified = f"{section}.{key}"
        if qualified in seen:
            raise ConfigError(f"duplicate key (first on line {seen[qualified]})", key, lineno)
        seen[qualified] = lineno
        try:
            if section == "scenario":
                if key not in SCENARIO_KEYS:
                    raise KeyError(key)
                scenario[key] = (SCENARIO_KEYS[key](value), lineno)
            elif section == "grids":
                if key not in GRID_KEYS:
                    raise KeyError(key)
                attr, parser = GRID_KEYS[key]
                top[attr] = (parser(value), lineno, key)
            elif section == "experiment":
                if key not in EXPERIMENT_KEYS:
                    raise KeyError(key)
                top[key] = (EXPERIMENT_KEYS[key](value), lineno, key)
            else:
                mode = _parse_mode(key, value)
                modes[mode.index] = (mode, lineno)
        except KeyError:
            raise ConfigError(f"unknown key in [{section}]", key, lineno) from None
        except ValueError as exc:
            raise ConfigError(f"malformed value: {exc}", key, lineno) from None

    # range checks that need the key's line number
    checks = {
        "per_target": lambda v: 0 < v < 1,
        "relay_gain": lambda v: v >= 0,
        "rtt_s": lambda v: v > 0 and math.isfinite(v),
        "base_packet_s": lambda v: v > 0 and math.isfinite(v),
        "n_retx_max": lambda v: v >= 1,
        "n_packets": lambda v: v >= 1,
        "seed": lambda v: 0 <= v < 2**64,
    }
    for key, (value, lineno) in scenario.items():
        if key in checks and not checks[key](value):
            raise ConfigError(f"value {value!r} out of range", key, lineno)

    kwargs = {k: v for k, (v, _) in scenario.items()}
    if modes:
        indices = sorted(modes)
        if indices != list(range(1, len(indices) + 1)):
            raise ConfigError("modes must be numbered mode1..modeM without gaps", "modes")
        kwargs["modes"] = tuple(modes[i][0] for i in indices)
        try:
            ModeTable(kwargs["modes"], kwargs.get("per_target", 1e-4))
        except ValueError as exc:
            raise ConfigError(str(exc), "modes", modes[indices[0]][1]) from None
    try:
        scen = ScenarioConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    spec_kwargs = {k: v for k, (v, _, _) in top.items()}
    try:
        return ExperimentSpec(scenario=scen, **spec_kwargs)
    except ConfigError as exc:
        if exc.key is not None:
            for attr, (_, lineno, key) in top.items():
                if key == exc.key:
                    raise ConfigError(str(exc).split(" (")[0], exc.key, lineno) from None
            if exc.key in scenario:
                raise ConfigError(str(exc).split(" (")[0], exc.key, scenario[exc.key][1]) from None
        raise


def parse_config(path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"configuration file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config_text(text)


def emit_config(spec: ExperimentSpec) -> str:
    """Serialise ``spec`` so that :func:`parse_config_text` reproduces it exactly."""
    sc = spec.scenario
    lines = ["[scenario]"]
    for key in SCENARIO_KEYS:
        lines.append(f"{key} = {_fmt(getattr(sc, key))}")
    lines += ["", "[grids]"]
    lines.append("snr_db = " + ", ".join(_fmt(x) for x in spec.snr_grid))
    lines.append("doppler_hz = " + ", ".join(format_doppler(x) for x in spec.doppler_grid))
    lines += ["", "[experiment]"]
    for key in EXPERIMENT_KEYS:
        lines.append(f"{key} = {_fmt(getattr(spec, key))}")
    lines += ["", "[modes]", "# modulation, code_rate, rate_bps, a, g, gamma_p_db"]
    for m in sc.modes:
        lines.append(
            f"mode{m.index} = {m.modulation}, {m.code_rate}, {_fmt(m.rate_bps)}, "
            f"{_fmt(m.a)}, {_fmt(m.g)}, {_fmt(m.gamma_p_db)}"
        )
    return "\n".join(lines) + "\n"


def emit_defaults() -> str:
    return emit_config(ExperimentSpec())
