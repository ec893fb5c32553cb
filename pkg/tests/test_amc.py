import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from harq_lab.amc import (
    DEFAULT_MODES,
    AmcMode,
    InfeasibleTargetError,
    ModeTable,
    avg_per_first_tx,
    db_to_linear,
    interval_mass,
    per_instantaneous,
    select_mode,
    solve_thresholds,
)
from harq_lab.numerics import DomainError

TABLE = ModeTable()
SNR_GRID_DB = range(0, 31, 5)


def test_table_one_values():
    assert [m.rate_bps for m in DEFAULT_MODES] == [0.5, 1.0, 1.5, 2.25, 3.0, 4.5]
    assert [m.a for m in DEFAULT_MODES] == [274.7229, 90.2514, 67.6181, 50.1222, 53.3987, 35.3508]
    assert [m.g for m in DEFAULT_MODES] == [7.9932, 3.4998, 1.6883, 0.6644, 0.3756, 0.0900]
    assert [m.gamma_p_db for m in DEFAULT_MODES] == [-1.5331, 1.0942, 3.9722, 7.7021, 10.2488, 15.9784]
    assert [m.modulation for m in DEFAULT_MODES] == ["BPSK", "QPSK", "QPSK", "16-QAM", "16-QAM", "64-QAM"]
    assert DEFAULT_MODES[3].code_rate == Fraction(9, 16)
    assert TABLE.per_target == 1e-4


@pytest.mark.parametrize("mode", DEFAULT_MODES)
def test_branches_meet_near_one(mode):
    assert mode.knee_mismatch() <= 0.05


def test_gamma_p_stored_linear():
    assert DEFAULT_MODES[0].gamma_p == pytest.approx(0.70262, rel=1e-4)


def test_per_instantaneous_examples():
    m1, m6 = DEFAULT_MODES[0], DEFAULT_MODES[5]
    assert per_instantaneous(m1, 0.0) == 1.0
    assert per_instantaneous(m1, m1.gamma_p) == pytest.approx(1.0, rel=0.02)
    expected = 35.3508 * math.exp(-0.09 * 2 * m6.gamma_p)
    assert per_instantaneous(m6, 2 * m6.gamma_p) == pytest.approx(expected, rel=1e-12)
    assert per_instantaneous(m6, 2 * m6.gamma_p) == pytest.approx(0.0284, abs=2e-4)


@given(st.integers(0, 5), st.floats(0, 1e4))
def test_per_is_probability(i, gamma):
    assert 0.0 <= per_instantaneous(DEFAULT_MODES[i], gamma) <= 1.0


def test_avg_per_point_limit():
    m = DEFAULT_MODES[2]
    x = 9.0
    assert avg_per_first_tx(m, x, x + 1e-9, 10.0) == pytest.approx(per_instantaneous(m, x), rel=1e-7)


@pytest.mark.parametrize("i", range(6))
def test_avg_per_closed_form_matches_quadrature(i):
    m = DEFAULT_MODES[i]
    for lo, hi in [(m.gamma_p, math.inf), (m.gamma_p, 3 * m.gamma_p), (2 * m.gamma_p, 2.5 * m.gamma_p)]:
        closed = avg_per_first_tx(m, lo, hi, 10.0)
        quad = avg_per_first_tx(m, lo, hi, 10.0, method="quad")
        assert closed == pytest.approx(quad, rel=1e-10, abs=1e-10)


def test_avg_per_literal_closed_form():
    m, gbar = DEFAULT_MODES[1], 10.0
    lo = m.gamma_p
    pi = interval_mass(lo, math.inf, gbar)
    lit = m.a * math.exp(-(m.g + 1 / gbar) * lo) / ((1 + m.g * gbar) * pi)
    assert avg_per_first_tx(m, lo, math.inf, gbar) == pytest.approx(lit, rel=1e-12)


@given(st.floats(0.0, 20.0), st.floats(0.01, 20.0))
def test_avg_per_decreases_with_lower_edge(x, dx):
    m = DEFAULT_MODES[3]
    lo = m.gamma_p + x
    assert avg_per_first_tx(m, lo + dx, math.inf, 10.0) < avg_per_first_tx(m, lo, math.inf, 10.0)


def test_avg_per_empty_interval():
    with pytest.raises(DomainError):
        avg_per_first_tx(DEFAULT_MODES[0], 2.0, 2.0, 1.0)


@pytest.mark.parametrize("snr_db", list(range(0, 31, 5)))
def test_thresholds_feasible_and_binding(snr_db):
    gbar = float(db_to_linear(snr_db))
    part = solve_thresholds(TABLE, gbar)
    th = part.thresholds
    assert th[0] == 0 and th[-1] == math.inf
    for m in range(1, 7):
        per = avg_per_first_tx(TABLE[m], th[m], th[m + 1], gbar)
        assert per <= 1e-4 * (1 + 1e-4)
        assert th[m] >= TABLE[m].gamma_p
        if th[m] > TABLE[m].gamma_p:
            assert per == pytest.approx(1e-4, rel=1e-6)


def test_thresholds_strictly_increase():
    for snr_db in range(0, 31, 5):
        th = solve_thresholds(TABLE, float(db_to_linear(snr_db))).thresholds
        assert all(b > a for a, b in zip(th, th[1:]))


def test_tighter_target_raises_every_threshold():
    for snr_db in range(0, 31, 5):
        gbar = float(db_to_linear(snr_db))
        base = solve_thresholds(TABLE, gbar).thresholds
        tight = solve_thresholds(ModeTable(DEFAULT_MODES, 1e-5), gbar).thresholds
        assert all(t > b for b, t in zip(base[1:-1], tight[1:-1]))


def test_loose_target_collapses_to_knees():
    part = solve_thresholds(ModeTable(DEFAULT_MODES, 0.999999), 10.0)
    for m in range(1, 7):
        assert part.thresholds[m] == pytest.approx(TABLE[m].gamma_p, rel=1e-3)


def test_zero_fit_constant_clamps_to_knee():
    modes = tuple(AmcMode.from_db(m.index, m.modulation, m.code_rate, m.rate_bps, 0.0, m.g, m.gamma_p_db)
                  for m in DEFAULT_MODES)
    part = solve_thresholds(ModeTable(modes), 10.0)
    assert part.thresholds[1:-1] == tuple(m.gamma_p for m in DEFAULT_MODES)


def test_infeasible_target_names_mode():
    bad = AmcMode.from_db(1, "X", "1/2", 0.5, 1e9, 1e-9, 0.0)
    with pytest.raises(InfeasibleTargetError) as info:
        solve_thresholds(ModeTable((bad,), 1e-4), 1.0)
    assert info.value.mode_index == 1


def test_select_mode_examples():
    part = solve_thresholds(TABLE, 10.0)
    th = part.thresholds
    assert select_mode(0.0, part) == 0
    assert select_mode(th[3], part) == 3
    assert select_mode(np.nextafter(th[3], 0), part) == 2
    assert select_mode(th[6] * 10, part) == 6


@given(st.floats(0, 1e5, allow_nan=False))
def test_select_mode_partitions_axis(gamma):
    part = solve_thresholds(TABLE, 10.0)
    n = select_mode(gamma, part)
    lo, hi = part.bounds(n)
    assert lo <= gamma < hi


def test_state_intervals():
    iv = TABLE.state_intervals(1e-3, 2e-3)
    assert iv[1] == pytest.approx(3e-3)
    assert iv[6] == pytest.approx(2e-3 + 1e-3 / 9)
    assert iv[0] == iv[1]


def test_mode_table_validation():
    with pytest.raises(ValueError):
        ModeTable(DEFAULT_MODES, 2.0)
    with pytest.raises(ValueError):
        ModeTable(tuple(reversed(DEFAULT_MODES)))
