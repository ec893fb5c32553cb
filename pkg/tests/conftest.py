import pytest

from harq_lab.amc import ModeTable, db_to_linear, solve_thresholds
from harq_lab.analysis import LinkModel
from harq_lab.channel import FadingParams, build_markov_channel


def make_links(snr_db, doppler_hz, table=None, relay_gain=4.0, partition=None):
    table = table or ModeTable()
    gbar = float(db_to_linear(snr_db))
    partition = partition or solve_thresholds(table, gbar)
    ch = build_markov_channel(FadingParams(gbar, doppler_hz), partition, table.state_intervals())
    return (LinkModel(ch, table, gbar, "SD"),
            LinkModel(ch, table, relay_gain * gbar, "SR"),
            LinkModel(ch, table, relay_gain * gbar, "RD"))


@pytest.fixture(scope="session")
def table():
    return ModeTable()


@pytest.fixture(scope="session")
def links_10db_50hz():
    return make_links(10.0, 50.0)


@pytest.fixture(scope="session")
def links_15db_10hz():
    return make_links(15.0, 10.0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
