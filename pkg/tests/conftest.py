import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gwpcn import channel
from gwpcn.model import NetworkInstance, UserParams
from gwpcn.units_metrics import db_to_linear, dbm_to_watts, noise_power

import oracles


def build_pair(beta, d, budgets, e_max, p_b_dbm, seed, index):
    """Physical two-user instance with Rayleigh gains from the package's channel model."""
    ch = channel.sample(channel.ChannelModel(beta=beta), d, seed, index)
    users = tuple(UserParams(eta=0.5, e_budget=float(b), d=float(x)) for b, x in zip(budgets, d))
    return NetworkInstance(
        users, ch, dbm_to_watts(p_b_dbm), db_to_linear(9.8), noise_power(-160.0, 1e6), e_max
    )


def random_pairs(count, seed):
    rng = np.random.default_rng(seed)
    return [build_pair(*oracles.random_pair(rng), seed, i) for i in range(count)]


@pytest.fixture(scope="session")
def pairs100():
    return random_pairs(100, 2024)


@pytest.fixture(scope="session")
def pairs50():
    return random_pairs(50, 2025)


@pytest.fixture
def fig4_pinned():
    """The fairness-figure constants with unit fading."""
    ch = channel.sample(channel.ChannelModel(beta=2.0, fading=1.0), [5.0, 10.0], 0, 0)
    users = tuple(UserParams(eta=0.5, e_budget=1e-7, d=d) for d in (5.0, 10.0))
    return NetworkInstance(users, ch, dbm_to_watts(20.0), db_to_linear(9.8), noise_power(-160.0, 1e6), 1e-6)


VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else "")
        VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
