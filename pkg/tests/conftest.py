from __future__ import annotations

from dataclasses import replace

import pytest

from streamdiag.ingest import join_records
from streamdiag.sim import SimConfig, simulate


def joined(results):
    """(meta, joined chunks, truth) for every simulated session."""
    out = []
    for r in results:
        chunks, _ = join_records(r.player, r.cdn, r.tcp, [r.meta])
        out.append((r.meta, chunks, r.truth))
    return out


def uniform_loss(cfg: SimConfig) -> SimConfig:
    """Same config with the first-chunk loss burst switched off."""
    paths = tuple(replace(p, first_chunk_loss_multiplier=1.0) for p in cfg.paths)
    return cfg.with_overrides(paths=paths)


@pytest.fixture(scope="session")
def small_run():
    """300 default sessions, joined."""
    return joined(simulate(SimConfig(n_sessions=300, seed=5)))


@pytest.fixture(scope="session")
def default_10k():
    return joined(simulate(SimConfig(n_sessions=10_000, seed=1)))


@pytest.fixture(scope="session")
def fault_free_2k():
    return joined(simulate(SimConfig(n_sessions=2_000, seed=2).fault_free()))


@pytest.fixture(scope="session")
def uniform_loss_10k():
    return joined(simulate(uniform_loss(SimConfig(n_sessions=10_000, seed=1))))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
