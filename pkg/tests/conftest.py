import sys

import numpy as np
import pytest

from recursep import Dataset, DiscreteDGPConfig, SubjectHistory, TimeGrid, generate_discrete


def make_dataset(K, subjects, tau=None):
    """``subjects``: iterable of ``(arm, counts, death, censor)`` tuples."""
    grid = TimeGrid.uniform(K, tau)
    hist = [
        SubjectHistory(f"s{i}", arm, np.asarray(counts), death, censor)
        for i, (arm, counts, death, censor) in enumerate(subjects)
    ]
    return Dataset(grid, hist)


def small_dgp(seed=0, K=60, n=200, pattern="constant", **kw):
    """A short, high-rate version of the additive generator for fast tests."""
    params = dict(
        K=K, n=n, baseline_pattern=pattern, seed=seed,
        beta_D_0=0.01, beta_D_A=-0.005, beta_Y_D=0.002,
        baseline_start=0.08, baseline_step=0.0, baseline_limit=0.08,
    )
    params.update(kw)
    return generate_discrete(DiscreteDGPConfig(**params))


def with_censoring(dataset, rng, rate=0.01):
    """Random interval-start censoring of subjects still under follow-up."""
    K = dataset.K
    events = np.array(dataset.events)
    death = np.array(dataset.death)
    censor = np.zeros(dataset.n, dtype=np.int64)
    for i in range(dataset.n):
        c = int(rng.geometric(rate)) + 1
        end = death[i] if death[i] else K + 1
        if c <= K and c <= end:
            if death[i] and c <= death[i]:
                death[i] = 0
            censor[i] = c
            events[i, c - 1:] = 0
    return Dataset.from_arrays(dataset.grid, dataset.arm, events, death, censor, dataset.ids)


@pytest.fixture
def sim_small():
    return small_dgp(seed=11)


@pytest.fixture
def sim_censored():
    return with_censoring(small_dgp(seed=12), np.random.default_rng(5))


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance report so it appears without ``-s``."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
