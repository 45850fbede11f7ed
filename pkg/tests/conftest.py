import time
from contextlib import contextmanager

import pytest

from gwdesign.config import ChainSection, ExperimentConfig, MeshConfig, PriorConfig
from gwdesign.experiment import Setup

_ACCEPTANCE = pytest.StashKey[list]()


def make_tiny_config(**overrides):
    cfg = dict(
        mesh=MeshConfig(fine=(24, 12), coarse=(12, 6)),
        prior=PriorConfig(truth_n_kl=32, n_kl=16),
        chain=ChainSection(n_fine_samples=400, burn_in=100),
        replicates=2,
        seed=3,
    )
    cfg.update(overrides)
    return ExperimentConfig(**cfg)


@pytest.fixture(scope="session")
def tiny_config():
    return make_tiny_config()


@pytest.fixture(scope="session")
def tiny_setup(tiny_config):
    return Setup.build(tiny_config)


@pytest.fixture
def criterion(request):
    """Context manager recording a PASS/FAIL line for an acceptance criterion."""
    log = request.config.stash.setdefault(_ACCEPTANCE, [])

    @contextmanager
    def record(number, title):
        t0 = time.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            log.append((number, title, ok, time.perf_counter() - t0))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE, [])
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, seconds in sorted(log):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  ({seconds:7.1f} s)  {title}")
