import sys

import pytest

from pulse.synth import GeneratorConfig, generate_cohort
from pulse.timestore import ingest


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(GeneratorConfig(seed=11, n_users=6, n_days=10))


@pytest.fixture(scope="session")
def small_store(small_cohort):
    c = small_cohort
    return ingest(c.profiles, c.events, c.entries)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
