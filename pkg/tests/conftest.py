import dataclasses

import pytest

from litesim.hardware import default_gpu_specs
from litesim.search import sweep
from litesim.workload import default_models

# filled by test_acceptance.verdict, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def gpus():
    return {g.name: g for g in default_gpu_specs()}


@pytest.fixture(scope="session")
def models():
    return {m.name: m for m in default_models()}


@pytest.fixture(scope="session")
def fp16_models(models):
    return {n: dataclasses.replace(m, bytes_per_param=2, bytes_per_act=2) for n, m in models.items()}


@pytest.fixture(scope="session")
def full_sweep(models, gpus):
    return sweep(list(models.values()), list(gpus.values()))
