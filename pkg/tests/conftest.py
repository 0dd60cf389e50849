import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from alphameta.tasks import Task, TaskCollection

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_collection(rng, J=3, d=2, n_max=8, n_min=1) -> TaskCollection:
    sources = tuple(
        Task(rng.normal(size=(n, d)), rng.normal(size=n), id=f"s{j}")
        for j, n in enumerate(rng.integers(n_min, n_max + 1, size=J))
    )
    n_t = int(rng.integers(n_min, n_max + 1))
    return TaskCollection(sources, Task(rng.normal(size=(n_t, d)), rng.normal(size=n_t), id="t"))


ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def acceptance(request):
    """Record one summary line per acceptance criterion."""
    name = request.node.name

    def record(label: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[name] = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES.values():
            terminalreporter.write_line(line)
