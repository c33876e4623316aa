import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from robustsel.flowdata import FeatureSchema, FeatureTable

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_table(values, labels, names=None, kinds=None) -> FeatureTable:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    d = values.shape[1]
    names = names or [f"f{j}" for j in range(d)]
    kinds = kinds or ["continuous"] * d
    return FeatureTable(FeatureSchema(tuple(names), tuple(kinds)), values,
                        np.asarray(labels, dtype=np.int64))


@pytest.fixture
def separable_table() -> FeatureTable:
    """One threshold-separable feature (malicious iff f0 > 5) plus noise."""
    rng = np.random.default_rng(7)
    n = 600
    y = (rng.random(n) < 0.3).astype(np.int64)
    f0 = np.where(y == 1, rng.uniform(6, 10, n), rng.uniform(0, 4, n))
    noise = rng.normal(size=(n, 2))
    return make_table(np.column_stack([f0, noise]), y)


# -- acceptance reporting ----------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
