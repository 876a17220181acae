import numpy as np
import pytest

from sdmtl.datagen import DataGenConfig, generate


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    """A 2000-row funnel dataset shared by the trainer and CLI tests."""
    out = tmp_path_factory.mktemp("small_data")
    generate(DataGenConfig(rows=2000, cat_fields=4, num_fields=1), seed=3, out_dir=out)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
