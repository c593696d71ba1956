"""Shared fixtures and the acceptance-line collector."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from tftsales import tensor as T
from tftsales.ingest import WindowSet
from tftsales.synthetic import as_panel, walmart_like

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = Path(__file__).resolve().parent / "fixtures"

_ACCEPTANCE: list[tuple[str, str, str]] = []


def reference_csv_path() -> Path | None:
    """The real weekly-sales file, if one is available locally."""
    env = os.environ.get("TFTSALES_REFERENCE_CSV")
    candidates = [Path(env)] if env else []
    candidates.append(ROOT / "data" / "Walmart.csv")
    for p in candidates:
        if p.is_file():
            return p
    return None


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL/BLOCKED line per criterion; printed at the end of the run."""

    def record(criterion: str, status: str, detail: str = "") -> None:
        line = f"[acceptance] {criterion}: {status}" + (f" ({detail})" if detail else "")
        print(line)
        _ACCEPTANCE.append((criterion, status, detail))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{criterion}: {status}" + (f"  {detail}" if detail else ""))


@pytest.fixture(autouse=True)
def _reset_dtype():
    yield
    T.set_default_dtype(np.float32)


@pytest.fixture(scope="session")
def raw45():
    return walmart_like(45, 143, seed=0)


@pytest.fixture(scope="session")
def panel45(raw45):
    return as_panel(raw45)


@pytest.fixture(scope="session")
def small_panel():
    return as_panel(walmart_like(3, 80, seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_windows(rng, n=4, encoder_len=6, horizon=3, n_enc=7, n_dec=6, stores=(1, 2, 3)) -> WindowSet:
    """Windows with arbitrary values, for shape/property tests that need no real panel."""
    return WindowSet(
        store=np.asarray([stores[i % len(stores)] for i in range(n)], dtype=np.int64),
        origin_t=np.arange(n, dtype=np.int64) + encoder_len - 1,
        encoder=rng.normal(size=(n, encoder_len, n_enc)),
        decoder=rng.normal(size=(n, horizon, n_dec)),
        target=rng.random((n, horizon)),
        actual=rng.uniform(1e5, 2e6, (n, horizon)),
    )
