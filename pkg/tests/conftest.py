import contextlib
import time

import numpy as np
import pytest

from cyberseer import features, telemetry

_VERDICTS: list[tuple[str, bool, str]] = []


@contextlib.contextmanager
def _criterion(name: str, budget_s: float | None = None):
    """Record a PASS/FAIL line for one acceptance criterion; re-raise failures."""
    start = time.perf_counter()
    note = {"detail": ""}
    try:
        yield note
        elapsed = time.perf_counter() - start
        if budget_s is not None:
            assert elapsed < budget_s, f"runtime {elapsed:.1f}s exceeds {budget_s}s"
    except BaseException as exc:
        if isinstance(exc, pytest.skip.Exception):
            _VERDICTS.append((name, None, str(exc)))
            raise
        _VERDICTS.append((name, False, f"{type(exc).__name__}: {exc}".splitlines()[0][:160]))
        raise
    _VERDICTS.append((name, True, f"{note['detail']} [{time.perf_counter() - start:.1f}s]".strip()))


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _VERDICTS:
        tag = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"{tag}  {name}: {detail}")


@pytest.fixture(scope="session")
def cohort():
    return telemetry.generate_cohort(12, seed=11)


@pytest.fixture(scope="session")
def processed(cohort):
    return [features.process_session(s) for s in cohort]


@pytest.fixture(scope="session")
def small_dataset(processed):
    return features.build_dataset(processed, 30)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)
