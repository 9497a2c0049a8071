"""Shared fixtures and the acceptance summary printed at the end of a run."""
from __future__ import annotations

import numpy as np
import pytest

ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = ("PASS" if passed else "FAIL", detail)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, p: int, cond: float = 10.0) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    ev = np.exp(rng.uniform(0.0, np.log(cond), p))
    S = Q @ np.diag(ev) @ Q.T
    return (S + S.T) / 2


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        status, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"ACCEPTANCE {k}: {status}  {detail}")
