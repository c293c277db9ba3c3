import contextlib

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rectrie.models import stream

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return stream(20240601, 0, "aux")


def gaussian_pair(n, m, seed=0, trial=0):
    """Gaussian signal and noise with entry variance 1/n."""
    S = stream(seed, trial, "signal").standard_normal((n, m)) / np.sqrt(n)
    Z = stream(seed, trial, "noise").standard_normal((n, m)) / np.sqrt(n)
    return S, Z


_CRITERIA: list[str] = []


class _Verdict:
    def __init__(self):
        self.detail = ""


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record one PASS/FAIL line for an acceptance criterion; set ``.detail`` inside the block."""
    verdict = _Verdict()
    try:
        yield verdict
    except BaseException as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        line = f"FAIL  criterion {number:2d}: {title} | {verdict.detail} | {msg}"
        _CRITERIA.append(line)
        print(line)
        raise
    line = f"PASS  criterion {number:2d}: {title} | {verdict.detail}"
    _CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
