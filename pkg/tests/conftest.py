import numpy as np
import pytest

from wasn_postfilter.synth import babble, speech_like

# one line per acceptance criterion, printed in the terminal summary
_ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[key])


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)``; the line is echoed at the end."""
    def record(number: int, title: str, passed: bool, detail: str = ""):
        line = f"[{'PASS' if passed else 'FAIL'}] {number}. {title}"
        if detail:
            line += f" -- {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed
    return record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def speech():
    return speech_like(1.5, seed=7)


@pytest.fixture(scope="session")
def noise():
    return babble(4.0, seed=11, talkers=4)
