import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from secoord import probcore as pc

settings.register_profile(
    "default", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def joint_from(names, table):
    """Joint pmf over binary-or-larger alphabets named ``names``."""
    table = np.asarray(table, dtype=float)
    alphabets = [pc.Alphabet.of_size(n, s) for n, s in zip(names, table.shape)]
    return pc.make_joint(alphabets, table / table.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdict lines, echoed once more at the end of the run
VERDICTS: list[str] = []


def verdict(label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in VERDICTS:
            terminalreporter.write_line(line)
