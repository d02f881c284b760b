import numpy as np
import pytest

from discourse_sheaves import catalog


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def cycle():
    return catalog.four_cycle()


@pytest.fixture
def clamp():
    return catalog.four_cycle_clamp()


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[crit]
        ok = all(parts.values())
        failed = [name for name, good in parts.items() if not good]
        detail = f"{len(parts)} checks" + (f"; failed: {', '.join(failed)}" if failed else "")
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {crit} ({detail})")
