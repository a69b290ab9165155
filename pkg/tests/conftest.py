import os

import numpy as np
import pytest
from hypothesis import settings

from sparsecl.selector import CompositionRule

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")

# Every CompositionRule built during the session, kept for the KKT audit.
SOLVES = []
_orig_init = CompositionRule.__init__


def _recording_init(self, *args, **kwargs):
    _orig_init(self, *args, **kwargs)
    SOLVES.append((bool(self.converged), float(self.kkt_residual), float(self.lam)))


CompositionRule.__init__ = _recording_init

ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
