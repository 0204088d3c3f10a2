import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, filled by the ``criterion`` fixture
_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Call as criterion(k, title, budget_s); the verdict is taken from the test outcome."""
    rec = {}

    def start(k, title, budget):
        rec.update(k=k, title=title, budget=budget, t0=time.perf_counter())
    yield start
    if rec:
        rec["elapsed"] = time.perf_counter() - rec.pop("t0")
        rec["node"] = request.node
        _CRITERIA[rec["k"]] = rec


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    out = yield
    rep = out.get_result()
    if rep.when == "call":
        item.call_passed = rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        r = _CRITERIA[k]
        ok = getattr(r["node"], "call_passed", False)
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {k:2d}: {r['title']} "
                                    f"({r['elapsed']:.1f} s, budget {r['budget']:.0f} s)")
