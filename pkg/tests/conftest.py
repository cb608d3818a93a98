import math
from pathlib import Path

import pytest
from hypothesis import settings

from spectrumchain.radio import Location, PropagationModel, RadioNode, RadioParams

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parent.parent
DEMO = ROOT / "scenarios" / "demo.yaml"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def model():
    return PropagationModel(40.0, 1.0, 3.5, 1.0)


def node(nid, x, y, power=20.0, channel=0):
    return RadioNode(nid, Location(x, y), RadioParams(power, channel))


def mw_sum_dbm(levels):
    total = math.fsum(10 ** (l / 10) for l in levels)
    return 10 * math.log10(total) if total > 0 else -math.inf


# -- acceptance summary -----------------------------------------------------------

_CRITERIA: list[tuple[int, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    n, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    _CRITERIA.append((n, title, "PASS" if rep.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, status, detail in sorted(_CRITERIA):
        line = f"[{status}] {n}. {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
