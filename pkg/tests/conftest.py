import numpy as np
import pytest

_ACCEPTANCE: dict[str, tuple[int, str]] = {}
_OUTCOMES: dict[str, str] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            _ACCEPTANCE[item.nodeid] = (int(mark.args[0]), str(mark.args[1]))


def pytest_runtest_logreport(report):
    if report.nodeid not in _ACCEPTANCE:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _OUTCOMES[report.nodeid] = "PASS" if report.outcome == "passed" else report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (cid, title) in sorted(_ACCEPTANCE.items(), key=lambda kv: kv[1][0]):
        status = _OUTCOMES.get(nodeid, "NOT RUN")
        if status == "FAILED":
            status = "FAIL"
        terminalreporter.write_line(f"criterion {cid:>2}: {status:<7} {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_stability():
    """Rows of the desk stability preset; shared because the run takes a while."""
    from xferscore.bench import STABILITY_PRESETS, run_stability

    return run_stability(STABILITY_PRESETS["desk"])
