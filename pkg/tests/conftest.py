import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("repo")

_RESULTS = pytest.StashKey[dict]()
_DETAIL = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def report(request):
    """Collect measurement strings shown next to an acceptance verdict."""
    lines = []
    request.node.stash[_DETAIL] = lines

    def add(text):
        print(text)
        lines.append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    detail = "; ".join(item.stash.get(_DETAIL, []))
    status = "PASS" if rep.passed else "FAIL"
    item.config.stash[_RESULTS][number] = f"criterion {number:>2} {status}  {title}" + (
        f"  [{detail}]" if detail else ""
    )


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
