import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, derandomize=True)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number checked by the test")
    config._acceptance = {}


@pytest.fixture
def record_criterion(request):
    """``record(ok, detail)`` stores a pass/fail line for this test's criterion."""
    marker = request.node.get_closest_marker("criterion")
    number = marker.args[0]

    def record(ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config._acceptance[number] = line
        print(line)
        return ok

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and rep.when == "call":
        results = item.config._acceptance
        n = marker.args[0]
        if rep.failed and (n not in results or ": PASS" in results[n]):
            text = str(call.excinfo.value).splitlines() if call.excinfo else []
            msg = text[0] if text else "failed"
            results[n] = f"criterion {n:>2}: FAIL  {msg}"


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_acceptance", {})
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
