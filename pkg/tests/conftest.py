import pytest

# Outcomes of tests marked ``criterion``, keyed by criterion number.
CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else "FAIL"
    # A failure in any phase sticks; a later passing phase never overwrites it.
    if CRITERIA.get(number, ("", "PASS", ""))[1] == "PASS":
        CRITERIA[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, status, detail = CRITERIA[number]
        line = f"{status} criterion {number}: {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
