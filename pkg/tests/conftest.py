import pytest

# number -> (summary, passed, detail)
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, summary): acceptance criterion")


@pytest.fixture
def detail(request):
    """Attach a short measured-value note to the criterion line."""
    notes = []
    request.node.criterion_notes = notes
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        number, summary = marker.args
        notes = "; ".join(getattr(item, "criterion_notes", []))
        _CRITERIA[number] = (summary, rep.passed, notes)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        summary, passed, notes = _CRITERIA[number]
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] {number:>2}. {summary}"
        if notes:
            line += f" | {notes}"
        tr.write_line(line)
    n_pass = sum(1 for _, ok, _ in _CRITERIA.values() if ok)
    tr.write_line(f"{n_pass}/{len(_CRITERIA)} criteria passed")
