import contextlib

import pytest

_RESULTS = {}


class _Record(dict):
    """Measurements for one acceptance criterion, filled in by the test."""


@pytest.fixture
def criterion():
    @contextlib.contextmanager
    def _ctx(number, title):
        rec = _Record()
        ok = False
        try:
            yield rec
            ok = True
        finally:
            _RESULTS[number] = (title, ok, dict(rec))

    return _ctx


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3g}"
    return str(v)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, ok, rec = _RESULTS[number]
        details = ", ".join(f"{k}={_fmt(v)}" for k, v in rec.items())
        tr.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {details}")
