import pytest

from share_grpo.config import TrainConfig
from share_grpo.trainer import train


class RunCache:
    """Train each distinct config once per session."""

    def __init__(self):
        self._runs = {}

    def get(self, **overrides):
        cfg = TrainConfig(**overrides)
        key = tuple(sorted(cfg.to_dict().items()))
        if key not in self._runs:
            self._runs[key] = train(cfg)
        return self._runs[key]


@pytest.fixture(scope="session")
def runs():
    return RunCache()


_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _criteria[marker.args[0]] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_criteria):
        status, detail = _criteria[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {detail}")
