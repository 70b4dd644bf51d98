import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


class Criterion:
    """Collects the checks of one acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.checks: list = []
        self.outcome: str | None = None

    def check(self, name: str, ok, detail: str = "") -> bool:
        self.checks.append((name, bool(ok), detail))
        print(f"  [{'ok' if ok else 'FAIL'}] {name}: {detail}")
        return bool(ok)

    def verify(self) -> None:
        bad = [c for c in self.checks if not c[1]]
        assert not bad, "; ".join(f"{n}: {d}" for n, _, d in bad)

    @property
    def passed(self) -> bool:
        return self.outcome == "passed" and all(c[1] for c in self.checks)


ACCEPTANCE: dict = {}


@pytest.fixture
def criterion(request):
    def make(number: int, title: str) -> Criterion:
        c = Criterion(number, title)
        ACCEPTANCE[number] = c
        request.node._criterion = c
        return c

    return make


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    c = getattr(item, "_criterion", None)
    if c is not None and rep.when == "call":
        c.outcome = rep.outcome


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        c = ACCEPTANCE[k]
        details = "; ".join(f"{n} {d}" for n, _, d in c.checks)
        terminalreporter.write_line(f"criterion {k} [{'PASS' if c.passed else 'FAIL'}] {c.title} :: {details}")
