import numpy as np
import pytest

from mimefl.core import RngStream
from mimefl.problems import QuadraticClient, QuadraticPopulation, QuadraticSpec, make_quadratic_population


@pytest.fixture
def two_client_drift():
    """f1 = 3/2 (x - 1)^2, f2 = 1/2 (x + 1)^2; population optimum 0.5."""
    return QuadraticPopulation([
        QuadraticClient.centered(0, [[3.0]], [1.0]),
        QuadraticClient.centered(1, [[1.0]], [-1.0]),
    ])


@pytest.fixture
def noisy_quadratic():
    spec = QuadraticSpec(d=6, N=12, hessian_spread=0.5, optimum_spread=1.0, noise_sd=0.5,
                         mu=0.5, L=3.0, samples_per_client=4)
    return make_quadratic_population(spec, RngStream(11))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# --- acceptance reporting -------------------------------------------------------------

_ACCEPTANCE: list[tuple[str, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        status = "PASS" if report.outcome == "passed" else "FAIL"
        _ACCEPTANCE.append((str(marker.args[0]), marker.args[1], status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(_ACCEPTANCE, key=lambda r: (int(r[0].rstrip("ab")), r[0])):
        line = f"[{status}] {number}. {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
