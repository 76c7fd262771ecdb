import numpy as np
import pytest

from serfspin.dynamics import SimParams, evolve
from serfspin.hilbert import build_system, spin_temperature_state


@pytest.fixture(scope="session")
def rb87():
    return build_system(1.5)


@pytest.fixture(scope="session")
def fig2_traj(rb87):
    """Default FID trajectory: P = 0.1 along x, B = 28 nT, 10 ms at 1 us."""
    rho0 = spin_temperature_state(rb87, 0.1, (1, 0, 0))
    return evolve(rho0, rb87, SimParams.from_field(28.0), 10e-3, 1e-6)


def random_density(dim, rng):
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = z @ z.conj().T
    return rho / np.trace(rho).real


def random_hermitian(dim, rng):
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (z + z.conj().T) / 2


_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, label = marker.args
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if rep.when == "setup":
            detail = f"setup {rep.outcome}"
        _ACCEPTANCE[number] = (label, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        label, passed, detail = _ACCEPTANCE[number]
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {label}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
