import numpy as np
import pytest

from ldplab.control import Control, MarkSpace
from ldplab.operators import AffineNoise, ScalarLinearDrift
from ldplab.skeleton import SkeletonProblem

_ACCEPTANCE = []


def scalar_problem(x0=1.0, a=1.0, sigma=1.0, kappa=0.0, base=1.0, T=1.0, F=1.0, nu=1.0):
    drift = ScalarLinearDrift(a, F=F)
    noise = AffineNoise(drift.space, [sigma], kappa=kappa, base=base)
    ms = MarkSpace([0.0], [nu])
    return SkeletonProblem(drift.space, drift, noise, ms, [x0], T)


@pytest.fixture
def scalar():
    return scalar_problem()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def half_control():
    return Control(np.array([0.0, 0.5, 1.0]), np.array([[2.0], [0.5]]))


@pytest.fixture
def acceptance_log():
    def record(number, title, passed, detail=""):
        _ACCEPTANCE.append((number, title, bool(passed), detail))
        print(f"[criterion {number:2d}] {'PASS' if passed else 'FAIL'}  {title}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {title}  {detail}")
