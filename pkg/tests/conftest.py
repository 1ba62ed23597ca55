import numpy as np
import pytest

from stvcstack.expfam import FamilySpec
from stvcstack.model import Dataset


@pytest.fixture()
def rng():
    return np.random.default_rng(20240611)


def random_spd(n, rng, ridge=0.5):
    A = rng.standard_normal((n, n))
    return A @ A.T / n + ridge * np.eye(n)


def small_dataset(rng, n=30, family="poisson", p=2, varying=(0, 1), beta=None):
    coords = rng.random((n, 3))
    X = np.column_stack([np.ones(n)] + [rng.standard_normal(n) for _ in range(p - 1)])
    if beta is None:
        beta = np.r_[1.5, -0.5, np.zeros(max(p - 2, 0))][:p]
    eta = X @ beta
    if family == "poisson":
        y = rng.poisson(np.exp(eta))
        fam = FamilySpec("poisson", n=n)
    else:
        trials = rng.integers(1, 15, size=n)
        y = rng.binomial(trials, 1 / (1 + np.exp(-eta)))
        fam = FamilySpec("binomial", trials=trials)
    return Dataset(coords, y, fam, X, tuple(varying))


# acceptance results: (criterion, passed, detail), printed in the terminal summary
ACCEPTANCE = []


def record(criterion, passed, detail=""):
    ACCEPTANCE.append((criterion, bool(passed), detail))
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion:<4} {detail}")
