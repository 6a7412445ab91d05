import numpy as np
import pytest

from drcme.cme import fit_cme
from drcme.datagen import Dataset
from drcme.kernels import KernelSpec, median_heuristic
from drcme.propensity import fit_logistic
from drcme.statistics import OutcomeBank


class Instance:
    """Random train/test split with fitted nuisance models."""

    def __init__(self, n, seed, d=3, p=1, lam=None):
        rng = np.random.default_rng(seed)
        N = 2 * n
        X = rng.standard_normal((N, d))
        e = 1 / (1 + np.exp(-(X @ rng.normal(0, 0.7, d))))
        T = (rng.random(N) < e).astype(int)
        # both arms need at least two units in each fold
        T[:4] = [0, 1, 0, 1]
        T[n : n + 4] = [0, 1, 0, 1]
        Y = (X[:, :1] + T[:, None] * 1.5 + 0.3 * rng.standard_normal((N, 1))) * np.ones((1, p))
        Y += 0.1 * rng.standard_normal((N, p))
        self.train = Dataset(X[:n], T[:n], Y[:n])
        self.test = Dataset(X[n:], T[n:], Y[n:])
        self.kx = KernelSpec.gaussian(median_heuristic(X))
        self.ky = KernelSpec.gaussian(median_heuristic(Y))
        self.prop = fit_logistic(self.train.X, self.train.T, clip_delta=0.05)
        self.cme = {t: fit_cme(self.train.X, self.train.T, t, self.kx, lam) for t in (0, 1)}
        self.bank = OutcomeBank(self.train.Y, self.test.Y, self.ky)


@pytest.fixture
def instance_factory():
    return Instance


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    def add(number, ok, text):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {text}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
