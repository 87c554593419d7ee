"""Pytest configuration and shared fixtures."""

import itertools
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import linalg, optimize

# Add project root to path to enable imports
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.dataset import EnvironmentData, MultiEnvDataset, Support  # noqa: E402


def make_env(env_id, x, y, mask=None, weight=None) -> EnvironmentData:
    """Environment from a full-length outcome vector (ignored where mask is False)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return EnvironmentData.from_outcomes(env_id, x, y, label_mask=mask, weight=weight)


def make_dataset(*environments) -> MultiEnvDataset:
    return MultiEnvDataset.from_environments(environments)


def linear_dataset(rng, n=200, p=4, beta=(1.0, -2.0, 0.0, 0.0), shifts=(0.0, 1.0), noise=0.1):
    """Two or more environments from y = beta'x + noise with shifted covariate means."""
    beta = np.asarray(beta, dtype=float)
    environments = []
    for index, shift in enumerate(shifts):
        x = rng.standard_normal((n, p)) + shift
        y = x @ beta + noise * rng.standard_normal(n)
        environments.append(make_env(str(index + 1), x, y))
    return MultiEnvDataset.from_environments(environments)


def random_instance(seed, p=4):
    """Two environments with random sizes, coefficients and missingness, plus shifted predictions."""
    rng = np.random.default_rng(seed)
    full = linear_dataset(
        rng,
        n=int(rng.integers(15, 60)),
        p=p,
        beta=rng.standard_normal(p),
        shifts=(0.0, float(rng.uniform(0.5, 2.0))),
        noise=float(rng.uniform(0.1, 1.0)),
    )
    environments = []
    for env in full:
        mask = rng.random(env.N) >= rng.uniform(0.2, 0.8)
        mask[: p + 1] = True
        environments.append(env.with_labels(env.labels, mask))
    predictions = {
        env.env_id: env.labels + rng.normal(0.3, 0.5) + 0.3 * rng.standard_normal(env.N)
        for env in full
    }
    return full, full.replace_environments(environments), predictions


def dense_minimum(p, total):
    """
    Lowest value of ``total(beta, support)`` over all 2^p supports.

    Each restricted objective is recovered as a quadratic from point
    evaluations, minimized by least squares and polished with BFGS.
    """
    best = np.inf
    for k in range(p + 1):
        for positions in itertools.combinations(range(p), k):
            support = Support.from_zero_based(positions)

            def f(beta_s, positions=positions, support=support):
                beta = np.zeros(p)
                beta[list(positions)] = beta_s
                return total(beta, support)

            c = f(np.zeros(k))
            if k == 0:
                best = min(best, c)
                continue
            unit = np.eye(k)
            plus = np.array([f(e) for e in unit])
            minus = np.array([f(-e) for e in unit])
            A = np.diag((plus + minus) / 2 - c)
            for i, j in itertools.combinations(range(k), 2):
                A[i, j] = A[j, i] = (f(unit[i] + unit[j]) - plus[i] - plus[j] + c) / 2
            g = (minus - plus) / 4
            start = linalg.lstsq(A, g)[0]
            polished = optimize.minimize(f, start, method="BFGS", options={"gtol": 1e-12})
            best = min(best, f(start), polished.fun)
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_point_env():
    """One environment with rows (x=1, y=2) and (x=2, y=4)."""
    return make_dataset(make_env("1", [1.0, 2.0], [2.0, 4.0]))


@pytest.fixture
def half_labeled_env():
    """Labeled row (x=1, y=2), unlabeled row (x=2), with predictions h(x) = x."""
    data = make_dataset(make_env("1", [1.0, 2.0], [2.0, 0.0], mask=[True, False]))
    return data, {"1": np.array([1.0, 2.0])}
