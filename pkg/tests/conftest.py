"""Shared fixtures: the tabular test environment, brute-force oracles, and
a synthetic labeled dataset standing in for the benchmark corpora."""

from __future__ import annotations

import numpy as np
import pytest

from covshift.bench import LabeledDataset
from covshift.core import TablePolicy
from covshift.synthetic import TabularDGP

# Four states, three actions, threefold covariate shift (max q/p = 3). The
# tables are written out here, independently of any library defaults, so the
# tests own their ground truth.
FIXTURE_P = [0.45, 0.25, 0.20, 0.10]
FIXTURE_Q = [0.15, 0.15, 0.40, 0.30]
FIXTURE_BEHAVIOR = [
    [0.6, 0.3, 0.1],
    [0.2, 0.5, 0.3],
    [0.3, 0.3, 0.4],
    [0.1, 0.2, 0.7],
]
FIXTURE_SUCCESS = [
    [0.1, 0.2, 0.3],
    [0.3, 0.4, 0.2],
    [0.5, 0.7, 0.6],
    [0.8, 0.9, 0.7],
]
FIXTURE_EVAL_POLICY = [
    [0.2, 0.2, 0.6],
    [0.7, 0.2, 0.1],
    [0.1, 0.8, 0.1],
    [0.5, 0.4, 0.1],
]


@pytest.fixture(scope="session")
def dgp() -> TabularDGP:
    return TabularDGP(
        p=np.array(FIXTURE_P),
        q=np.array(FIXTURE_Q),
        behavior=np.array(FIXTURE_BEHAVIOR),
        success=np.array(FIXTURE_SUCCESS),
        rho=0.5,
    )


@pytest.fixture(scope="session")
def eval_policy() -> TablePolicy:
    return TablePolicy(np.array(FIXTURE_EVAL_POLICY))


def brute_force_value(p_or_q, pi_e, success) -> float:
    """Policy value by plain nested loops (kept free of library code)."""
    total = 0.0
    for s in range(len(p_or_q)):
        for a in range(len(pi_e[0])):
            total += p_or_q[s] * pi_e[s][a] * success[s][a]
    return total


def brute_force_efficiency_bound(p, q, behavior, pi_e, success, rho) -> float:
    """Shift-corrected efficiency bound by explicit enumeration over
    states, actions, and binary rewards, independent of the library."""
    n_states, n_actions = len(p), len(behavior[0])
    hist_term = 0.0
    for s in range(n_states):
        r = q[s] / p[s] if p[s] > 0 else 0.0
        for a in range(n_actions):
            if behavior[s][a] == 0:
                continue
            w = pi_e[s][a] / behavior[s][a]
            # Enumerate the Bernoulli reward explicitly.
            mean_y = success[s][a]
            var_y = 0.0
            for y, prob_y in ((1.0, success[s][a]), (0.0, 1.0 - success[s][a])):
                var_y += prob_y * (y - mean_y) ** 2
            hist_term += p[s] * behavior[s][a] * (r * w) ** 2 * var_y
    v = [sum(pi_e[s][a] * success[s][a] for a in range(n_actions)) for s in range(n_states)]
    mean_v = sum(q[s] * v[s] for s in range(n_states))
    var_v = sum(q[s] * (v[s] - mean_v) ** 2 for s in range(n_states))
    return hist_term / rho + var_v / (1.0 - rho)


def brute_force_ipwcsb_variance(p, q, behavior, pi_e, success, rho) -> float:
    """Asymptotic MSE of ratio-weighted importance sampling with the true
    logging policy, by explicit enumeration."""
    n_states, n_actions = len(p), len(behavior[0])
    v = [sum(pi_e[s][a] * success[s][a] for a in range(n_actions)) for s in range(n_states)]
    mean_g = 0.0
    mean_g2 = 0.0
    for s in range(n_states):
        r = q[s] / p[s] if p[s] > 0 else 0.0
        for a in range(n_actions):
            if behavior[s][a] == 0:
                continue
            w = pi_e[s][a] / behavior[s][a]
            for y, prob_y in ((1.0, success[s][a]), (0.0, 1.0 - success[s][a])):
                g = r * (w * y - v[s])
                weight = p[s] * behavior[s][a] * prob_y
                mean_g += weight * g
                mean_g2 += weight * g * g
    hist_term = mean_g2 - mean_g**2
    mean_v = sum(q[s] * v[s] for s in range(n_states))
    var_v = sum(q[s] * (v[s] - mean_v) ** 2 for s in range(n_states))
    return hist_term / rho + var_v / (1.0 - rho)


def make_surrogate(
    n: int = 4435,
    dim: int = 36,
    classes: int = 6,
    latent: int = 6,
    seed: int = 13,
    separation: float = 0.75,
    ambient_noise: float = 0.3,
) -> LabeledDataset:
    """Labeled dataset with low-dimensional cluster structure embedded in a
    higher-dimensional standardized feature space."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, separation, size=(classes, latent))
    embed = rng.normal(0, 1.0, size=(latent, dim))
    sizes = rng.multinomial(n, np.ones(classes) / classes)
    xs, ys = [], []
    for c, m in enumerate(sizes):
        z = centers[c] + rng.standard_normal((m, latent))
        xs.append(z @ embed + ambient_noise * rng.standard_normal((m, dim)))
        ys.append(np.full(m, c))
    x = np.vstack(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(n)
    x, y = x[perm], y[perm]
    x = (x - x.mean(axis=0)) / x.std(axis=0)
    return LabeledDataset(x, y, classes, name="surrogate")


@pytest.fixture(scope="session")
def surrogate() -> LabeledDataset:
    return make_surrogate()


def gaussian_shift_l2_errors(sizes, seeds, fit_fn) -> dict:
    """Seed-averaged L2 error against the exact ratio of two unit-variance
    Gaussians whose means differ by one half.

    ``fit_fn(hist_x, evl_x)`` must return a predictor mapping a grid of
    covariates to ratio estimates. The analytic ratio is exp(x/2 - 1/8).
    """
    grid = np.linspace(-2.0, 2.0, 81)[:, None]
    truth = np.exp(grid[:, 0] / 2.0 - 0.125)
    averages = {}
    for n in sizes:
        errors = []
        for seed in seeds:
            rng = np.random.default_rng(seed)
            hist_x = rng.standard_normal((n, 1))
            evl_x = rng.standard_normal((n, 1)) + 0.5
            predictor = fit_fn(hist_x, evl_x)
            estimate = np.asarray(predictor(grid), dtype=float)
            errors.append(float(np.sqrt(np.mean((estimate - truth) ** 2))))
        averages[n] = float(np.mean(errors))
    return averages
