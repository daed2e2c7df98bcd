"""Nuisance regressions: outcome models and behavior-policy estimates.

Kernel ridge fits are solved in dual form with mean-centered targets (the
mean is added back at prediction, keeping shrinkage from biasing bounded
rewards toward zero). Nadaraya-Watson variants provide the locally weighted
alternatives used by the plain nonparametric estimators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import HistoricalDataset, Policy, as_covariate_matrix
from .kernels import gaussian_gram, median_heuristic

DEFAULT_PROPENSITY_FLOOR = 0.01


def floor_and_normalize(probs: np.ndarray, floor: float) -> np.ndarray:
    """Project rows onto the simplex with a per-entry lower bound.

    Rows are clipped to be nonnegative, normalized, and then floored at
    ``floor`` with the excess mass removed proportionally from the unfloored
    entries, so each output row sums to one with every entry >= floor.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    n, n_actions = probs.shape
    if not 0 <= floor * n_actions <= 1:
        raise ValueError("floor * action_count must lie in [0, 1]")
    out = np.clip(probs, 0.0, None)
    sums = out.sum(axis=1, keepdims=True)
    uniform = np.full(n_actions, 1.0 / n_actions)
    out = np.where(sums > 0, out / np.where(sums > 0, sums, 1.0), uniform)
    for _ in range(n_actions):
        low = out < floor - 1e-15
        if not low.any():
            break
        fixed_mass = np.where(low, floor, 0.0).sum(axis=1, keepdims=True)
        free = np.where(low, 0.0, out)
        free_sum = free.sum(axis=1, keepdims=True)
        scale = np.where(free_sum > 0, (1.0 - fixed_mass) / np.where(free_sum > 0, free_sum, 1.0), 0.0)
        out = np.where(low, floor, free * scale)
    return out


def _dual_ridge_solve(gram: np.ndarray, targets: np.ndarray, ridge: float) -> np.ndarray:
    system = gram + ridge * np.eye(len(gram))
    chol = scipy.linalg.cho_factor(system, check_finite=False)
    return scipy.linalg.cho_solve(chol, targets, check_finite=False)


@dataclass(frozen=True)
class KernelRidgeModel:
    """Per-action RBF ridge regressions of the reward on the covariate."""

    action_count: int
    sigma: float
    ridge: float
    reward_max: float
    centers: tuple            # per action: (n_a, d) covariates or None
    coefs: tuple              # per action: (n_a,) dual coefficients or None
    offsets: tuple            # per action: training-target mean
    targets: tuple            # per action: centered targets (kept for diagnostics)

    def predict(self, actions: np.ndarray, covariates: np.ndarray) -> np.ndarray:
        x = as_covariate_matrix(covariates)
        actions = np.asarray(actions, dtype=int)
        out = np.empty(len(x))
        for a in np.unique(actions):
            mask = actions == a
            if self.centers[a] is None:
                out[mask] = self.offsets[a]
            else:
                k = gaussian_gram(x[mask], self.centers[a], self.sigma)
                out[mask] = k @ self.coefs[a] + self.offsets[a]
        return np.clip(out, 0.0, self.reward_max)

    def solve_residual(self, action: int) -> float:
        """Relative residual of the dual system for one action's fit."""
        if self.centers[action] is None:
            return 0.0
        gram = gaussian_gram(self.centers[action], self.centers[action], self.sigma)
        lhs = (gram + self.ridge * np.eye(len(gram))) @ self.coefs[action]
        rhs = np.asarray(self.targets[action])
        denom = np.linalg.norm(rhs)
        if denom == 0:
            return float(np.linalg.norm(lhs))
        return float(np.linalg.norm(lhs - rhs) / denom)


def fit_outcome_krr(
    data: HistoricalDataset,
    sigma: float | None = None,
    ridge: float = 1e-3,
    n_actions: int | None = None,
) -> KernelRidgeModel:
    """Fit one RBF ridge regression of reward on covariate per action.

    Actions with no observations fall back to the overall mean reward.
    """
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    if n_actions is None:
        n_actions = int(data.actions.max()) + 1
    if sigma is None:
        sigma = median_heuristic(data.covariates)
    global_mean = float(data.rewards.mean())
    centers, coefs, offsets, targets = [], [], [], []
    for a in range(n_actions):
        mask = data.actions == a
        if not mask.any():
            centers.append(None)
            coefs.append(None)
            offsets.append(global_mean)
            targets.append(None)
            continue
        x_a = data.covariates[mask]
        y_a = data.rewards[mask]
        mean_a = float(y_a.mean())
        centered = y_a - mean_a
        gram = gaussian_gram(x_a, x_a, sigma)
        coefs.append(_dual_ridge_solve(gram, centered, ridge))
        centers.append(x_a)
        offsets.append(mean_a)
        targets.append(centered)
    return KernelRidgeModel(
        action_count=n_actions,
        sigma=sigma,
        ridge=ridge,
        reward_max=data.reward_max,
        centers=tuple(centers),
        coefs=tuple(coefs),
        offsets=tuple(offsets),
        targets=tuple(targets),
    )


@dataclass(frozen=True)
class FittedBehaviorPolicy(Policy):
    """Behavior-policy estimate exposed through the common policy interface.

    ``raw_prob_matrix`` returns the regression outputs before flooring, which
    is occasionally useful for diagnostics.
    """

    action_count: int
    floor: float
    _raw: object  # callable (n, d) -> (n, action_count)

    def raw_prob_matrix(self, covariates: np.ndarray) -> np.ndarray:
        return self._raw(as_covariate_matrix(covariates))

    def prob_matrix(self, covariates: np.ndarray) -> np.ndarray:
        return floor_and_normalize(self.raw_prob_matrix(covariates), self.floor)


def fit_behavior_krr(
    data: HistoricalDataset,
    sigma: float | None = None,
    ridge: float = 1e-3,
    floor: float = DEFAULT_PROPENSITY_FLOOR,
    n_actions: int | None = None,
) -> FittedBehaviorPolicy:
    """Estimate the behavior policy by one-hot indicator kernel ridge regression.

    All actions share the same Gram matrix, so the fit is a single solve with
    one right-hand side per action. Outputs are floored at ``floor`` and
    renormalized into a valid conditional probability.
    """
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    if n_actions is None:
        n_actions = int(data.actions.max()) + 1
    if sigma is None:
        sigma = median_heuristic(data.covariates)
    if n_actions == 1:
        return FittedBehaviorPolicy(
            action_count=1, floor=min(floor, 1.0),
            _raw=lambda x: np.ones((len(x), 1)),
        )
    onehot = np.zeros((len(data), n_actions))
    onehot[np.arange(len(data)), data.actions] = 1.0
    means = onehot.mean(axis=0)
    gram = gaussian_gram(data.covariates, data.covariates, sigma)
    coefs = _dual_ridge_solve(gram, onehot - means, ridge)
    train_x = data.covariates

    def raw(x: np.ndarray) -> np.ndarray:
        return gaussian_gram(x, train_x, sigma) @ coefs + means

    return FittedBehaviorPolicy(action_count=n_actions, floor=floor, _raw=raw)


@dataclass(frozen=True)
class NadarayaWatsonModel:
    """Locally weighted average of rewards, one smoother per action.

    Predictions are convex combinations of training rewards; where the local
    kernel mass vanishes the action's mean reward is used instead (or an error
    is raised when the fallback is disabled).
    """

    action_count: int
    bandwidth: float
    centers: tuple   # per action: (n_a, d) or None
    values: tuple    # per action: (n_a,) rewards or None
    fallbacks: tuple  # per action: mean reward (None when action unseen)
    allow_fallback: bool = True

    def predict(self, actions: np.ndarray, covariates: np.ndarray) -> np.ndarray:
        x = as_covariate_matrix(covariates)
        actions = np.asarray(actions, dtype=int)
        out = np.empty(len(x))
        for a in np.unique(actions):
            mask = actions == a
            if self.centers[a] is None:
                if not self.allow_fallback or self.fallbacks[a] is None:
                    raise ValueError(f"no training samples for action {a}")
                out[mask] = self.fallbacks[a]
                continue
            weights = gaussian_gram(x[mask], self.centers[a], self.bandwidth)
            denom = weights.sum(axis=1)
            numer = weights @ self.values[a]
            degenerate = denom < 1e-12
            if degenerate.any() and not self.allow_fallback:
                raise ValueError(f"vanishing kernel mass for action {a}")
            safe = np.where(degenerate, 1.0, denom)
            out[mask] = np.where(degenerate, self.fallbacks[a], numer / safe)
        return out


def fit_outcome_nw(
    data: HistoricalDataset,
    h: float | None = None,
    n_actions: int | None = None,
    allow_fallback: bool = True,
) -> NadarayaWatsonModel:
    """Fit the Nadaraya-Watson reward smoother for each action."""
    if n_actions is None:
        n_actions = int(data.actions.max()) + 1
    if h is None:
        h = median_heuristic(data.covariates)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    global_mean = float(data.rewards.mean())
    centers, values, fallbacks = [], [], []
    for a in range(n_actions):
        mask = data.actions == a
        if not mask.any():
            centers.append(None)
            values.append(None)
            fallbacks.append(global_mean if allow_fallback else None)
            continue
        centers.append(data.covariates[mask])
        values.append(data.rewards[mask])
        fallbacks.append(float(data.rewards[mask].mean()))
    return NadarayaWatsonModel(
        action_count=n_actions,
        bandwidth=float(h),
        centers=tuple(centers),
        values=tuple(values),
        fallbacks=tuple(fallbacks),
        allow_fallback=allow_fallback,
    )


def fit_behavior_nw(
    data: HistoricalDataset,
    h: float | None = None,
    floor: float = DEFAULT_PROPENSITY_FLOOR,
    n_actions: int | None = None,
) -> FittedBehaviorPolicy:
    """Kernel estimate of the behavior policy: locally weighted action frequencies."""
    if n_actions is None:
        n_actions = int(data.actions.max()) + 1
    if h is None:
        h = median_heuristic(data.covariates)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    onehot = np.zeros((len(data), n_actions))
    onehot[np.arange(len(data)), data.actions] = 1.0
    marginals = onehot.mean(axis=0)
    train_x = data.covariates

    def raw(x: np.ndarray) -> np.ndarray:
        weights = gaussian_gram(x, train_x, h)
        denom = weights.sum(axis=1, keepdims=True)
        probs = np.where(denom > 1e-12, weights @ onehot / np.where(denom > 0, denom, 1.0), marginals)
        return probs

    return FittedBehaviorPolicy(action_count=n_actions, floor=floor, _raw=raw)
