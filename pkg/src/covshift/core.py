"""Shared domain types: datasets, policies, nuisance functions, fold partitions.

Conventions used throughout the package: covariates are float arrays of shape
``(n, d)``, actions are integer indices in ``[0, action_count)``, and rewards
are floats in ``[0, reward_max]``. All types are immutable after construction
and safe to query from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PROB_ATOL = 1e-12

# Default overlap bounds. The ratio bound caps the covariate density ratio,
# the weight bound caps the policy ratio pi_e / pi_b_hat (1 / default
# propensity floor of 0.01).
DEFAULT_RATIO_BOUND = 10.0
DEFAULT_WEIGHT_BOUND = 100.0


def as_covariate_matrix(x: np.ndarray) -> np.ndarray:
    """Coerce input to a 2-d float array of covariate rows."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"covariates must be 1-d or 2-d, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("covariates must be finite (no NaN/Inf)")
    return arr


class Policy:
    """Conditional distribution over a finite action set given a covariate.

    Subclasses implement ``prob_matrix``; every row it returns must be a
    probability vector (nonnegative, summing to one).
    """

    action_count: int

    def prob_matrix(self, covariates: np.ndarray) -> np.ndarray:
        """Return an array of shape ``(n, action_count)`` of action probabilities."""
        raise NotImplementedError

    def prob(self, action: int, x: np.ndarray) -> float:
        return float(self.prob_matrix(as_covariate_matrix(x))[0, action])

    def prob_of_actions(self, actions: np.ndarray, covariates: np.ndarray) -> np.ndarray:
        """Probability of each row's logged action, shape ``(n,)``."""
        p = self.prob_matrix(covariates)
        return p[np.arange(len(actions)), np.asarray(actions, dtype=int)]


@dataclass(frozen=True)
class UniformPolicy(Policy):
    action_count: int

    def __post_init__(self):
        if self.action_count < 1:
            raise ValueError("action_count must be >= 1")

    def prob_matrix(self, covariates: np.ndarray) -> np.ndarray:
        x = as_covariate_matrix(covariates)
        return np.full((x.shape[0], self.action_count), 1.0 / self.action_count)


@dataclass(frozen=True)
class TablePolicy(Policy):
    """Policy over integer-encoded states: covariate ``[s]`` maps to ``table[s]``."""

    table: np.ndarray  # (n_states, n_actions), rows sum to 1

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        if table.ndim != 2:
            raise ValueError("table must be 2-d")
        if np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1.0) > PROB_ATOL):
            raise ValueError("each table row must be a probability vector")
        object.__setattr__(self, "table", table)

    @property
    def action_count(self) -> int:
        return self.table.shape[1]

    def prob_matrix(self, covariates: np.ndarray) -> np.ndarray:
        x = as_covariate_matrix(covariates)
        states = x[:, 0].astype(int)
        if states.min() < 0 or states.max() >= self.table.shape[0]:
            raise ValueError("state index out of range")
        return self.table[states]


@dataclass(frozen=True)
class DeterministicLabelPolicy(Policy):
    """Point mass on the action chosen by a classifier ``predict(X) -> labels``."""

    predict: Callable[[np.ndarray], np.ndarray]
    action_count: int

    def prob_matrix(self, covariates: np.ndarray) -> np.ndarray:
        x = as_covariate_matrix(covariates)
        labels = np.asarray(self.predict(x), dtype=int)
        out = np.zeros((x.shape[0], self.action_count))
        out[np.arange(x.shape[0]), labels] = 1.0
        return out


@dataclass(frozen=True)
class MixturePolicy(Policy):
    """Convex combination ``(1 - w) * base + w * uniform``."""

    base: Policy
    uniform_weight: float

    def __post_init__(self):
        if not 0.0 <= self.uniform_weight <= 1.0:
            raise ValueError("uniform_weight must lie in [0, 1]")

    @property
    def action_count(self) -> int:
        return self.base.action_count

    def prob_matrix(self, covariates: np.ndarray) -> np.ndarray:
        w = self.uniform_weight
        base = self.base.prob_matrix(covariates)
        return (1.0 - w) * base + w / self.action_count


def mixture_policy(base: Policy, uniform_weight: float) -> Policy:
    """Mix a base policy with the uniform random policy."""
    return MixturePolicy(base, uniform_weight)


def policy_prob_vector(policy: Policy, x: np.ndarray) -> np.ndarray:
    """Action-probability vector of ``policy`` at a single covariate."""
    vec = policy.prob_matrix(as_covariate_matrix(x))[0]
    if np.any(vec < 0) or abs(vec.sum() - 1.0) > PROB_ATOL:
        raise ValueError("policy returned an invalid probability vector")
    return vec


@dataclass(frozen=True)
class HistoricalDataset:
    """Logged triples (covariate, action, reward) from the behavior policy."""

    covariates: np.ndarray  # (n, d)
    actions: np.ndarray     # (n,) int
    rewards: np.ndarray     # (n,) float in [0, reward_max]
    reward_max: float = 1.0

    def __post_init__(self):
        x = as_covariate_matrix(self.covariates)
        a = np.asarray(self.actions, dtype=int)
        y = np.asarray(self.rewards, dtype=float)
        if not (len(x) == len(a) == len(y)):
            raise ValueError("covariates, actions, rewards must have equal length")
        if len(x) == 0:
            raise ValueError("historical dataset must be nonempty")
        if np.any(a < 0):
            raise ValueError("actions must be nonnegative integers")
        if np.any(y < 0) or np.any(y > self.reward_max) or not np.all(np.isfinite(y)):
            raise ValueError(f"rewards must lie in [0, {self.reward_max}]")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "rewards", y)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def dim(self) -> int:
        return self.covariates.shape[1]

    def subset(self, idx: np.ndarray) -> "HistoricalDataset":
        return HistoricalDataset(
            self.covariates[idx], self.actions[idx], self.rewards[idx], self.reward_max
        )


@dataclass(frozen=True)
class EvaluationDataset:
    """Covariates drawn from the target (evaluation) distribution."""

    covariates: np.ndarray  # (m, d)

    def __post_init__(self):
        x = as_covariate_matrix(self.covariates)
        if len(x) == 0:
            raise ValueError("evaluation dataset must be nonempty")
        object.__setattr__(self, "covariates", x)

    def __len__(self) -> int:
        return len(self.covariates)

    @property
    def dim(self) -> int:
        return self.covariates.shape[1]

    def subset(self, idx: np.ndarray) -> "EvaluationDataset":
        return EvaluationDataset(self.covariates[idx])


def sampling_fraction(hist: HistoricalDataset, evl: EvaluationDataset) -> float:
    """Fraction of the pooled sample that is historical (n_hst / (n_hst + n_evl))."""
    return len(hist) / (len(hist) + len(evl))


@dataclass(frozen=True)
class NuisanceBounds:
    """Overlap bounds enforced on fitted nuisances by clipping.

    ``ratio_bound`` caps the density ratio, ``weight_bound`` caps the policy
    weight pi_e / pi_b_hat, and ``reward_max`` caps the outcome model.
    """

    ratio_bound: float = DEFAULT_RATIO_BOUND
    weight_bound: float = DEFAULT_WEIGHT_BOUND
    reward_max: float = 1.0

    def __post_init__(self):
        if self.ratio_bound < 0 or self.weight_bound < 0 or self.reward_max < 0:
            raise ValueError("bounds must be nonnegative")


@dataclass(frozen=True)
class NuisanceSet:
    """Fitted nuisance functions with overlap bounds applied at query time.

    ``ratio`` maps covariates to the raw density-ratio estimate, ``behavior``
    maps (actions, covariates) to the raw propensity estimate, and ``outcome``
    maps (actions, covariates) to the raw conditional-reward estimate. The
    accessor methods clip to ``bounds``, so downstream consumers always see
    values satisfying the overlap assumptions.
    """

    ratio: Callable[[np.ndarray], np.ndarray]
    behavior: Callable[[np.ndarray, np.ndarray], np.ndarray]
    outcome: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bounds: NuisanceBounds = field(default_factory=NuisanceBounds)
    provenance: str | None = None

    def ratio_at(self, covariates: np.ndarray) -> np.ndarray:
        x = as_covariate_matrix(covariates)
        raw = np.asarray(self.ratio(x), dtype=float)
        return np.clip(raw, 0.0, self.bounds.ratio_bound)

    def behavior_at(self, actions: np.ndarray, covariates: np.ndarray) -> np.ndarray:
        x = as_covariate_matrix(covariates)
        raw = np.asarray(self.behavior(np.asarray(actions, dtype=int), x), dtype=float)
        return np.clip(raw, np.finfo(float).tiny, 1.0)

    def weight_at(self, policy: Policy, actions: np.ndarray, covariates: np.ndarray) -> np.ndarray:
        """Clipped policy weight pi(a|x) / behavior_hat(a|x)."""
        num = policy.prob_of_actions(actions, covariates)
        raw = num / self.behavior_at(actions, covariates)
        return np.clip(raw, 0.0, self.bounds.weight_bound)

    def outcome_at(self, actions: np.ndarray, covariates: np.ndarray) -> np.ndarray:
        x = as_covariate_matrix(covariates)
        raw = np.asarray(self.outcome(np.asarray(actions, dtype=int), x), dtype=float)
        return np.clip(raw, 0.0, self.bounds.reward_max)

    def outcome_matrix(self, covariates: np.ndarray, action_count: int) -> np.ndarray:
        """Outcome estimates for every action, shape ``(n, action_count)``."""
        x = as_covariate_matrix(covariates)
        cols = [self.outcome_at(np.full(len(x), a, dtype=int), x) for a in range(action_count)]
        return np.stack(cols, axis=1)

    def value_at(self, policy: Policy, covariates: np.ndarray) -> np.ndarray:
        """Policy-averaged outcome sum_a pi(a|z) f_hat(a,z) per row."""
        x = as_covariate_matrix(covariates)
        probs = policy.prob_matrix(x)
        f = self.outcome_matrix(x, policy.action_count)
        return np.einsum("na,na->n", probs, f)


def value_v(outcome: Callable[[np.ndarray, np.ndarray], np.ndarray],
            policy: Policy, z: np.ndarray) -> float:
    """Policy-averaged outcome model at a single covariate: sum_a pi(a|z) f(a,z)."""
    x = as_covariate_matrix(z)
    probs = policy.prob_matrix(x)[0]
    f = np.array([float(np.asarray(outcome(np.array([a]), x))[0])
                  for a in range(policy.action_count)])
    return float(probs @ f)


@dataclass(frozen=True)
class FoldPartition:
    """Random partition of historical and evaluation indices into folds.

    Fold sizes differ by at most one; the same seed reproduces the partition
    bit-exactly.
    """

    n_folds: int
    hist_fold: np.ndarray  # (n_hst,) fold id of each historical index
    evl_fold: np.ndarray   # (n_evl,) fold id of each evaluation index
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "hist_fold", np.asarray(self.hist_fold, dtype=int))
        object.__setattr__(self, "evl_fold", np.asarray(self.evl_fold, dtype=int))
        for name, fold in (("hist", self.hist_fold), ("evl", self.evl_fold)):
            counts = np.bincount(fold, minlength=self.n_folds)
            if fold.min(initial=0) < 0 or fold.max(initial=0) >= self.n_folds:
                raise ValueError(f"{name} fold ids out of range")
            if counts.max() - counts.min() > 1:
                raise ValueError(f"{name} fold sizes differ by more than one")

    @classmethod
    def make(cls, n_hst: int, n_evl: int, n_folds: int, seed: int) -> "FoldPartition":
        if n_folds < 2:
            raise ValueError("n_folds must be >= 2")
        if n_folds > min(n_hst, n_evl):
            raise ValueError("n_folds cannot exceed either sample size")
        rng = np.random.default_rng(seed)
        return cls(
            n_folds=n_folds,
            hist_fold=_balanced_fold_ids(n_hst, n_folds, rng),
            evl_fold=_balanced_fold_ids(n_evl, n_folds, rng),
            seed=seed,
        )

    def hist_in(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.hist_fold == k)

    def hist_out(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.hist_fold != k)

    def evl_in(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.evl_fold == k)

    def evl_out(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.evl_fold != k)


def _balanced_fold_ids(n: int, n_folds: int, rng: np.random.Generator) -> np.ndarray:
    ids = np.arange(n) % n_folds
    return ids[rng.permutation(n)]
