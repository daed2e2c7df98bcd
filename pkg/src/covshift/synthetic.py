"""Fully enumerable tabular environments with exact ground truth.

States are encoded as one-dimensional covariates holding the state index, so
every policy, nuisance, and estimator in the package can run on sampled data
while closed-form quantities (policy values, variances, bounds) are computed
by exact summation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    EvaluationDataset,
    HistoricalDataset,
    NuisanceBounds,
    NuisanceSet,
    Policy,
    TablePolicy,
)

PROB_TOL = 1e-9


@dataclass(frozen=True)
class TabularDGP:
    """Finite-state contextual bandit with Bernoulli rewards.

    ``success`` holds the Bernoulli success probability of the reward for each
    (state, action) pair, so the conditional reward variance is
    ``success * (1 - success)`` in closed form.
    """

    p: np.ndarray         # (S,) historical covariate distribution
    q: np.ndarray         # (S,) evaluation covariate distribution
    behavior: np.ndarray  # (S, A) row-stochastic behavior policy
    success: np.ndarray   # (S, A) Bernoulli success probabilities
    rho: float = 0.5

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        behavior = np.asarray(self.behavior, dtype=float)
        success = np.asarray(self.success, dtype=float)
        if p.ndim != 1 or q.shape != p.shape:
            raise ValueError("p and q must be vectors of equal length")
        if behavior.shape != (len(p), success.shape[1]) or success.shape[0] != len(p):
            raise ValueError("behavior and success must be (n_states, n_actions) tables")
        for name, vec in (("p", p), ("q", q)):
            if np.any(vec < 0) or abs(vec.sum() - 1.0) > PROB_TOL:
                raise ValueError(f"{name} must be a probability vector")
        if np.any(behavior < 0) or np.any(np.abs(behavior.sum(axis=1) - 1.0) > PROB_TOL):
            raise ValueError("behavior rows must be probability vectors")
        if np.any(success < 0) or np.any(success > 1):
            raise ValueError("success probabilities must lie in [0, 1]")
        if np.any((q > 0) & (p == 0)):
            raise ValueError("q(x) > 0 requires p(x) > 0")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "behavior", behavior)
        object.__setattr__(self, "success", success)

    @property
    def n_states(self) -> int:
        return len(self.p)

    @property
    def n_actions(self) -> int:
        return self.behavior.shape[1]

    def state_covariates(self) -> np.ndarray:
        """Covariate encoding of every state, shape ``(n_states, 1)``."""
        return np.arange(self.n_states, dtype=float)[:, None]

    def ratio_table(self) -> np.ndarray:
        """Exact density ratio q(x) / p(x) per state (zero off the support of q)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(self.p > 0, self.q / np.where(self.p > 0, self.p, 1.0), 0.0)
        return r

    def behavior_policy(self) -> TablePolicy:
        return TablePolicy(self.behavior)

    def check_policy_overlap(self, policy: Policy) -> None:
        """Raise when the policy puts mass where the behavior policy has none."""
        probs = policy.prob_matrix(self.state_covariates())
        if np.any((probs > 0) & (self.behavior == 0)):
            raise ValueError("evaluation policy is not absolutely continuous "
                             "w.r.t. the behavior policy")

    def to_json(self) -> dict:
        return {
            "p": self.p.tolist(),
            "q": self.q.tolist(),
            "pi_b": self.behavior.tolist(),
            "f": self.success.tolist(),
            "rho": self.rho,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TabularDGP":
        return cls(
            p=np.asarray(doc["p"], dtype=float),
            q=np.asarray(doc["q"], dtype=float),
            behavior=np.asarray(doc["pi_b"], dtype=float),
            success=np.asarray(doc["f"], dtype=float),
            rho=float(doc.get("rho", 0.5)),
        )

    @classmethod
    def load(cls, path: str) -> "TabularDGP":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _categorical_rows(table: np.ndarray, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one category per row from row-specific distributions."""
    cum = np.cumsum(table[rows], axis=1)
    u = rng.random(len(rows))
    return (u[:, None] > cum).sum(axis=1)


def sample_datasets(
    dgp: TabularDGP,
    n: int,
    rho: float | None = None,
    seed: int | np.random.Generator = 0,
) -> tuple[HistoricalDataset, EvaluationDataset]:
    """Draw stratified historical and evaluation samples of total size ``n``.

    The historical count is fixed at ``round(rho * n)`` rather than drawn at
    random; both counts must be at least one.
    """
    rho = dgp.rho if rho is None else rho
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    n_hst = int(round(rho * n))
    n_evl = n - n_hst
    if n_hst < 1 or n_evl < 1:
        raise ValueError("both sample counts must round to at least one")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    hist_states = rng.choice(dgp.n_states, size=n_hst, p=dgp.p)
    actions = _categorical_rows(dgp.behavior, hist_states, rng)
    rewards = (rng.random(n_hst) < dgp.success[hist_states, actions]).astype(float)
    evl_states = rng.choice(dgp.n_states, size=n_evl, p=dgp.q)
    hist = HistoricalDataset(
        covariates=hist_states[:, None].astype(float),
        actions=actions,
        rewards=rewards,
        reward_max=1.0,
    )
    evl = EvaluationDataset(covariates=evl_states[:, None].astype(float))
    return hist, evl


def policy_table(dgp: TabularDGP, policy: Policy) -> np.ndarray:
    """Action probabilities of ``policy`` at every state, shape ``(S, A)``."""
    return policy.prob_matrix(dgp.state_covariates())


def value_table(dgp: TabularDGP, policy: Policy) -> np.ndarray:
    """Per-state policy value v(x) = sum_a pi(a|x) f(a,x)."""
    return np.einsum("sa,sa->s", policy_table(dgp, policy), dgp.success)


def exact_policy_value(dgp: TabularDGP, policy: Policy) -> float:
    """Expected reward of the policy over the evaluation distribution."""
    return float(dgp.q @ value_table(dgp, policy))


def oracle_nuisances(
    dgp: TabularDGP,
    bounds: NuisanceBounds | None = None,
    ratio: Callable | None = None,
    behavior: Callable | None = None,
    outcome: Callable | None = None,
) -> NuisanceSet:
    """Exact nuisance functions of the environment, with optional overrides.

    Overrides replace the corresponding oracle component, which is how the
    robustness experiments inject deliberately wrong nuisances.
    """
    ratio_tab = dgp.ratio_table()
    behavior_tab = dgp.behavior
    success_tab = dgp.success

    def oracle_ratio(x):
        return ratio_tab[x[:, 0].astype(int)]

    def oracle_behavior(actions, x):
        return behavior_tab[x[:, 0].astype(int), actions]

    def oracle_outcome(actions, x):
        return success_tab[x[:, 0].astype(int), actions]

    return NuisanceSet(
        ratio=ratio if ratio is not None else oracle_ratio,
        behavior=behavior if behavior is not None else oracle_behavior,
        outcome=outcome if outcome is not None else oracle_outcome,
        bounds=bounds if bounds is not None else NuisanceBounds(reward_max=1.0),
        provenance="oracle",
    )


@dataclass(frozen=True)
class CorruptedNuisance:
    """A deliberately wrong nuisance function with its corruption recorded."""

    fn: Callable
    mode: str
    value: float

    def __call__(self, *args):
        return self.fn(*args)

    @property
    def description(self) -> str:
        return f"{self.mode}({self.value})"


def misspecify(nuisance: Callable, mode: str, value: float = 1.0) -> CorruptedNuisance:
    """Corrupt a nuisance function for robustness experiments.

    ``scale`` multiplies the oracle output, ``shift`` adds a constant, and
    ``constant`` ignores the oracle entirely and returns ``value``.
    """
    if mode == "scale":
        fn = lambda *args: np.asarray(nuisance(*args)) * value
    elif mode == "shift":
        fn = lambda *args: np.asarray(nuisance(*args)) + value
    elif mode == "constant":
        def fn(*args):
            lead = np.asarray(args[-1])
            return np.full(lead.shape[0] if lead.ndim > 1 else len(lead), value)
    else:
        raise ValueError(f"unknown misspecification mode: {mode!r}")
    return CorruptedNuisance(fn=fn, mode=mode, value=value)


def demo_dgp() -> TabularDGP:
    """Four-state, three-action environment with a threefold covariate shift."""
    return TabularDGP(
        p=np.array([0.45, 0.25, 0.20, 0.10]),
        q=np.array([0.15, 0.15, 0.40, 0.30]),
        behavior=np.array([
            [0.6, 0.3, 0.1],
            [0.2, 0.5, 0.3],
            [0.3, 0.3, 0.4],
            [0.1, 0.2, 0.7],
        ]),
        success=np.array([
            [0.1, 0.2, 0.3],
            [0.3, 0.4, 0.2],
            [0.5, 0.7, 0.6],
            [0.8, 0.9, 0.7],
        ]),
        rho=0.5,
    )


def demo_policy() -> TablePolicy:
    """Evaluation policy paired with :func:`demo_dgp` in the built-in checks."""
    return TablePolicy(np.array([
        [0.2, 0.2, 0.6],
        [0.7, 0.2, 0.1],
        [0.1, 0.8, 0.1],
        [0.5, 0.4, 0.1],
    ]))
