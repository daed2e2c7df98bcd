"""Policy learning: maximize an off-policy value estimate over softmax kernel policies.

The policy class is a softmax over per-action linear functions of Gaussian
kernel features anchored at historical covariates. Training follows the
cross-fitting / cross-validation recipe: nuisances are fit out-of-fold once,
each bandwidth/penalty pair is scored by held-out objective value, and the
winning pair is refit on all data by gradient ascent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    EvaluationDataset,
    FoldPartition,
    HistoricalDataset,
    NuisanceSet,
    Policy,
)
from .kernels import median_heuristic, squared_distances

NuisanceFitter = Callable[[HistoricalDataset, EvaluationDataset], NuisanceSet]


class OptimizerDivergenceError(RuntimeError):
    """Raised when the ascent objective stops being finite."""

    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SoftmaxKernelPolicy(Policy):
    """Softmax policy over Gaussian kernel features centered at data points."""

    centers: np.ndarray  # (m, d)
    sigma2: float
    beta: np.ndarray     # (action_count, m)
    beta0: np.ndarray    # (action_count,)

    def __post_init__(self):
        object.__setattr__(self, "centers", np.atleast_2d(np.asarray(self.centers, dtype=float)))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "beta0", np.asarray(self.beta0, dtype=float))
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.beta.shape != (len(self.beta0), self.centers.shape[0]):
            raise ValueError("beta must have shape (action_count, n_centers)")

    @property
    def action_count(self) -> int:
        return len(self.beta0)

    def features(self, covariates: np.ndarray) -> np.ndarray:
        """Gaussian kernel features exp(-||x - c||^2 / (2 sigma^2)), shape (n, m)."""
        x = np.atleast_2d(np.asarray(covariates, dtype=float))
        return np.exp(-squared_distances(x, self.centers) / (2.0 * self.sigma2))

    def prob_matrix(self, covariates: np.ndarray) -> np.ndarray:
        return _softmax(self.features(covariates) @ self.beta.T + self.beta0)

    def to_json(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "sigma2": self.sigma2,
            "beta": self.beta.tolist(),
            "beta0": self.beta0.tolist(),
            "action_count": self.action_count,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SoftmaxKernelPolicy":
        return cls(
            centers=np.asarray(doc["centers"], dtype=float),
            sigma2=float(doc["sigma2"]),
            beta=np.asarray(doc["beta"], dtype=float),
            beta0=np.asarray(doc["beta0"], dtype=float),
        )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class OplConfig:
    """Grids, fold counts, and optimizer settings for policy training."""

    sigma2_grid: tuple | None = None   # None: derived from the median distance
    lam_grid: tuple = (1e-4, 1e-2)
    n_folds: int = 2                   # cross-fitting folds for the nuisances
    cv_folds: int = 2                  # cross-validation folds for the grids
    center_count: int = 100
    step_size: float = 1.0
    max_iter: int = 2000
    tol: float = 1e-6
    line_search: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.sigma2_grid is not None and len(self.sigma2_grid) == 0:
            raise ValueError("sigma2_grid must be nonempty")
        if len(self.lam_grid) == 0:
            raise ValueError("lam_grid must be nonempty")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")


@dataclass(frozen=True)
class PerSampleNuisances:
    """Cross-fitted nuisance values attached to each sample.

    Each historical row carries the ratio, propensity, and outcome values of
    the nuisance set fit without that row's fold; each evaluation row carries
    the per-action outcome estimates from its own fold's nuisance set.
    """

    hist_ratio: np.ndarray     # (n,) clipped ratio estimates
    hist_behavior: np.ndarray  # (n,) propensity of the logged action
    hist_outcome: np.ndarray   # (n,) outcome estimate at the logged action
    evl_outcome: np.ndarray    # (m, action_count)
    weight_bound: float


def cross_fit_nuisance_values(
    hist: HistoricalDataset,
    evl: EvaluationDataset,
    nuisance_fitter: NuisanceFitter,
    action_count: int,
    n_folds: int = 2,
    seed: int = 0,
    folds: FoldPartition | None = None,
) -> PerSampleNuisances:
    """Fit nuisances per fold on out-of-fold data and record in-fold values."""
    if folds is None:
        folds = FoldPartition.make(len(hist), len(evl), n_folds, seed)
    hist_ratio = np.empty(len(hist))
    hist_behavior = np.empty(len(hist))
    hist_outcome = np.empty(len(hist))
    evl_outcome = np.empty((len(evl), action_count))
    weight_bound = None
    for k in range(folds.n_folds):
        nuis = nuisance_fitter(hist.subset(folds.hist_out(k)), evl.subset(folds.evl_out(k)))
        hist_in = folds.hist_in(k)
        evl_in = folds.evl_in(k)
        sub = hist.subset(hist_in)
        hist_ratio[hist_in] = nuis.ratio_at(sub.covariates)
        hist_behavior[hist_in] = nuis.behavior_at(sub.actions, sub.covariates)
        hist_outcome[hist_in] = nuis.outcome_at(sub.actions, sub.covariates)
        evl_outcome[evl_in] = nuis.outcome_matrix(evl.covariates[evl_in], action_count)
        weight_bound = nuis.bounds.weight_bound
    return PerSampleNuisances(
        hist_ratio=hist_ratio,
        hist_behavior=hist_behavior,
        hist_outcome=hist_outcome,
        evl_outcome=evl_outcome,
        weight_bound=float(weight_bound),
    )


def _hist_coefficients(hist: HistoricalDataset, values: PerSampleNuisances, kind: str) -> np.ndarray:
    """Per-sample multiplier of the policy probability in the historical term."""
    if kind == "DRCS":
        return values.hist_ratio * (hist.rewards - values.hist_outcome)
    if kind == "IPWCS":
        return values.hist_ratio * hist.rewards
    if kind == "DM":
        return np.zeros(len(hist))
    raise ValueError(f"unknown estimator kind: {kind!r}")


def _uses_evl_term(kind: str) -> bool:
    return kind in ("DRCS", "DM")


def opl_objective(
    policy: SoftmaxKernelPolicy,
    hist: HistoricalDataset,
    evl: EvaluationDataset,
    values: PerSampleNuisances,
    lam: float,
    kind: str = "DRCS",
    hist_idx: np.ndarray | None = None,
    evl_idx: np.ndarray | None = None,
) -> float:
    """Estimated policy value of ``policy`` minus the ridge penalty.

    With ``lam = 0`` and equal-sized folds this equals the corresponding
    point estimator evaluated at ``policy``. Optional index arrays restrict
    both empirical means to subsets (used by cross-validation).
    """
    hist_idx = np.arange(len(hist)) if hist_idx is None else hist_idx
    evl_idx = np.arange(len(evl)) if evl_idx is None else evl_idx
    coef = _hist_coefficients(hist, values, kind)[hist_idx]
    probs_hist = policy.prob_matrix(hist.covariates[hist_idx])
    pi_logged = probs_hist[np.arange(len(hist_idx)), hist.actions[hist_idx]]
    weights = np.clip(pi_logged / values.hist_behavior[hist_idx], 0.0, values.weight_bound)
    total = float(np.mean(coef * weights))
    if _uses_evl_term(kind):
        probs_evl = policy.prob_matrix(evl.covariates[evl_idx])
        total += float(np.mean(np.sum(values.evl_outcome[evl_idx] * probs_evl, axis=1)))
    penalty = lam * (float(np.sum(policy.beta**2)) + float(np.sum(policy.beta0**2)))
    return total - penalty


def opl_gradient(
    policy: SoftmaxKernelPolicy,
    hist: HistoricalDataset,
    evl: EvaluationDataset,
    values: PerSampleNuisances,
    lam: float,
    kind: str = "DRCS",
    hist_idx: np.ndarray | None = None,
    evl_idx: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of :func:`opl_objective` in (beta, beta0).

    Uses the softmax chain rule; samples whose clipped weight sits at the
    bound contribute zero gradient through the historical term.
    """
    hist_idx = np.arange(len(hist)) if hist_idx is None else hist_idx
    evl_idx = np.arange(len(evl)) if evl_idx is None else evl_idx
    n_actions = policy.action_count
    grad_beta = np.zeros_like(policy.beta)
    grad_beta0 = np.zeros_like(policy.beta0)

    coef = _hist_coefficients(hist, values, kind)[hist_idx]
    if len(hist_idx) and np.any(coef != 0):
        x = hist.covariates[hist_idx]
        actions = hist.actions[hist_idx]
        phi = policy.features(x)
        probs = _softmax(phi @ policy.beta.T + policy.beta0)
        pi_logged = probs[np.arange(len(hist_idx)), actions]
        behavior = values.hist_behavior[hist_idx]
        raw_weight = pi_logged / behavior
        active = raw_weight < values.weight_bound
        g = np.where(active, coef / behavior * pi_logged, 0.0) / len(hist_idx)
        onehot = np.zeros((len(hist_idx), n_actions))
        onehot[np.arange(len(hist_idx)), actions] = 1.0
        weighted = (onehot - probs) * g[:, None]   # (n, A)
        grad_beta += weighted.T @ phi
        grad_beta0 += weighted.sum(axis=0)

    if _uses_evl_term(kind) and len(evl_idx):
        z = evl.covariates[evl_idx]
        phi_z = policy.features(z)
        probs_z = _softmax(phi_z @ policy.beta.T + policy.beta0)
        outcome = values.evl_outcome[evl_idx]
        baseline = np.sum(outcome * probs_z, axis=1, keepdims=True)
        weighted_z = probs_z * (outcome - baseline) / len(evl_idx)  # (m, A)
        grad_beta += weighted_z.T @ phi_z
        grad_beta0 += weighted_z.sum(axis=0)

    grad_beta -= 2.0 * lam * policy.beta
    grad_beta0 -= 2.0 * lam * policy.beta0
    return grad_beta, grad_beta0


@dataclass
class AscentTrace:
    """Objective values and step sizes recorded during gradient ascent."""

    objectives: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def maximize_policy(
    policy: SoftmaxKernelPolicy,
    objective: Callable[[SoftmaxKernelPolicy], float],
    gradient: Callable[[SoftmaxKernelPolicy], tuple[np.ndarray, np.ndarray]],
    step_size: float = 1.0,
    max_iter: int = 2000,
    tol: float = 1e-6,
    line_search: bool = True,
) -> tuple[SoftmaxKernelPolicy, AscentTrace]:
    """Full-batch gradient ascent with optional backtracking line search.

    With ``line_search=False`` the fixed ``step_size`` is applied every
    iteration, which keeps the objective trace non-decreasing whenever the
    step is small enough for the problem at hand.
    """
    trace = AscentTrace()
    current = policy
    value = objective(current)
    if not np.isfinite(value):
        raise OptimizerDivergenceError("initial objective is not finite", trace.objectives)
    trace.objectives.append(value)
    for iteration in range(max_iter):
        g_beta, g_beta0 = gradient(current)
        grad_norm = float(np.sqrt(np.sum(g_beta**2) + np.sum(g_beta0**2)))
        if not np.isfinite(grad_norm):
            raise OptimizerDivergenceError(
                f"gradient became non-finite at iteration {iteration}", trace.objectives
            )
        if grad_norm <= tol:
            trace.converged = True
            break
        if line_search:
            eta = step_size
            accepted = False
            for _ in range(40):
                candidate = _step(current, g_beta, g_beta0, eta)
                cand_value = objective(candidate)
                if not np.isfinite(cand_value):
                    raise OptimizerDivergenceError(
                        f"objective became non-finite at iteration {iteration}",
                        trace.objectives,
                    )
                if cand_value >= value + 1e-4 * eta * grad_norm**2:
                    accepted = True
                    break
                eta *= 0.5
            if not accepted:
                trace.converged = True
                break
            current, value = candidate, cand_value
            trace.step_sizes.append(eta)
        else:
            current = _step(current, g_beta, g_beta0, step_size)
            value = objective(current)
            if not np.isfinite(value):
                raise OptimizerDivergenceError(
                    f"objective became non-finite at iteration {iteration}", trace.objectives
                )
            trace.step_sizes.append(step_size)
        trace.objectives.append(value)
        trace.iterations = iteration + 1
    return current, trace


def _step(policy: SoftmaxKernelPolicy, g_beta: np.ndarray, g_beta0: np.ndarray,
          eta: float) -> SoftmaxKernelPolicy:
    return SoftmaxKernelPolicy(
        centers=policy.centers,
        sigma2=policy.sigma2,
        beta=policy.beta + eta * g_beta,
        beta0=policy.beta0 + eta * g_beta0,
    )


@dataclass(frozen=True)
class OplTrainResult:
    """Trained policy plus the cross-validation audit trail."""

    policy: SoftmaxKernelPolicy
    sigma2: float
    lam: float
    scores: np.ndarray               # (n_sigma2, n_lam) summed held-out scores
    sigma2_grid: tuple
    lam_grid: tuple
    cv_train_indices: list           # per fold: (hist_idx, evl_idx) used to train
    cv_score_indices: list           # per fold: (hist_idx, evl_idx) used to score
    final_trace: AscentTrace


def _default_sigma2_grid(hist: HistoricalDataset) -> tuple:
    med = median_heuristic(hist.covariates)
    base = med**2 if med > 0 else 1.0
    return (base / 16.0, base / 4.0, base)


def _initial_policy(centers: np.ndarray, sigma2: float, action_count: int) -> SoftmaxKernelPolicy:
    m = len(np.atleast_2d(centers))
    return SoftmaxKernelPolicy(
        centers=centers,
        sigma2=sigma2,
        beta=np.zeros((action_count, m)),
        beta0=np.zeros(action_count),
    )


def train_policy_report(
    hist: HistoricalDataset,
    evl: EvaluationDataset,
    config: OplConfig,
    estimator_kind: str,
    nuisance_fitter: NuisanceFitter,
    action_count: int | None = None,
) -> OplTrainResult:
    """Run the full cross-fitting + cross-validation training procedure.

    Grid search scores each (sigma2, lam) pair by training on each
    cross-validation fold and evaluating the unpenalized objective on the
    fold's complement; the best pair is refit on all data.
    """
    if action_count is None:
        action_count = int(hist.actions.max()) + 1
    rng = np.random.default_rng(config.seed)
    values = cross_fit_nuisance_values(
        hist, evl, nuisance_fitter, action_count,
        n_folds=config.n_folds, seed=config.seed,
    )
    m = min(config.center_count, len(hist))
    centers = hist.covariates[rng.choice(len(hist), size=m, replace=False)]
    sigma2_grid = tuple(config.sigma2_grid) if config.sigma2_grid else _default_sigma2_grid(hist)
    lam_grid = tuple(config.lam_grid)

    cv = FoldPartition.make(len(hist), len(evl), config.cv_folds, config.seed + 1)
    cv_train, cv_score = [], []
    for fold in range(config.cv_folds):
        cv_train.append((cv.hist_in(fold), cv.evl_in(fold)))
        cv_score.append((cv.hist_out(fold), cv.evl_out(fold)))

    scores = np.zeros((len(sigma2_grid), len(lam_grid)))
    for si, sigma2 in enumerate(sigma2_grid):
        for li, lam in enumerate(lam_grid):
            for fold in range(config.cv_folds):
                train_h, train_e = cv_train[fold]
                score_h, score_e = cv_score[fold]
                trained, _ = _fit_on_subset(
                    hist, evl, values, config, estimator_kind,
                    centers, sigma2, lam, train_h, train_e, action_count,
                )
                scores[si, li] += opl_objective(
                    trained, hist, evl, values, 0.0, estimator_kind,
                    hist_idx=score_h, evl_idx=score_e,
                )
    best_flat = int(np.argmax(scores))
    best_si, best_li = np.unravel_index(best_flat, scores.shape)
    best_sigma2 = sigma2_grid[best_si]
    best_lam = lam_grid[best_li]
    final_policy, final_trace = _fit_on_subset(
        hist, evl, values, config, estimator_kind,
        centers, best_sigma2, best_lam,
        np.arange(len(hist)), np.arange(len(evl)), action_count,
    )
    return OplTrainResult(
        policy=final_policy,
        sigma2=best_sigma2,
        lam=best_lam,
        scores=scores,
        sigma2_grid=sigma2_grid,
        lam_grid=lam_grid,
        cv_train_indices=cv_train,
        cv_score_indices=cv_score,
        final_trace=final_trace,
    )


def _fit_on_subset(
    hist: HistoricalDataset,
    evl: EvaluationDataset,
    values: PerSampleNuisances,
    config: OplConfig,
    kind: str,
    centers: np.ndarray,
    sigma2: float,
    lam: float,
    hist_idx: np.ndarray,
    evl_idx: np.ndarray,
    action_count: int,
) -> tuple[SoftmaxKernelPolicy, AscentTrace]:
    init = _initial_policy(centers, sigma2, action_count)
    if action_count == 1:
        return init, AscentTrace(objectives=[opl_objective(init, hist, evl, values, lam, kind,
                                                           hist_idx, evl_idx)])
    return maximize_policy(
        init,
        objective=lambda p: opl_objective(p, hist, evl, values, lam, kind, hist_idx, evl_idx),
        gradient=lambda p: opl_gradient(p, hist, evl, values, lam, kind, hist_idx, evl_idx),
        step_size=config.step_size,
        max_iter=config.max_iter,
        tol=config.tol,
        line_search=config.line_search,
    )


def train_policy(
    hist: HistoricalDataset,
    evl: EvaluationDataset,
    config: OplConfig,
    estimator_kind: str,
    nuisance_fitter: NuisanceFitter,
    action_count: int | None = None,
) -> SoftmaxKernelPolicy:
    """Train a softmax kernel policy maximizing the chosen value estimate."""
    return train_policy_report(
        hist, evl, config, estimator_kind, nuisance_fitter, action_count
    ).policy
