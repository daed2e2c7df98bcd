"""Point estimators of the target-policy value, with cross-fitting.

The main estimator combines a reweighted residual term over the historical
sample with a policy-averaged outcome term over the evaluation sample, fitting
all nuisances out-of-fold. Companion estimators (direct method, importance
weighting with known or estimated propensities, self-normalized variants) and
the exact variance bounds on tabular environments live here as well.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    EvaluationDataset,
    FoldPartition,
    HistoricalDataset,
    NuisanceBounds,
    NuisanceSet,
    Policy,
    sampling_fraction,
)
from .synthetic import TabularDGP, policy_table, value_table

NuisanceFitter = Callable[[HistoricalDataset, EvaluationDataset], NuisanceSet]


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate with its plug-in variance and per-fold breakdown.

    ``plug_in_variance`` is scaled per observation: dividing it by the total
    sample count used for the estimate gives the squared standard error.
    """

    estimate: float
    plug_in_variance: float
    per_fold_estimates: tuple
    diagnostics: dict

    def to_json(self) -> dict:
        return {
            "estimate": self.estimate,
            "variance": self.plug_in_variance,
            "per_fold": list(self.per_fold_estimates),
            "diagnostics": self.diagnostics,
        }

    def to_json_str(self) -> str:
        return json.dumps(self.to_json())


def _summary(values: np.ndarray) -> dict:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return {"min": None, "max": None, "mean": None}
    return {
        "min": float(values.min()),
        "max": float(values.max()),
        "mean": float(values.mean()),
    }


def dm_estimate(
    outcome: Callable[[np.ndarray, np.ndarray], np.ndarray],
    policy: Policy,
    evl: EvaluationDataset,
) -> float:
    """Direct method: average the policy-weighted outcome model over evaluation rows."""
    z = evl.covariates
    probs = policy.prob_matrix(z)
    values = np.zeros(len(z))
    for a in range(policy.action_count):
        values += probs[:, a] * np.asarray(outcome(np.full(len(z), a, dtype=int), z), dtype=float)
    return float(values.mean())


def ipwcsb_estimate(
    ratio: Callable[[np.ndarray], np.ndarray],
    true_behavior: Policy,
    policy: Policy,
    hist: HistoricalDataset,
) -> float:
    """Importance weighting with the exact behavior policy.

    Averages ``r_hat(X) * pi_e(A|X) * Y / pi_b(A|X)`` over the logged sample.
    """
    behavior_probs = true_behavior.prob_of_actions(hist.actions, hist.covariates)
    if np.any(behavior_probs <= 0):
        raise ValueError("behavior policy assigns zero probability to a logged action")
    weights = policy.prob_of_actions(hist.actions, hist.covariates) / behavior_probs
    r = np.asarray(ratio(hist.covariates), dtype=float)
    return float(np.mean(r * weights * hist.rewards))


def ipwcs_estimate(
    ratio: Callable[[np.ndarray], np.ndarray],
    behavior: Policy,
    policy: Policy,
    hist: HistoricalDataset,
    bounds: NuisanceBounds | None = None,
) -> float:
    """Importance weighting with an estimated behavior policy.

    Both the covariate ratio and the policy weight are clipped to the overlap
    bounds before averaging.
    """
    bounds = bounds if bounds is not None else NuisanceBounds(reward_max=hist.reward_max)
    r = np.clip(np.asarray(ratio(hist.covariates), dtype=float), 0.0, bounds.ratio_bound)
    behavior_probs = behavior.prob_of_actions(hist.actions, hist.covariates)
    weights = np.clip(
        policy.prob_of_actions(hist.actions, hist.covariates) / behavior_probs,
        0.0,
        bounds.weight_bound,
    )
    return float(np.mean(r * weights * hist.rewards))


def _fold_terms(
    nuis: NuisanceSet,
    policy: Policy,
    hist: HistoricalDataset,
    evl_x: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-sample reweighted residuals and (optionally) per-sample values."""
    r = nuis.ratio_at(hist.covariates)
    w = nuis.weight_at(policy, hist.actions, hist.covariates)
    resid = hist.rewards - nuis.outcome_at(hist.actions, hist.covariates)
    phi_hist = r * w * resid
    phi_evl = nuis.value_at(policy, evl_x) if evl_x is not None else None
    return phi_hist, phi_evl


def drcs_estimate(
    hist: HistoricalDataset,
    evl: EvaluationDataset,
    policy: Policy,
    nuisance_fitter: NuisanceFitter,
    n_folds: int = 2,
    seed: int = 0,
    folds: FoldPartition | None = None,
) -> EstimateReport:
    """Cross-fitted doubly robust estimate of the target-policy value.

    Both samples are split into ``n_folds`` folds. For each fold the nuisances
    are fit on the out-of-fold portion of both samples, the reweighted
    residual term is averaged over the in-fold historical rows, the
    policy-averaged outcome term over the in-fold evaluation rows, and the
    final estimate is the unweighted mean of the fold estimates.
    """
    if folds is None:
        folds = FoldPartition.make(len(hist), len(evl), n_folds, seed)
    elif folds.n_folds != n_folds:
        n_folds = folds.n_folds
    per_fold = []
    fold_diag = []
    all_phi_hist = np.empty(len(hist))
    all_phi_evl = np.empty(len(evl))
    for k in range(n_folds):
        fit_hist = hist.subset(folds.hist_out(k))
        fit_evl = evl.subset(folds.evl_out(k))
        nuis = nuisance_fitter(fit_hist, fit_evl)
        hist_in = folds.hist_in(k)
        evl_in = folds.evl_in(k)
        phi_hist, phi_evl = _fold_terms(nuis, policy, hist.subset(hist_in), evl.covariates[evl_in])
        all_phi_hist[hist_in] = phi_hist
        all_phi_evl[evl_in] = phi_evl
        per_fold.append(float(phi_hist.mean() + phi_evl.mean()))
        fold_diag.append({
            "fold": k,
            "n_hist_fit": len(fit_hist),
            "n_evl_fit": len(fit_evl),
            "n_hist_eval": int(len(hist_in)),
            "n_evl_eval": int(len(evl_in)),
            "fit_hist_indices": folds.hist_out(k).tolist(),
            "eval_hist_indices": hist_in.tolist(),
            "fit_evl_indices": folds.evl_out(k).tolist(),
            "eval_evl_indices": evl_in.tolist(),
            "provenance": nuis.provenance,
            "ratio": _summary(nuis.ratio_at(hist.covariates[hist_in])),
            "weight": _summary(nuis.weight_at(policy, hist.actions[hist_in], hist.covariates[hist_in])),
            "outcome": _summary(nuis.outcome_at(hist.actions[hist_in], hist.covariates[hist_in])),
        })
    estimate = float(np.mean(per_fold))
    variance = _eif_variance(all_phi_hist, all_phi_evl, sampling_fraction(hist, evl))
    return EstimateReport(
        estimate=estimate,
        plug_in_variance=variance,
        per_fold_estimates=tuple(per_fold),
        diagnostics={"folds": fold_diag, "variance_scale": "total"},
    )


def standard_dr_estimate(
    hist: HistoricalDataset,
    policy: Policy,
    nuisance_fitter: NuisanceFitter,
    folds: FoldPartition,
    evl_for_fitting: EvaluationDataset | None = None,
) -> float:
    """Cross-fitted doubly robust estimate that ignores the covariate shift.

    Computes, fold by fold, the average of ``w_hat * (Y - f_hat) +
    sum_a pi(a|X) f_hat(a,X)`` over the in-fold historical rows. Used as the
    no-shift reference point.
    """
    per_fold = []
    for k in range(folds.n_folds):
        fit_hist = hist.subset(folds.hist_out(k))
        fit_evl = (evl_for_fitting.subset(folds.evl_out(k))
                   if evl_for_fitting is not None
                   else EvaluationDataset(fit_hist.covariates))
        nuis = nuisance_fitter(fit_hist, fit_evl)
        sub = hist.subset(folds.hist_in(k))
        w = nuis.weight_at(policy, sub.actions, sub.covariates)
        resid = sub.rewards - nuis.outcome_at(sub.actions, sub.covariates)
        values = nuis.value_at(policy, sub.covariates)
        per_fold.append(float(np.mean(w * resid + values)))
    return float(np.mean(per_fold))


def drcs_known_q(
    hist: HistoricalDataset,
    policy: Policy,
    q_points: np.ndarray,
    q_weights: np.ndarray,
    nuisance_fitter: Callable[[HistoricalDataset], NuisanceSet],
    n_folds: int = 2,
    seed: int = 0,
    folds: FoldPartition | None = None,
) -> EstimateReport:
    """Doubly robust estimate when the evaluation covariate law is known.

    The evaluation-sample term is replaced by the exact expectation of the
    outcome model under the known law, represented by a discrete measure
    ``(q_points, q_weights)`` (exact state enumeration in the tabular case,
    quadrature nodes in one dimension). ``plug_in_variance`` is scaled per
    historical observation.
    """
    q_points = np.asarray(q_points, dtype=float)
    if q_points.ndim == 1:
        q_points = q_points[:, None]
    q_weights = np.asarray(q_weights, dtype=float)
    if len(q_points) != len(q_weights):
        raise ValueError("q_points and q_weights must have matching lengths")
    if folds is None:
        folds = FoldPartition.make(len(hist), len(hist), n_folds, seed)
    n_folds = folds.n_folds
    probs = policy.prob_matrix(q_points)
    per_fold = []
    all_phi_hist = np.empty(len(hist))
    for k in range(n_folds):
        nuis = nuisance_fitter(hist.subset(folds.hist_out(k)))
        hist_in = folds.hist_in(k)
        phi_hist, _ = _fold_terms(nuis, policy, hist.subset(hist_in), None)
        all_phi_hist[hist_in] = phi_hist
        f_matrix = nuis.outcome_matrix(q_points, policy.action_count)
        mean_term = float(q_weights @ np.einsum("sa,sa->s", probs, f_matrix))
        per_fold.append(float(phi_hist.mean() + mean_term))
    estimate = float(np.mean(per_fold))
    variance = float(np.var(all_phi_hist, ddof=1)) if len(hist) > 1 else 0.0
    return EstimateReport(
        estimate=estimate,
        plug_in_variance=variance,
        per_fold_estimates=tuple(per_fold),
        diagnostics={"variance_scale": "historical"},
    )


def gauss_legendre_measure(
    density: Callable[[np.ndarray], np.ndarray],
    low: float,
    high: float,
    n_nodes: int = 200,
) -> tuple[np.ndarray, np.ndarray]:
    """Discrete measure approximating a one-dimensional density by quadrature."""
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    points = 0.5 * (high - low) * nodes + 0.5 * (high + low)
    scaled = 0.5 * (high - low) * weights * np.asarray(density(points), dtype=float)
    return points[:, None], scaled


def self_normalized(
    kind: str,
    hist: HistoricalDataset,
    evl: EvaluationDataset | None,
    policy: Policy,
    nuisance_fitter: NuisanceFitter | None = None,
    ratio: Callable[[np.ndarray], np.ndarray] | None = None,
    behavior: Policy | None = None,
    bounds: NuisanceBounds | None = None,
    n_folds: int = 2,
    seed: int = 0,
    folds: FoldPartition | None = None,
    normalizer: str = "propensity",
) -> EstimateReport:
    """Self-normalized variants of the shift-corrected estimators.

    With ``normalizer="propensity"`` the historical term is rescaled by the
    reciprocal of the empirical mean of ``1 / pi_b_hat(A|X)``;
    ``normalizer="weight"`` rescales by the reciprocal of the empirical mean
    of the combined weight ``r_hat * w_hat`` instead.
    """
    if normalizer not in ("propensity", "weight"):
        raise ValueError("normalizer must be 'propensity' or 'weight'")
    if kind == "DRCS-SN":
        if nuisance_fitter is None or evl is None:
            raise ValueError("DRCS-SN requires a nuisance fitter and evaluation data")
        return _drcs_self_normalized(
            hist, evl, policy, nuisance_fitter, n_folds, seed, folds, normalizer
        )
    if kind == "IPWCS-SN":
        if ratio is None or behavior is None:
            raise ValueError("IPWCS-SN requires ratio and behavior estimates")
        bounds = bounds if bounds is not None else NuisanceBounds(reward_max=hist.reward_max)
        r = np.clip(np.asarray(ratio(hist.covariates), dtype=float), 0.0, bounds.ratio_bound)
        b = behavior.prob_of_actions(hist.actions, hist.covariates)
        w = np.clip(
            policy.prob_of_actions(hist.actions, hist.covariates) / b, 0.0, bounds.weight_bound
        )
        norm = 1.0 / np.mean(1.0 / b) if normalizer == "propensity" else _weight_norm(r * w)
        estimate = float(norm * np.mean(r * w * hist.rewards))
        return EstimateReport(
            estimate=estimate,
            plug_in_variance=float(np.var(norm * r * w * hist.rewards, ddof=1)) if len(hist) > 1 else 0.0,
            per_fold_estimates=(estimate,),
            diagnostics={"normalizer": normalizer, "variance_scale": "historical"},
        )
    raise ValueError(f"unknown self-normalized estimator kind: {kind!r}")


def _weight_norm(weights: np.ndarray) -> float:
    mean = float(np.mean(weights))
    if mean <= 0:
        raise ValueError("cannot self-normalize: weights average to zero")
    return 1.0 / mean


def _drcs_self_normalized(
    hist: HistoricalDataset,
    evl: EvaluationDataset,
    policy: Policy,
    nuisance_fitter: NuisanceFitter,
    n_folds: int,
    seed: int,
    folds: FoldPartition | None,
    normalizer: str,
) -> EstimateReport:
    if folds is None:
        folds = FoldPartition.make(len(hist), len(evl), n_folds, seed)
    n_folds = folds.n_folds
    per_fold = []
    norms = []
    all_phi_hist = np.empty(len(hist))
    all_phi_evl = np.empty(len(evl))
    for k in range(n_folds):
        nuis = nuisance_fitter(hist.subset(folds.hist_out(k)), evl.subset(folds.evl_out(k)))
        hist_in = folds.hist_in(k)
        evl_in = folds.evl_in(k)
        sub = hist.subset(hist_in)
        phi_hist, phi_evl = _fold_terms(nuis, policy, sub, evl.covariates[evl_in])
        if normalizer == "propensity":
            b = nuis.behavior_at(sub.actions, sub.covariates)
            norm = 1.0 / float(np.mean(1.0 / b))
        else:
            r = nuis.ratio_at(sub.covariates)
            w = nuis.weight_at(policy, sub.actions, sub.covariates)
            norm = _weight_norm(r * w)
        norms.append(norm)
        all_phi_hist[hist_in] = norm * phi_hist
        all_phi_evl[evl_in] = phi_evl
        per_fold.append(float(norm * phi_hist.mean() + phi_evl.mean()))
    estimate = float(np.mean(per_fold))
    variance = _eif_variance(all_phi_hist, all_phi_evl, sampling_fraction(hist, evl))
    return EstimateReport(
        estimate=estimate,
        plug_in_variance=variance,
        per_fold_estimates=tuple(per_fold),
        diagnostics={"normalizer": normalizer, "fold_normalizers": norms,
                     "variance_scale": "total"},
    )


def _eif_variance(phi_hist: np.ndarray, phi_evl: np.ndarray, rho: float) -> float:
    var_hist = float(np.var(phi_hist, ddof=1)) if len(phi_hist) > 1 else 0.0
    var_evl = float(np.var(phi_evl, ddof=1)) if len(phi_evl) > 1 else 0.0
    return var_hist / rho + var_evl / (1.0 - rho)


def eif_variance_estimate(
    nuisances: NuisanceSet,
    policy: Policy,
    hist: HistoricalDataset,
    evl: EvaluationDataset,
) -> float:
    """Plug-in variance from the influence function's two empirical variances.

    Returns ``var[r_hat * w_hat * (Y - f_hat)] / rho + var[v_hat] / (1 - rho)``,
    the per-observation scaled variance; divide by the total sample count for
    the squared standard error.
    """
    if len(hist) < 2 or len(evl) < 2:
        raise ValueError("variance estimation requires at least two samples per set")
    phi_hist, phi_evl = _fold_terms(nuisances, policy, hist, evl.covariates)
    return _eif_variance(phi_hist, phi_evl, sampling_fraction(hist, evl))


def efficiency_bound_tabular(dgp: TabularDGP, policy: Policy) -> float:
    """Exact minimal asymptotic MSE of the shift-corrected value estimate.

    Enumerates ``E[r^2 w^2 var[Y|A,X]] / rho + var[v(Z)] / (1 - rho)`` over
    the finite environment.
    """
    dgp.check_policy_overlap(policy)
    pi_e = policy_table(dgp, policy)
    r = dgp.ratio_table()
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(dgp.behavior > 0, pi_e / np.where(dgp.behavior > 0, dgp.behavior, 1.0), 0.0)
    cond_var = dgp.success * (1.0 - dgp.success)
    hist_term = float(np.einsum("s,sa,s,sa,sa->", dgp.p, dgp.behavior, r**2, w**2, cond_var))
    v = value_table(dgp, policy)
    evl_term = float(dgp.q @ v**2 - (dgp.q @ v) ** 2)
    return hist_term / dgp.rho + evl_term / (1.0 - dgp.rho)


def standard_bound_tabular(dgp: TabularDGP, policy: Policy) -> float:
    """Exact no-shift efficiency bound ``E[w^2 var[Y|A,X]] + var[v(X)]``.

    Expectations are taken under the historical covariate law; this is the
    reference point the shift-corrected bound collapses to (times the
    stratification factor) when the two covariate laws agree.
    """
    dgp.check_policy_overlap(policy)
    pi_e = policy_table(dgp, policy)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(dgp.behavior > 0, pi_e / np.where(dgp.behavior > 0, dgp.behavior, 1.0), 0.0)
    cond_var = dgp.success * (1.0 - dgp.success)
    hist_term = float(np.einsum("s,sa,sa,sa->", dgp.p, dgp.behavior, w**2, cond_var))
    v = value_table(dgp, policy)
    evl_term = float(dgp.p @ v**2 - (dgp.p @ v) ** 2)
    return hist_term + evl_term


def ipwcsb_variance_tabular(dgp: TabularDGP, policy: Policy) -> float:
    """Exact asymptotic MSE of importance weighting with the true behavior policy.

    Enumerates ``var[r(X) * (w(A,X) Y - v(X))] / rho + var[v(Z)] / (1 - rho)``.
    """
    dgp.check_policy_overlap(policy)
    pi_e = policy_table(dgp, policy)
    r = dgp.ratio_table()
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(dgp.behavior > 0, pi_e / np.where(dgp.behavior > 0, dgp.behavior, 1.0), 0.0)
    v = value_table(dgp, policy)
    # E[(w Y - v)^2 | a, x] for Bernoulli rewards: w^2 f - 2 w v f + v^2.
    second_moment = w**2 * dgp.success - 2.0 * w * v[:, None] * dgp.success + (v**2)[:, None]
    mean_sq = float(np.einsum("s,sa,s,sa->", dgp.p, dgp.behavior, r**2, second_moment))
    mean = float(np.einsum("s,sa,s,sa->", dgp.p, dgp.behavior, r, w * dgp.success - v[:, None]))
    hist_term = mean_sq - mean**2
    evl_term = float(dgp.q @ v**2 - (dgp.q @ v) ** 2)
    return hist_term / dgp.rho + evl_term / (1.0 - dgp.rho)


def known_q_bound_tabular(dgp: TabularDGP, policy: Policy) -> float:
    """Exact variance target when the evaluation covariate law is known:
    ``E[r^2 w^2 var[Y|A,X]]`` scaled per historical observation."""
    dgp.check_policy_overlap(policy)
    pi_e = policy_table(dgp, policy)
    r = dgp.ratio_table()
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(dgp.behavior > 0, pi_e / np.where(dgp.behavior > 0, dgp.behavior, 1.0), 0.0)
    cond_var = dgp.success * (1.0 - dgp.success)
    return float(np.einsum("s,sa,s,sa,sa->", dgp.p, dgp.behavior, r**2, w**2, cond_var))
