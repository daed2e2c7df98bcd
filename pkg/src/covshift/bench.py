"""Benchmark protocol: classification datasets replayed as bandit feedback.

A labeled dataset is split into historical and evaluation sides with a
covariate-dependent probability (creating the shift), a deterministic
classifier policy and its mixtures define the logging and target policies,
actions are logged from the logging policy with label-match rewards, and the
estimators are compared against the full-information ground truth.
"""

from __future__ import annotations

import concurrent.futures
import csv
import datetime
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import density_ratio, regression
from .core import (
    DeterministicLabelPolicy,
    EvaluationDataset,
    HistoricalDataset,
    MixturePolicy,
    NuisanceBounds,
    NuisanceSet,
    Policy,
    UniformPolicy,
    mixture_policy,
)
from .estimators import dm_estimate, drcs_estimate, ipwcs_estimate, self_normalized
from .kernels import median_heuristic
from .opl import OplConfig, train_policy

# The split score sums this many leading features.
N_SPLIT_FEATURES = 5
# Density floor for the plain kernel-density ratio. Standardized features in
# tens of dimensions push both densities far below any fixed moderate floor,
# which would silence the ratio entirely, so the protocol floors only at the
# smallest representable scale and lets the overlap clipping do the bounding.
KDE_RATIO_FLOOR = 1e-300
# Kernel scales for the plain nonparametric route, as multiples of the median
# pairwise distance. The density-ratio scale sits in the local regime the
# kernel asymptotics call for; the smoother scale is half the global median.
KDE_LOCAL_SCALE = 0.1
NW_LOCAL_SCALE = 0.5
# The learned-policy outcome smoother uses a more local scale: the policy
# search exploits the model's per-action ranking, which washes out at the
# global smoothing scale.
NW_OPL_SCALE = 0.25
# Ridge-route kernel scale and penalties for the cross-fitted estimator.
KRR_SCALE = 0.5
KRR_BEHAVIOR_RIDGE = 1.0
KRR_OUTCOME_RIDGE = 0.1
# The plain kernel estimators are run effectively unclipped (a very high cap
# only guards against non-finite arithmetic); their instability under weak
# overlap is part of the observed behavior being reproduced.
LOOSE_BOUND = 1e6

OPE_ESTIMATORS = ("DRCS", "IPWCS", "DM", "IPWCS-R", "DM-R", "DRCS-SN", "IPWCS-SN")
OPL_ESTIMATORS = ("DRCS", "IPWCS", "DM")


@dataclass(frozen=True)
class LabeledDataset:
    """Dense classification data with contiguous zero-based labels."""

    covariates: np.ndarray  # (n, d)
    labels: np.ndarray      # (n,) int in [0, n_classes)
    n_classes: int
    name: str = "dataset"

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        y = np.asarray(self.labels, dtype=int)
        if x.ndim != 2 or len(x) != len(y):
            raise ValueError("covariates and labels must align")
        if y.min(initial=0) < 0 or y.max(initial=0) >= self.n_classes:
            raise ValueError("labels out of range")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.covariates[idx], self.labels[idx], self.n_classes, self.name)


def load_libsvm(path: str, standardize: bool = True, name: str | None = None) -> LabeledDataset:
    """Load a sparse ``label index:value`` text file into dense standardized form.

    Labels are remapped to contiguous zero-based integers; feature indices are
    one-based in the file. Parse failures report the offending line number.
    """
    labels: list[int] = []
    entries: list[list[tuple[int, float]]] = []
    max_index = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                labels.append(int(float(parts[0])))
                row = []
                for token in parts[1:]:
                    idx_str, val_str = token.split(":", 1)
                    idx = int(idx_str)
                    if idx < 1:
                        raise ValueError("feature indices are one-based")
                    row.append((idx - 1, float(val_str)))
                    max_index = max(max_index, idx)
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: cannot parse line: {exc}") from exc
            entries.append(row)
    if not entries:
        raise ValueError(f"{path}: empty dataset")
    x = np.zeros((len(entries), max_index))
    for i, row in enumerate(entries):
        for j, val in row:
            x[i, j] = val
    raw_labels = np.asarray(labels)
    classes = np.unique(raw_labels)
    remapped = np.searchsorted(classes, raw_labels)
    if standardize:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        x = (x - mean) / np.where(std > 0, std, 1.0)
    return LabeledDataset(
        covariates=x,
        labels=remapped,
        n_classes=len(classes),
        name=name or path.rsplit("/", 1)[-1].split(".")[0],
    )


@dataclass(frozen=True)
class BenchConfig:
    """Protocol settings for the benchmark runs."""

    sample_budget: int = 800
    n_replications: int = 20
    alphas: tuple = (0.7, 0.4, 0.0)
    eval_mixture: float = 0.9
    hist_fraction: float = 0.7
    noise_scale: float = 0.1
    seed: int = 0
    estimators: tuple = ("DRCS", "IPWCS", "DM", "IPWCS-R", "DM-R")
    opl_estimators: tuple = OPL_ESTIMATORS
    opl_trials: int = 10
    opl: OplConfig = field(default_factory=lambda: OplConfig(max_iter=300, tol=1e-5))

    def __post_init__(self):
        if not 0.0 < self.hist_fraction < 1.0:
            raise ValueError("hist_fraction must lie in (0, 1)")
        if not 0.0 < self.eval_mixture < 1.0:
            raise ValueError("eval_mixture must lie in (0, 1)")
        if any(a < 0 or a > 1 for a in self.alphas):
            raise ValueError("alphas must lie in [0, 1]")
        unknown = set(self.estimators) - set(OPE_ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        unknown_opl = set(self.opl_estimators) - set(OPL_ESTIMATORS)
        if unknown_opl:
            raise ValueError(f"unknown policy-learning estimators: {sorted(unknown_opl)}")


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    expt = np.exp(t[~pos])
    out[~pos] = expt / (1.0 + expt)
    return out


def covariate_shift_split(
    data: LabeledDataset,
    target_hist_fraction: float,
    noise_scale: float,
    seed: int | np.random.Generator,
) -> tuple[LabeledDataset, LabeledDataset, dict]:
    """Assign rows to the historical side with covariate-dependent probability.

    Row ``i`` is historical with probability ``clip(C * sigmoid(tau_i -
    noise_scale * eps_i), 0, 1)`` where ``tau_i`` sums the first five
    features and ``eps_i`` is a fresh standard normal draw per row. ``C`` is
    calibrated by bisection so the expected historical fraction matches the
    target within 0.005.
    """
    if data.covariates.shape[1] < N_SPLIT_FEATURES:
        raise ValueError(f"need at least {N_SPLIT_FEATURES} features for the split score")
    if not 0.0 < target_hist_fraction < 1.0:
        raise ValueError("target_hist_fraction must lie in (0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tau = data.covariates[:, :N_SPLIT_FEATURES].sum(axis=1)
    eps = rng.standard_normal(len(data))
    base = _sigmoid(tau - noise_scale * eps)

    def expected_fraction(c: float) -> float:
        return float(np.mean(np.clip(c * base, 0.0, 1.0)))

    lo, hi = 0.0, 1.0
    for _ in range(200):
        if expected_fraction(hi) >= target_hist_fraction:
            break
        hi *= 2.0
    else:
        raise ValueError("calibration failed to bracket the target fraction")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if expected_fraction(mid) < target_hist_fraction:
            lo = mid
        else:
            hi = mid
    c_prob = hi
    achieved = expected_fraction(c_prob)
    if abs(achieved - target_hist_fraction) > 0.005:
        raise ValueError("calibration did not reach the target fraction")
    probs = np.clip(c_prob * base, 0.0, 1.0)
    is_hist = rng.random(len(data)) < probs
    if is_hist.all() or not is_hist.any():
        raise ValueError("degenerate split: one side is empty")
    info = {
        "c_prob": c_prob,
        "expected_fraction": achieved,
        "realized_fraction": float(is_hist.mean()),
    }
    return data.subset(np.flatnonzero(is_hist)), data.subset(np.flatnonzero(~is_hist)), info


@dataclass(frozen=True)
class MultinomialLogisticModel:
    """Softmax-linear classifier trained by penalized gradient descent."""

    weights: np.ndarray   # (n_classes, d)
    intercepts: np.ndarray  # (n_classes,)

    def scores(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights.T + self.intercepts

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(x), axis=1)


def fit_multinomial_logistic(
    x: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    penalty: float = 1e-4,
    max_iter: int = 500,
) -> MultinomialLogisticModel:
    """Train a multinomial logistic classifier with an L2 weight penalty."""
    n, d = x.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    weights = np.zeros((n_classes, d))
    intercepts = np.zeros(n_classes)

    def loss_and_grad(w, b):
        logits = x @ w.T + b
        logits -= logits.max(axis=1, keepdims=True)
        expd = np.exp(logits)
        probs = expd / expd.sum(axis=1, keepdims=True)
        nll = -np.mean(np.log(np.maximum(probs[np.arange(n), labels], 1e-300)))
        loss = nll + penalty * float(np.sum(w**2))
        diff = (probs - onehot) / n
        return loss, diff.T @ x + 2.0 * penalty * w, diff.sum(axis=0)

    step = 1.0
    loss, g_w, g_b = loss_and_grad(weights, intercepts)
    for _ in range(max_iter):
        while step > 1e-10:
            cand_w = weights - step * g_w
            cand_b = intercepts - step * g_b
            cand_loss, cand_gw, cand_gb = loss_and_grad(cand_w, cand_b)
            if cand_loss <= loss:
                break
            step *= 0.5
        else:
            break
        weights, intercepts = cand_w, cand_b
        loss, g_w, g_b = cand_loss, cand_gw, cand_gb
        step = min(step * 2.0, 1e3)
        if np.sqrt(np.sum(g_w**2) + np.sum(g_b**2)) < 1e-8:
            break
    if not np.isfinite(loss):
        raise RuntimeError("logistic regression training diverged")
    return MultinomialLogisticModel(weights=weights, intercepts=intercepts)


def build_policies(
    hist_data: LabeledDataset,
    alpha: float,
    seed: int = 0,
    eval_mixture: float = 0.9,
) -> tuple[Policy, Policy, Policy]:
    """Deterministic classifier policy and its logging/target mixtures.

    Returns ``(pi_d, pi_b, pi_e)`` where ``pi_b = alpha * pi_d + (1 - alpha) *
    uniform`` and ``pi_e = eval_mixture * pi_d + (1 - eval_mixture) * uniform``.
    """
    del seed  # training is deterministic; kept for interface stability
    model = fit_multinomial_logistic(hist_data.covariates, hist_data.labels, hist_data.n_classes)
    pi_d = DeterministicLabelPolicy(predict=model.predict, action_count=hist_data.n_classes)
    pi_b = mixture_policy(pi_d, 1.0 - alpha)
    pi_e = mixture_policy(pi_d, 1.0 - eval_mixture)
    return pi_d, pi_b, pi_e


def log_bandit_feedback(
    hist_data: LabeledDataset, behavior: Policy, rng: np.random.Generator
) -> HistoricalDataset:
    """Draw actions from the logging policy; reward is one when the action matches the label."""
    probs = behavior.prob_matrix(hist_data.covariates)
    cum = np.cumsum(probs, axis=1)
    actions = (rng.random(len(hist_data))[:, None] > cum).sum(axis=1)
    rewards = (actions == hist_data.labels).astype(float)
    return HistoricalDataset(hist_data.covariates, actions, rewards, reward_max=1.0)


def ground_truth_value(evl_data: LabeledDataset, policy: Policy) -> float:
    """Expected label-match reward of the policy over the evaluation rows."""
    probs = policy.prob_matrix(evl_data.covariates)
    return float(np.mean(probs[np.arange(len(evl_data)), evl_data.labels]))


# ---------------------------------------------------------------------------
# Nuisance wiring


def loose_bounds() -> NuisanceBounds:
    return NuisanceBounds(ratio_bound=LOOSE_BOUND, weight_bound=LOOSE_BOUND, reward_max=1.0)


def make_drcs_fitter(
    n_actions: int,
    bounds: NuisanceBounds | None = None,
    outcome_ridge: float = KRR_OUTCOME_RIDGE,
    behavior_ridge: float = KRR_BEHAVIOR_RIDGE,
    propensity_floor: float = regression.DEFAULT_PROPENSITY_FLOOR,
):
    """Out-of-fold fitter: importance-fitted ratio, ridge behavior and outcome."""
    bounds = bounds if bounds is not None else NuisanceBounds(reward_max=1.0)

    def fitter(hist: HistoricalDataset, evl: EvaluationDataset) -> NuisanceSet:
        sigma = KRR_SCALE * median_heuristic(hist.covariates)
        ratio_model = density_ratio.fit_kulsif(
            hist.covariates, evl.covariates, ratio_bound=bounds.ratio_bound
        )
        behavior = regression.fit_behavior_krr(
            hist, sigma=sigma, ridge=behavior_ridge,
            floor=propensity_floor, n_actions=n_actions,
        )
        outcome = regression.fit_outcome_krr(
            hist, sigma=sigma, ridge=outcome_ridge, n_actions=n_actions
        )
        return NuisanceSet(
            ratio=ratio_model.raw_predict,
            behavior=lambda a, x: behavior.prob_matrix(x)[np.arange(len(a)), a],
            outcome=outcome.predict,
            bounds=bounds,
        )

    return fitter


def _local_kde_bandwidth(hist_x: np.ndarray, evl_x: np.ndarray) -> float:
    pooled = np.vstack([hist_x, evl_x])
    med = median_heuristic(pooled)
    # The density formula raises the bandwidth parameter to the covariate
    # dimension, so take the d-th root to land on the intended kernel scale.
    return (KDE_LOCAL_SCALE * med) ** (1.0 / pooled.shape[1])


def make_kde_ratio(hist_x: np.ndarray, evl_x: np.ndarray, ratio_bound: float):
    """Plain density-ratio predictor from two kernel density estimates."""
    h = _local_kde_bandwidth(hist_x, evl_x)
    p_model = density_ratio.fit_kde(hist_x, h=h)
    q_model = density_ratio.fit_kde(evl_x, h=h)

    def ratio(x: np.ndarray) -> np.ndarray:
        return density_ratio.kde_ratio_predict(
            q_model, p_model, x, floor=KDE_RATIO_FLOOR, ratio_bound=ratio_bound
        )

    return ratio


def kde_ratio_at_hist_loo(hist_x: np.ndarray, evl_x: np.ndarray, ratio_bound: float) -> np.ndarray:
    """Density-ratio values at the historical points, leaving each point out of
    its own density estimate (matching how the estimator is analyzed)."""
    h = _local_kde_bandwidth(hist_x, evl_x)
    p_model = density_ratio.fit_kde(hist_x, h=h)
    q_model = density_ratio.fit_kde(evl_x, h=h)
    log_p = np.maximum(p_model.log_eval_loo(), np.log(KDE_RATIO_FLOOR))
    with np.errstate(over="ignore"):
        ratio = np.exp(q_model.log_eval(hist_x) - log_p)
    return np.clip(ratio, 0.0, ratio_bound)


def make_ipwcs_fitter(n_actions: int, bounds: NuisanceBounds | None = None,
                      propensity_floor: float = regression.DEFAULT_PROPENSITY_FLOOR):
    """Out-of-fold fitter for the plain-kernel route (ratio of densities, local behavior)."""
    bounds = bounds if bounds is not None else loose_bounds()

    def fitter(hist: HistoricalDataset, evl: EvaluationDataset) -> NuisanceSet:
        ratio = make_kde_ratio(hist.covariates, evl.covariates, bounds.ratio_bound)
        behavior = regression.fit_behavior_nw(
            hist, h=NW_LOCAL_SCALE * median_heuristic(hist.covariates),
            floor=propensity_floor, n_actions=n_actions,
        )
        return NuisanceSet(
            ratio=ratio,
            behavior=lambda a, x: behavior.prob_matrix(x)[np.arange(len(a)), a],
            outcome=lambda a, x: np.zeros(len(a)),
            bounds=bounds,
        )

    return fitter


def make_dm_fitter(n_actions: int, bounds: NuisanceBounds | None = None):
    """Out-of-fold fitter exposing only a locally weighted outcome model."""
    bounds = bounds if bounds is not None else NuisanceBounds(reward_max=1.0)

    def fitter(hist: HistoricalDataset, evl: EvaluationDataset) -> NuisanceSet:
        del evl
        outcome = regression.fit_outcome_nw(
            hist, h=NW_OPL_SCALE * median_heuristic(hist.covariates), n_actions=n_actions
        )
        return NuisanceSet(
            ratio=lambda x: np.ones(len(x)),
            behavior=lambda a, x: np.ones(len(a)),
            outcome=outcome.predict,
            bounds=bounds,
        )

    return fitter


# ---------------------------------------------------------------------------
# Replication runners


def _ope_single_replication(
    data: LabeledDataset, config: BenchConfig, alpha: float, rep: int
) -> dict:
    rng = np.random.default_rng([config.seed, int(alpha * 1000), rep])
    if config.sample_budget > len(data):
        raise ValueError("sample budget exceeds dataset size")
    rows = data.subset(rng.choice(len(data), size=config.sample_budget, replace=False))
    hist_rows, evl_rows, split_info = covariate_shift_split(
        rows, config.hist_fraction, config.noise_scale, rng
    )
    _, pi_b, pi_e = build_policies(hist_rows, alpha, eval_mixture=config.eval_mixture)
    hist = log_bandit_feedback(hist_rows, pi_b, rng)
    evl = EvaluationDataset(evl_rows.covariates)
    truth = ground_truth_value(evl_rows, pi_e)
    n_actions = data.n_classes
    bounds = NuisanceBounds(reward_max=1.0)
    loose = loose_bounds()
    med = median_heuristic(hist.covariates)

    estimates: dict[str, float] = {}
    failures: dict[str, str] = {}

    def record(name, fn):
        if name not in config.estimators:
            return
        try:
            estimates[name] = float(fn())
        except Exception as exc:  # failures land in the table, not the runner
            failures[name] = f"{type(exc).__name__}: {exc}"
            estimates[name] = float("nan")

    drcs_fitter = make_drcs_fitter(n_actions, bounds)
    record("DRCS", lambda: drcs_estimate(
        hist, evl, pi_e, drcs_fitter, n_folds=2, seed=rep).estimate)
    record("DRCS-SN", lambda: self_normalized(
        "DRCS-SN", hist, evl, pi_e, nuisance_fitter=drcs_fitter, n_folds=2, seed=rep).estimate)

    def kde_ratio():
        values = kde_ratio_at_hist_loo(hist.covariates, evl.covariates, loose.ratio_bound)

        def at(x: np.ndarray) -> np.ndarray:
            if len(x) != len(values):
                raise ValueError("ratio values were precomputed for the logged sample")
            return values

        return at

    def nw_behavior():
        return regression.fit_behavior_nw(hist, h=NW_LOCAL_SCALE * med, n_actions=n_actions)

    record("IPWCS", lambda: ipwcs_estimate(kde_ratio(), nw_behavior(), pi_e, hist, loose))
    record("IPWCS-SN", lambda: self_normalized(
        "IPWCS-SN", hist, None, pi_e,
        ratio=kde_ratio(), behavior=nw_behavior(), bounds=loose).estimate)

    def kulsif_ratio():
        model = density_ratio.fit_kulsif(
            hist.covariates, evl.covariates, ratio_bound=loose.ratio_bound
        )
        return model.predict

    record("IPWCS-R", lambda: ipwcs_estimate(kulsif_ratio(), nw_behavior(), pi_e, hist, loose))
    record("DM", lambda: dm_estimate(
        regression.fit_outcome_nw(hist, h=NW_LOCAL_SCALE * med, n_actions=n_actions).predict,
        pi_e, evl))
    record("DM-R", lambda: dm_estimate(
        regression.fit_outcome_krr(hist, sigma=KRR_SCALE * med, ridge=KRR_OUTCOME_RIDGE,
                                   n_actions=n_actions).predict, pi_e, evl))

    return {
        "rep": rep,
        "alpha": alpha,
        "truth": truth,
        "estimates": estimates,
        "squared_errors": {k: (v - truth) ** 2 for k, v in estimates.items()},
        "failures": failures,
        "split": split_info,
    }


def _opl_single_trial(
    data: LabeledDataset, config: BenchConfig, alpha: float, trial: int
) -> dict:
    rng = np.random.default_rng([config.seed, 7919, int(alpha * 1000), trial])
    if config.sample_budget > len(data):
        raise ValueError("sample budget exceeds dataset size")
    rows = data.subset(rng.choice(len(data), size=config.sample_budget, replace=False))
    hist_rows, evl_rows, _ = covariate_shift_split(
        rows, config.hist_fraction, config.noise_scale, rng
    )
    _, pi_b, _ = build_policies(hist_rows, alpha, eval_mixture=config.eval_mixture)
    hist = log_bandit_feedback(hist_rows, pi_b, rng)
    evl = EvaluationDataset(evl_rows.covariates)
    n_actions = data.n_classes
    bounds = NuisanceBounds(reward_max=1.0)
    fitters = {
        "DRCS": make_drcs_fitter(n_actions, bounds),
        "IPWCS": make_ipwcs_fitter(n_actions, bounds),
        "DM": make_dm_fitter(n_actions, bounds),
    }
    opl_config = replace(config.opl, seed=config.opl.seed + trial)
    rewards: dict[str, float] = {}
    failures: dict[str, str] = {}
    for kind in config.opl_estimators:
        try:
            policy = train_policy(hist, evl, opl_config, kind, fitters[kind],
                                  action_count=n_actions)
            rewards[kind] = ground_truth_value(evl_rows, policy)
        except Exception as exc:
            failures[kind] = f"{type(exc).__name__}: {exc}"
            rewards[kind] = float("nan")
    return {"trial": trial, "alpha": alpha, "rewards": rewards, "failures": failures}


@dataclass(frozen=True)
class BenchResult:
    """Aggregated benchmark table plus per-replication detail."""

    kind: str             # "ope" or "opl"
    dataset: str
    rows: tuple           # aggregated dicts: dataset, alpha, estimator, value, sd, n_reps, seed
    detail: tuple         # per-replication dicts
    seed: int

    def to_csv(self, path: str, timestamp: bool = True) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if timestamp:
                fh.write(f"# generated {datetime.datetime.now().isoformat()}\n")
            writer = csv.writer(fh)
            writer.writerow(["dataset", "alpha", "estimator", "mse_or_rwd", "sd", "n_reps", "seed"])
            for row in self.rows:
                writer.writerow([
                    row["dataset"], row["alpha"], row["estimator"],
                    _fmt(row["value"]), _fmt(row["sd"]), row["n_reps"], row["seed"],
                ])

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({
                "kind": self.kind,
                "dataset": self.dataset,
                "seed": self.seed,
                "rows": list(self.rows),
                "detail": list(self.detail),
            }, fh, indent=2, default=_json_default)


def _fmt(value: float) -> str:
    return "nan" if not np.isfinite(value) else f"{value:.6f}"


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)!r}")


def _run_replications(worker, reps: int, jobs: int) -> list:
    if jobs <= 1:
        return [worker(i) for i in range(reps)]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, range(reps)))


class _OpeWorker:
    def __init__(self, data, config, alpha):
        self.data, self.config, self.alpha = data, config, alpha

    def __call__(self, rep: int) -> dict:
        return _ope_single_replication(self.data, self.config, self.alpha, rep)


class _OplWorker:
    def __init__(self, data, config, alpha):
        self.data, self.config, self.alpha = data, config, alpha

    def __call__(self, trial: int) -> dict:
        return _opl_single_trial(self.data, self.config, self.alpha, trial)


def run_ope_experiment(data: LabeledDataset, config: BenchConfig, jobs: int = 1) -> BenchResult:
    """Replicate the evaluation protocol and aggregate per-estimator MSEs."""
    rows, detail = [], []
    for alpha in config.alphas:
        results = _run_replications(_OpeWorker(data, config, alpha), config.n_replications, jobs)
        detail.extend(results)
        for estimator in config.estimators:
            errors = np.array([r["squared_errors"].get(estimator, float("nan"))
                               for r in results])
            ok = np.isfinite(errors)
            rows.append({
                "dataset": data.name,
                "alpha": alpha,
                "estimator": estimator,
                "value": float(np.mean(errors[ok])) if ok.any() else float("nan"),
                "sd": float(np.std(errors[ok], ddof=1)) if ok.sum() > 1 else float("nan"),
                "n_reps": int(ok.sum()),
                "seed": config.seed,
            })
    return BenchResult(kind="ope", dataset=data.name, rows=tuple(rows),
                       detail=tuple(detail), seed=config.seed)


def run_opl_experiment(data: LabeledDataset, config: BenchConfig, jobs: int = 1) -> BenchResult:
    """Replicate the learning protocol and aggregate per-estimator rewards."""
    rows, detail = [], []
    for alpha in config.alphas:
        results = _run_replications(_OplWorker(data, config, alpha), config.opl_trials, jobs)
        detail.extend(results)
        for estimator in config.opl_estimators:
            rewards = np.array([r["rewards"].get(estimator, float("nan")) for r in results])
            ok = np.isfinite(rewards)
            rows.append({
                "dataset": data.name,
                "alpha": alpha,
                "estimator": estimator,
                "value": float(np.mean(rewards[ok])) if ok.any() else float("nan"),
                "sd": float(np.std(rewards[ok], ddof=1)) if ok.sum() > 1 else float("nan"),
                "n_reps": int(ok.sum()),
                "seed": config.seed,
            })
    return BenchResult(kind="opl", dataset=data.name, rows=tuple(rows),
                       detail=tuple(detail), seed=config.seed)
