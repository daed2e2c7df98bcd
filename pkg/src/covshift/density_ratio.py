"""Density-ratio estimation between historical and evaluation covariates.

Two routes are provided: a kernel least-squares importance fitter solved in
representer form, and the ratio of two kernel density estimates. Both return
predictions clipped to the configured overlap bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .core import DEFAULT_RATIO_BOUND, as_covariate_matrix
from .kernels import LOG_2PI, gaussian_gram, median_heuristic, scott_bandwidth


class IllConditionedSolveError(RuntimeError):
    """Raised when the importance-fitting linear system cannot be solved reliably."""

    def __init__(self, message: str, condition_estimate: float):
        super().__init__(f"{message} (condition estimate {condition_estimate:.3e})")
        self.condition_estimate = condition_estimate


@dataclass(frozen=True)
class KulsifModel:
    """Kernel least-squares importance fit of the ratio q(x) / p(x).

    The fitted function is a Gaussian-kernel expansion over both historical
    and evaluation covariates; ``hist_coef`` and ``evl_coef`` are the dual
    coefficients on the respective centers.
    """

    hist_x: np.ndarray     # (n_hst, d)
    evl_x: np.ndarray      # (n_evl, d)
    hist_coef: np.ndarray  # (n_hst,)
    evl_coef: np.ndarray   # (n_evl,)
    sigma: float
    ridge: float
    ratio_bound: float = DEFAULT_RATIO_BOUND

    def raw_predict(self, x: np.ndarray) -> np.ndarray:
        """Unclipped fitted function values."""
        x = as_covariate_matrix(x)
        out = gaussian_gram(x, self.hist_x, self.sigma) @ self.hist_coef
        out += gaussian_gram(x, self.evl_x, self.sigma) @ self.evl_coef
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.clip(self.raw_predict(x), 0.0, self.ratio_bound)


def default_ridge(n_hst: int, n_evl: int) -> float:
    """Default regularization weight, shrinking at a root-n rate."""
    return min(n_hst, n_evl) ** -0.5


def fit_kulsif(
    hist_x: np.ndarray,
    evl_x: np.ndarray,
    sigma: float | None = None,
    ridge: float | None = None,
    ratio_bound: float = DEFAULT_RATIO_BOUND,
) -> KulsifModel:
    """Fit the density ratio by regularized least squares over an RBF expansion.

    Minimizes ``(1/2) * mean_hst[s(X)^2] - mean_evl[s(Z)] + (ridge/2) * ||s||^2``
    over the Gaussian RKHS. The minimizer puts constant dual weight
    ``1 / (ridge * n_evl)`` on the evaluation centers and coefficients on the
    historical centers obtained from one symmetric positive-definite solve.
    """
    hist_x = as_covariate_matrix(hist_x)
    evl_x = as_covariate_matrix(evl_x)
    if hist_x.shape[1] != evl_x.shape[1]:
        raise ValueError("historical and evaluation covariates must share a dimension")
    n_hst, n_evl = len(hist_x), len(evl_x)
    if sigma is None:
        sigma = median_heuristic(np.vstack([hist_x, evl_x]))
    if ridge is None:
        ridge = default_ridge(n_hst, n_evl)
    if sigma <= 0 or ridge <= 0:
        raise ValueError("sigma and ridge must be positive")

    k_xx = gaussian_gram(hist_x, hist_x, sigma)
    k_xz_row_sum = gaussian_gram(hist_x, evl_x, sigma).sum(axis=1)
    # Solve (K_xx + ridge * n_hst * I) u = (n_hst / n_evl) K_xz 1; then the
    # historical dual coefficients are -u / (ridge * n_hst).
    system = k_xx + ridge * n_hst * np.eye(n_hst)
    rhs = (n_hst / n_evl) * k_xz_row_sum
    try:
        chol = scipy.linalg.cho_factor(system, check_finite=False)
        u = scipy.linalg.cho_solve(chol, rhs, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise IllConditionedSolveError(
            "importance-fitting system is not positive definite",
            float(np.linalg.cond(system)),
        ) from exc
    residual = np.linalg.norm(system @ u - rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0 and residual / scale > 1e-6:
        raise IllConditionedSolveError(
            "importance-fitting solve did not converge",
            float(np.linalg.cond(system)),
        )
    return KulsifModel(
        hist_x=hist_x,
        evl_x=evl_x,
        hist_coef=-u / (ridge * n_hst),
        evl_coef=np.full(n_evl, 1.0 / (ridge * n_evl)),
        sigma=sigma,
        ridge=ridge,
        ratio_bound=ratio_bound,
    )


def ratio_predict(model: KulsifModel, x: np.ndarray) -> np.ndarray:
    """Clipped density-ratio prediction at the query covariates."""
    return model.predict(x)


def kulsif_objective(
    model: KulsifModel,
    hist_coef: np.ndarray | None = None,
    evl_coef: np.ndarray | None = None,
) -> float:
    """Regularized empirical objective at the model's (or perturbed) coefficients.

    The value at the fitted coefficients is the achieved minimum; it is never
    above zero because the zero function scores exactly zero.
    """
    a = model.hist_coef if hist_coef is None else np.asarray(hist_coef, dtype=float)
    b = model.evl_coef if evl_coef is None else np.asarray(evl_coef, dtype=float)
    k_xx = gaussian_gram(model.hist_x, model.hist_x, model.sigma)
    k_xz = gaussian_gram(model.hist_x, model.evl_x, model.sigma)
    k_zz = gaussian_gram(model.evl_x, model.evl_x, model.sigma)
    s_hist = k_xx @ a + k_xz @ b          # s at historical points
    s_evl = k_xz.T @ a + k_zz @ b         # s at evaluation points
    rkhs_sq = a @ k_xx @ a + 2.0 * a @ (k_xz @ b) + b @ k_zz @ b
    return float(
        0.5 * np.mean(s_hist**2) - np.mean(s_evl) + 0.5 * model.ridge * rkhs_sq
    )


@dataclass(frozen=True)
class KdeModel:
    """Kernel density estimate with the bandwidth entering as ``h^d``.

    The estimate at ``x`` is ``mean_i h^{-d} K((x_i - x) / h^d)`` with ``K``
    the standard Gaussian density. For one-dimensional data this is the
    classical estimator; in higher dimensions the normalizing constant it
    carries cancels whenever two estimates sharing the same ``h`` are divided.
    """

    samples: np.ndarray  # (n, d)
    bandwidth: float
    kernel: str = "gaussian"

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def log_eval(self, x: np.ndarray) -> np.ndarray:
        """Log-density values, computed stably in log space."""
        x = as_covariate_matrix(x)
        d = self.dim
        scale = self.bandwidth**d
        diff = (self.samples[None, :, :] - x[:, None, :]) / scale
        log_k = -0.5 * np.sum(diff * diff, axis=2) - 0.5 * d * LOG_2PI
        return logsumexp(log_k, axis=1) - np.log(len(self.samples)) - d * np.log(self.bandwidth)

    def eval(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(under="ignore"):
            return np.exp(self.log_eval(x))

    def log_eval_loo(self) -> np.ndarray:
        """Leave-one-out log density at the model's own sample points."""
        if len(self.samples) < 2:
            raise ValueError("leave-one-out evaluation needs at least two samples")
        d = self.dim
        scale = self.bandwidth**d
        diff = (self.samples[None, :, :] - self.samples[:, None, :]) / scale
        log_k = -0.5 * np.sum(diff * diff, axis=2) - 0.5 * d * LOG_2PI
        np.fill_diagonal(log_k, -np.inf)
        return (
            logsumexp(log_k, axis=1)
            - np.log(len(self.samples) - 1)
            - d * np.log(self.bandwidth)
        )


def fit_kde(samples: np.ndarray, h: float | None = None, kernel: str = "gaussian") -> KdeModel:
    """Fit a kernel density estimate; ``h`` defaults to Scott's rule."""
    samples = as_covariate_matrix(samples)
    if kernel != "gaussian":
        raise ValueError(f"unsupported kernel family: {kernel!r}")
    if h is None:
        scale = float(np.mean(np.std(samples, axis=0)))
        h = scott_bandwidth(len(samples), samples.shape[1], scale if scale > 0 else 1.0)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    return KdeModel(samples=samples, bandwidth=float(h), kernel=kernel)


def kde_eval(model: KdeModel, x: np.ndarray) -> np.ndarray:
    """Density estimate at the query covariates (nonnegative)."""
    return model.eval(x)


def kde_ratio_predict(
    q_model: KdeModel,
    p_model: KdeModel,
    x: np.ndarray,
    floor: float = 1e-6,
    ratio_bound: float = DEFAULT_RATIO_BOUND,
) -> np.ndarray:
    """Clipped ratio ``q_hat(x) / max(p_hat(x), floor)``.

    The division is carried out in log space so that the ratio of two
    underflowing densities is still computed exactly.
    """
    if floor <= 0:
        raise ValueError("floor must be positive")
    log_q = q_model.log_eval(x)
    log_p = np.maximum(p_model.log_eval(x), np.log(floor))
    with np.errstate(over="ignore", under="ignore"):
        ratio = np.exp(log_q - log_p)
    return np.clip(ratio, 0.0, ratio_bound)


def product_l2_error_check(
    ratio_hat: np.ndarray,
    ratio_true: np.ndarray,
    weight_hat: np.ndarray,
    weight_true: np.ndarray,
    ratio_bound: float,
    weight_bound: float,
) -> dict:
    """Diagnostic for the error of the product of two bounded nuisances.

    The empirical L2 error of ``ratio_hat * weight_hat`` is bounded by the sum
    of the individual errors scaled by the opposite bound, hence by
    ``(ratio_bound + weight_bound) * max(individual errors)``.
    """

    def l2(u: np.ndarray) -> float:
        return float(np.sqrt(np.mean(np.square(u))))

    product_error = l2(ratio_hat * weight_hat - ratio_true * weight_true)
    ratio_error = l2(ratio_hat - ratio_true)
    weight_error = l2(weight_hat - weight_true)
    bound = (ratio_bound + weight_bound) * max(ratio_error, weight_error)
    return {
        "product_error": product_error,
        "ratio_error": ratio_error,
        "weight_error": weight_error,
        "bound": bound,
        "satisfied": product_error <= bound + 1e-12,
    }
