"""Gaussian-kernel helpers shared by the nonparametric fitters."""

from __future__ import annotations

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, shape ``(len(a), len(b))``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d2 = aa + bb - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def gaussian_gram(a: np.ndarray, b: np.ndarray, sigma: float) -> np.ndarray:
    """RBF Gram matrix exp(-||a_i - b_j||^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return np.exp(-squared_distances(a, b) / (2.0 * sigma**2))


def median_heuristic(x: np.ndarray, max_points: int = 1000, seed: int = 0) -> float:
    """Median pairwise distance, estimated on a capped deterministic subsample."""
    x = np.asarray(x, dtype=float)
    if len(x) > max_points:
        idx = np.random.default_rng(seed).choice(len(x), max_points, replace=False)
        x = x[idx]
    d2 = squared_distances(x, x)
    upper = d2[np.triu_indices(len(x), k=1)]
    if upper.size == 0:
        return 1.0
    med = float(np.sqrt(np.median(upper)))
    return med if med > 0 else 1.0


def scott_bandwidth(n: int, dim: int, scale: float) -> float:
    """Scott's rule-of-thumb bandwidth n^(-1/(d+4)) * scale."""
    bw = n ** (-1.0 / (dim + 4)) * scale
    return bw if bw > 0 else 1.0
