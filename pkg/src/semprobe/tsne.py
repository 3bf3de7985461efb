"""Exact t-SNE to 2-D plus a scalar separability score for feature spaces.

The O(N^2) formulation is intentional: inputs are desk-scale and exactness
keeps every run bit-reproducible. Perplexity calibration binary-searches the
per-point Gaussian bandwidth until 2^(Shannon entropy) hits the target.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import InputError
from .validation import as_f32, check_finite

logger = logging.getLogger(__name__)

P_FLOOR = 1e-12


@dataclass
class Embedding2D:
    points: np.ndarray
    final_kl: float
    kl_post_exaggeration: float


def _sq_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _jitter_duplicates(x: np.ndarray, d2: np.ndarray, seed: int) -> np.ndarray:
    off_diag = d2.copy()
    np.fill_diagonal(off_diag, np.inf)
    dup_rows = np.unique(np.nonzero(off_diag == 0.0)[0])
    if dup_rows.size == 0:
        return x
    scale = 1e-6 * max(np.sqrt(d2.max()), 1.0)
    logger.warning(
        "jittering %d duplicate points by %.2e before perplexity calibration",
        dup_rows.size, scale,
    )
    rng = np.random.default_rng(seed)
    x = x.copy()
    x[dup_rows] += rng.normal(scale=scale, size=(dup_rows.size, x.shape[1]))
    return x


def _row_entropy_probs(d2_row: np.ndarray, beta: float):
    # shift by the nearest neighbor so the largest weight is exp(0): the
    # probabilities are shift-invariant and never underflow to all-zero
    w = np.exp(-beta * (d2_row - d2_row.min()))
    p = w / w.sum()
    nz = p > 0
    entropy = float(-(p[nz] * np.log2(p[nz])).sum())
    return entropy, p


def calibrate_affinities(
    features: np.ndarray,
    perplexity: float,
    jitter_seed: int = 0,
    max_steps: int = 50,
    tol: float = 1e-4,
):
    """Symmetric joint affinity matrix P with rows calibrated to `perplexity`.

    Returns (P, sigmas). P is (P_cond + P_cond.T) / (2N), floored at 1e-12;
    sigmas are the calibrated per-point Gaussian bandwidths. Exact duplicate
    points are jittered (logged) so calibration stays solvable.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise InputError("features must be [N, D]")
    n = x.shape[0]
    if n < 4:
        raise InputError(f"need at least 4 points, got {n}")
    if not 1.0 < perplexity < n:
        raise InputError(f"perplexity must lie in (1, {n}), got {perplexity}")
    check_finite(x, "features")

    d2 = _sq_distances(x)
    x = _jitter_duplicates(x, d2, jitter_seed)
    d2 = _sq_distances(x)

    target = float(np.log2(perplexity))
    cond = np.zeros((n, n))
    sigmas = np.zeros(n)
    idx = np.arange(n)
    for i in range(n):
        row = d2[i, idx != i]
        beta, lo, hi = 1.0, 0.0, np.inf
        entropy, p = _row_entropy_probs(row, beta)
        for _ in range(max_steps):
            if abs(2.0**entropy - perplexity) < tol:
                break
            if entropy > target:  # distribution too flat: raise beta
                lo = beta
                beta = beta * 2.0 if np.isinf(hi) else (lo + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == 0.0 else (lo + hi) / 2.0
            entropy, p = _row_entropy_probs(row, beta)
        cond[i, idx != i] = p
        sigmas[i] = np.sqrt(1.0 / (2.0 * beta))

    joint = (cond + cond.T) / (2.0 * n)
    return np.maximum(joint, P_FLOOR), sigmas


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch_iter: int = 250
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    seed: int = 0

    def validate(self, n: int) -> "TsneConfig":
        if self.iterations < 250:
            raise InputError(f"iterations must be >= 250, got {self.iterations}")
        if not 1.0 < self.perplexity < n / 3.0:
            raise InputError(
                f"perplexity must lie in (1, N/3) = (1, {n / 3:.1f}), got {self.perplexity}"
            )
        return self


def _q_matrix(y: np.ndarray):
    d2 = _sq_distances(y)
    w = 1.0 / (1.0 + d2)
    np.fill_diagonal(w, 0.0)
    q = w / w.sum()
    return np.maximum(q, P_FLOOR), w


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = ~np.eye(p.shape[0], dtype=bool)
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def tsne(features: np.ndarray, config: TsneConfig | None = None) -> Embedding2D:
    """Gradient descent on KL(P || Q) with a Student-t low-dimensional kernel.

    Deterministic given the seed: seeded Gaussian init (sigma 1e-4), early
    exaggeration for the first phase, momentum switch, and mean-centering
    every iteration.
    """
    config = config or TsneConfig()
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    config.validate(n)

    p, _ = calibrate_affinities(x, config.perplexity, jitter_seed=config.seed)
    rng = np.random.default_rng(config.seed)
    y = rng.normal(scale=1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    p_run = p * config.early_exaggeration
    kl_post_exaggeration = np.nan

    for it in range(config.iterations):
        if it == config.exaggeration_iters:
            p_run = p
        momentum = (
            config.momentum_start
            if it < config.momentum_switch_iter
            else config.momentum_final
        )
        q, w = _q_matrix(y)
        if it == config.exaggeration_iters:
            kl_post_exaggeration = _kl(p, q)
        coeff = (p_run - q) * w
        grad = 4.0 * ((np.diag(coeff.sum(axis=1)) - coeff) @ y)
        velocity = momentum * velocity - config.learning_rate * grad
        y = y + velocity
        y = y - y.mean(axis=0)

    q, _ = _q_matrix(y)
    final_kl = _kl(p, q)
    if np.isnan(kl_post_exaggeration):  # iterations == exaggeration end
        kl_post_exaggeration = final_kl
    return Embedding2D(
        points=y.astype(np.float32),
        final_kl=final_kl,
        kl_post_exaggeration=kl_post_exaggeration,
    )


def silhouette(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette with Euclidean distance, in [-1, 1].

    Points in singleton classes score 0; degenerate points with zero
    distance to both own and nearest other class score 0.
    """
    x = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or labels.shape[0] != x.shape[0]:
        raise InputError("points must be [N, D] with one label per point")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise InputError("silhouette needs at least 2 distinct labels")
    d = np.sqrt(_sq_distances(x))
    scores = np.zeros(x.shape[0])
    for i in range(x.shape[0]):
        own = labels == labels[i]
        n_own = own.sum()
        if n_own == 1:
            continue  # singleton class scores 0
        a = d[i, own].sum() / (n_own - 1)
        b = min(
            d[i, labels == c].mean() for c in classes if c != labels[i]
        )
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


_PALETTE = (
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
)


def svg_scatter(points: np.ndarray, labels=None, size: int = 600) -> str:
    """Deterministic standalone SVG scatter of a 2-D embedding."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InputError("points must be [N, 2]")
    labels = np.zeros(len(pts), dtype=int) if labels is None else np.asarray(labels)
    lo = pts.min(axis=0)
    span = np.maximum(pts.max(axis=0) - lo, 1e-12)
    margin = 0.05 * size
    scale = (size - 2 * margin) / span
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    classes = {c: k for k, c in enumerate(np.unique(labels))}
    for (px, py), lab in zip(pts, labels):
        cx = margin + (px - lo[0]) * scale[0]
        cy = size - margin - (py - lo[1]) * scale[1]
        color = _PALETTE[classes[lab] % len(_PALETTE)]
        parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="3" fill="{color}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


class ExactTSNE(BaseEstimator):
    """Exact t-SNE with the fit_transform interface.

    Optional preprocessing flags: `l2_normalize` scales each input row to
    unit norm; `pca_dims` projects onto the top principal components first.
    """

    def __init__(
        self,
        perplexity=30.0,
        iterations=1000,
        learning_rate=200.0,
        momentum_start=0.5,
        momentum_final=0.8,
        momentum_switch_iter=250,
        early_exaggeration=12.0,
        exaggeration_iters=250,
        seed=0,
        l2_normalize=False,
        pca_dims=None,
    ):
        self.perplexity = perplexity
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.momentum_start = momentum_start
        self.momentum_final = momentum_final
        self.momentum_switch_iter = momentum_switch_iter
        self.early_exaggeration = early_exaggeration
        self.exaggeration_iters = exaggeration_iters
        self.seed = seed
        self.l2_normalize = l2_normalize
        self.pca_dims = pca_dims

    def _preprocess(self, x: np.ndarray) -> np.ndarray:
        if self.l2_normalize:
            norms = np.linalg.norm(x, axis=1, keepdims=True)
            if np.any(norms == 0):
                raise InputError("cannot L2-normalize zero feature rows")
            x = x / norms
        if self.pca_dims is not None:
            k = int(self.pca_dims)
            if not 1 <= k <= min(x.shape):
                raise InputError(f"pca_dims must lie in [1, {min(x.shape)}], got {k}")
            centered = x - x.mean(axis=0)
            _, _, vt = np.linalg.svd(centered, full_matrices=False)
            x = centered @ vt[:k].T
        return x

    def fit_transform(self, X, y=None) -> np.ndarray:
        x = self._preprocess(as_f32(X, 2, "features").astype(np.float64))
        result = tsne(
            x,
            TsneConfig(
                perplexity=self.perplexity,
                iterations=self.iterations,
                learning_rate=self.learning_rate,
                momentum_start=self.momentum_start,
                momentum_final=self.momentum_final,
                momentum_switch_iter=self.momentum_switch_iter,
                early_exaggeration=self.early_exaggeration,
                exaggeration_iters=self.exaggeration_iters,
                seed=self.seed,
            ),
        )
        self.embedding_ = result.points
        self.kl_divergence_ = result.final_kl
        self.kl_post_exaggeration_ = result.kl_post_exaggeration
        return result.points

    def fit(self, X, y=None):
        self.fit_transform(X)
        return self
