"""Post-fit inference and evaluation metrics.

Community structure is read off the rows of the low-rank factor by K-means;
covariate-affected edges are read off the nonzero support of the slope
tensor. Estimation errors are always computed over off-diagonal entries only,
matching the likelihood.
"""

from dataclasses import dataclass

import numpy as np

from netreg.optim import FitResult
from netreg.tensor import mode3_product

KMEANS_MAX_ITER = 300


@dataclass
class CommunityAssignment:
    """K-means output: 1-based labels, cluster centers, within-cluster SSQ."""

    labels: np.ndarray
    centers: np.ndarray
    inertia: float


def _squared_distances(points, centers):
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp_seed(points, k, rng):
    """k-means++ seeding: spread initial centers by squared-distance sampling."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = points[rng.integers(n)]
        else:
            centers[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(points, centers):
    labels = np.full(points.shape[0], -1)
    for _ in range(KMEANS_MAX_ITER):
        d2 = _squared_distances(points, centers)
        new_labels = d2.argmin(axis=1)
        for j in np.setdiff1d(np.arange(centers.shape[0]), new_labels):
            # re-seed an emptied cluster at the worst-served point
            far = d2[np.arange(points.shape[0]), new_labels].argmax()
            centers[j] = points[far]
            d2[:, j] = ((points - centers[j]) ** 2).sum(axis=1)
            new_labels = d2.argmin(axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(centers.shape[0]):
            centers[j] = points[labels == j].mean(axis=0)
    inertia = float(((points - centers[labels]) ** 2).sum())
    return labels, centers, inertia


def detect_communities(u: np.ndarray, k: int, restarts: int = 20, seed: int = 0) -> CommunityAssignment:
    """Cluster the rows of a factor matrix with restarted K-means.

    Parameters
    ----------
    u : ndarray, shape (n, r)
        Low-rank factor; each row represents one node.
    k : int
        Number of communities, at most n.
    restarts : int
        Independent k-means++ seedings; the run with the smallest
        within-cluster sum of squares wins (ties go to the earliest restart).
    seed : int
        Seeds the restart randomness.
    """
    u = np.asarray(u, dtype=float)
    if k < 1 or k > u.shape[0]:
        raise ValueError(f"cluster count {k} out of range for {u.shape[0]} nodes")
    if restarts < 1:
        raise ValueError("need at least one restart")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centers = _kmeans_pp_seed(u, k, rng)
        labels, centers, inertia = _lloyd(u, centers.copy())
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    labels, centers, inertia = best
    return CommunityAssignment(labels + 1, centers, inertia)


def inertia_profile(u: np.ndarray, k_values, restarts: int = 20, seed: int = 0):
    """Within-cluster sum of squares per candidate K, for elbow inspection."""
    return [(int(k), detect_communities(u, int(k), restarts, seed).inertia) for k in k_values]


def select_edges(b: np.ndarray, symmetric: bool = False) -> set:
    """Nonzero support of the slope tensor as (j, j', k) triples.

    Diagonal entries are never reported; symmetric fits report only the upper
    triangle (j < j').
    """
    b = np.asarray(b)
    idx = np.argwhere(b != 0)
    out = set()
    for j, jp, k in idx:
        if j == jp:
            continue
        if symmetric and j > jp:
            continue
        out.add((int(j), int(jp), int(k)))
    return out


def f1_support(est: set, truth: set) -> float:
    """F1 score ``2TP / (2TP + FP + FN)`` of a selected support; 1.0 when both empty."""
    est, truth = set(est), set(truth)
    if not est and not truth:
        return 1.0
    tp = len(est & truth)
    fp = len(est - truth)
    fn = len(truth - est)
    return 2.0 * tp / (2.0 * tp + fp + fn)


def nmi(a, b) -> float:
    """Normalized mutual information between two partitions.

    Uses the geometric-mean normalization ``I(a;b) / sqrt(H(a) H(b))`` from
    the empirical contingency table; 1.0 when both partitions are
    single-cluster, 0.0 when exactly one is.
    """
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"label vectors differ in length: {a.shape} vs {b.shape}")
    n = a.size
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    ka, kb = ia.max() + 1, ib.max() + 1
    counts = np.bincount(ia * kb + ib, minlength=ka * kb).reshape(ka, kb) / n
    pa = counts.sum(axis=1)
    pb = counts.sum(axis=0)
    ha = -float(np.sum(pa[pa > 0] * np.log(pa[pa > 0])))
    hb = -float(np.sum(pb[pb > 0] * np.log(pb[pb > 0])))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    mask = counts > 0
    info = float(np.sum(counts[mask] * np.log(counts[mask] / np.outer(pa, pb)[mask])))
    return float(np.clip(info / np.sqrt(ha * hb), 0.0, 1.0))


@dataclass
class ErrorReport:
    """Estimation errors against simulation ground truth, off-diagonal only."""

    mu_error: float
    mu_error_normalized: float
    theta_error: float
    b_error: float

    def as_dict(self) -> dict:
        return {
            "mu_error": self.mu_error,
            "mu_error_normalized": self.mu_error_normalized,
            "theta_error": self.theta_error,
            "b_error": self.b_error,
        }


def error_report(theta_hat: np.ndarray, b_hat: np.ndarray, truth, data) -> ErrorReport:
    """Errors of explicit estimates ``(theta_hat, b_hat)`` against ``truth``.

    The mean error is ``mean_i ||mu_i - mu_hat_i||_F`` with
    ``mu_hat_i = g^{-1}(theta_hat + b_hat x3 x_i)``; the normalized variant
    divides each subject's error by ``||mu_i||_F``. Subject-specific
    link-scale offsets in the truth (individual deviation protocols) are
    honored.
    """
    n = data.num_nodes
    theta_hat = np.asarray(theta_hat, dtype=float)
    b_hat = np.asarray(b_hat, dtype=float)
    if theta_hat.shape != (n, n):
        raise ValueError(f"theta shape {theta_hat.shape} does not match n={n}")
    if truth.theta_star.shape != (n, n) or b_hat.shape != truth.b_star.shape:
        raise ValueError("truth shapes do not match the estimates")
    off = ~np.eye(n, dtype=bool)
    inv = data.family.inv_link

    mu_sum = 0.0
    mu_norm_sum = 0.0
    for i in range(data.num_subjects):
        x = data.covariates[i]
        eta_true = truth.theta_star + mode3_product(truth.b_star, x)
        if truth.subject_offsets is not None:
            eta_true = eta_true + truth.subject_offsets[i]
        eta_hat = theta_hat + mode3_product(b_hat, x)
        diff = inv(eta_true)[off] - inv(eta_hat)[off]
        err = float(np.sqrt(np.sum(diff**2)))
        mu_sum += err
        scale = float(np.sqrt(np.sum(inv(eta_true)[off] ** 2)))
        mu_norm_sum += err / scale if scale > 0 else 0.0
    n_subj = data.num_subjects

    theta_err = float(np.sqrt(np.sum((truth.theta_star - theta_hat)[off] ** 2)))
    b_diff = truth.b_star - b_hat
    b_diff = b_diff[off, :] if b_diff.size else b_diff
    b_err = float(np.sqrt(np.sum(b_diff**2)))
    return ErrorReport(mu_sum / n_subj, mu_norm_sum / n_subj, theta_err, b_err)


def estimation_errors(fit: FitResult, truth, data) -> ErrorReport:
    """Errors of a completed fit against simulation ground truth."""
    return error_report(fit.theta(), fit.b, truth, data)
