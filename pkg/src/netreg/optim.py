"""Alternating gradient descent for the low-rank plus sparse network model.

Two fitting routines share the same skeleton: spectral initialization from the
averaged network, fixed-step gradient updates of the intercept factors, and a
truncated gradient step on the slope tensor that enforces the hard sparsity
budget at every iterate. The asymmetric routine optimizes the augmented
objective (loss plus factor balance penalty) over ``theta = u v'``; the
symmetric routine optimizes the plain loss over ``theta = u diag(lam) u'``
with the sign pattern ``lam`` recovered once from an asymmetric solve.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from netreg.glm import (
    GAUSSIAN_IDENTITY,
    POISSON_LOG,
    DivergenceError,
    NetworkDataset,
    balance_penalty,
    covariate_effects,
    _loss_terms,
)
from netreg.tensor import frobenius, svd_r, truncate, truncate_symmetric

ASYMMETRIC = "asymmetric"
SYMMETRIC = "symmetric"

# default step constants, scaled by the estimated curvature bound nu2 (the
# cumulant second derivative at the initialization) and, for the factor step,
# by the top initialization singular value
DELTA_SCALE = 0.125
TAU_SCALE = 0.25
MAX_STEP_HALVINGS = 3


@dataclass(frozen=True)
class Hyperparams:
    """Tuning knobs of a single fit.

    Step sizes of None resolve to curvature-scaled defaults:
    ``delta = 0.125 / (nu2 * sigma1)`` and ``tau = 0.25 / nu2``, where
    ``sigma1`` is the largest singular value of the initialization target and
    ``nu2`` bounds the cumulant second derivative (0.25 for the logit link,
    1 for the identity link, estimated at the initialization for the log
    link).
    """

    rank: int
    sparsity: int = 0
    step_delta: float | None = None
    step_tau: float | None = None
    max_iter: int = 200
    tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if self.sparsity < 0:
            raise ValueError("sparsity must be nonnegative")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.step_delta is not None and self.step_delta <= 0:
            raise ValueError("step_delta must be positive")
        if self.step_tau is not None and self.step_tau <= 0:
            raise ValueError("step_tau must be positive")


@dataclass
class FactorModel:
    """Factored intercept matrix: ``u v'`` or ``u diag(lam) u'``."""

    mode: str
    u: np.ndarray
    v: np.ndarray | None = None
    lam: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in (ASYMMETRIC, SYMMETRIC):
            raise ValueError(f"unknown factor mode {self.mode!r}")
        if self.mode == ASYMMETRIC and (self.v is None or self.v.shape != self.u.shape):
            raise ValueError("asymmetric mode needs matching u and v factors")
        if self.mode == SYMMETRIC:
            if self.lam is None or self.lam.shape != (self.u.shape[1],):
                raise ValueError("symmetric mode needs a sign vector of length rank")
            if not np.all(np.abs(self.lam) == 1.0):
                raise ValueError("sign vector entries must be +1 or -1")

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    def theta(self) -> np.ndarray:
        """Reconstructed intercept; exactly symmetric in symmetric mode."""
        if self.mode == ASYMMETRIC:
            return self.u @ self.v.T
        t = (self.u * self.lam) @ self.u.T
        return (t + t.T) / 2.0

    def stacked(self) -> np.ndarray:
        """Factor stack used by the distance diagnostic."""
        if self.mode == ASYMMETRIC:
            return np.vstack([self.u, self.v])
        return self.u


@dataclass
class FitResult:
    factors: FactorModel
    b: np.ndarray
    objective_trace: list[float] = field(repr=False)
    iterations: int
    converged: bool
    hyper: Hyperparams

    def theta(self) -> np.ndarray:
        return self.factors.theta()


def sparsity_from_fraction(s0: float, n: int, p: int) -> int:
    """Sparsity budget from a fraction of the off-diagonal slot count n(n-1)p."""
    if s0 < 0:
        raise ValueError("sparsity fraction must be nonnegative")
    return int(math.floor(s0 * n * (n - 1) * p))


def _init_target(data: NetworkDataset) -> np.ndarray:
    """Averaged network mapped through the link, clipped into its open domain.

    The clip width 1/(2N) vanishes with the sample size, keeping the spectral
    initialization finite when averaged edges sit at the domain boundary.
    """
    if data.num_subjects == 0:
        raise ValueError("cannot initialize from an empty dataset")
    abar = data.adjacency.mean(axis=0)
    eps = 1.0 / (2.0 * data.num_subjects)
    tag = data.family.tag
    if tag == GAUSSIAN_IDENTITY:
        return abar
    if tag == POISSON_LOG:
        return np.log(np.maximum(abar, eps))
    return np.log(np.clip(abar, eps, 1.0 - eps) / (1.0 - np.clip(abar, eps, 1.0 - eps)))


def init_asym(data: NetworkDataset, r: int):
    """Spectral initialization: balanced factors of the linked average network.

    Returns ``(u0, v0, b0)`` with ``u0 v0'`` the best rank-r approximation of
    the clipped link-scale average and ``b0`` all zeros.
    """
    n = data.num_nodes
    if r > n:
        raise ValueError(f"rank {r} exceeds the node count {n}")
    target = _init_target(data)
    u, sigma, v = svd_r(target, r)
    root = np.sqrt(sigma)
    u0 = u * root
    v0 = v * root
    b0 = np.zeros((n, n, data.num_covariates))
    return u0, v0, b0


def _init_sigma1(data: NetworkDataset) -> float:
    """Largest singular value of the initialization target."""
    sv = np.linalg.svd(_init_target(data), compute_uv=False)
    return float(sv[0]) if sv.size else 0.0


def _curvature_bound(data: NetworkDataset) -> float:
    """Bound nu2 on the cumulant second derivative near the initialization."""
    tag = data.family.tag
    if tag == GAUSSIAN_IDENTITY:
        return 1.0
    if tag == POISSON_LOG:
        target = _init_target(data)
        off = ~np.eye(data.num_nodes, dtype=bool)
        return max(float(np.exp(target[off]).max()), 1e-2)
    return 0.25  # global bound for the logit link


def _resolve_steps(data: NetworkDataset, hyper: Hyperparams, sigma1: float):
    delta, tau = hyper.step_delta, hyper.step_tau
    if delta is not None and tau is not None:
        return delta, tau
    nu2 = _curvature_bound(data)
    if delta is None:
        delta = DELTA_SCALE / (nu2 * max(sigma1, 1e-12))
    if tau is None:
        tau = TAU_SCALE / nu2
    return delta, tau


def _check_obj(obj: float):
    if not np.isfinite(obj):
        raise DivergenceError(f"objective became non-finite ({obj})")


def _run_asym(data, hyper, u0, v0, b0, delta, tau):
    X = data.covariates
    N = data.num_subjects
    u, v, b = u0.copy(), v0.copy(), b0.copy()
    bx = covariate_effects(b, X)
    obj, _ = _loss_terms(data, u @ v.T, bx, want_resid=False)
    obj += balance_penalty(u, v)
    _check_obj(obj)
    trace = [obj]
    converged = False
    for _ in range(hyper.max_iter):
        _, resid = _loss_terms(data, u @ v.T, bx, want_loss=False)
        g = -resid.mean(axis=0)
        u_new = u - delta * (g @ v + u @ ((u.T @ u - v.T @ v) / 2.0))

        _, resid = _loss_terms(data, u_new @ v.T, bx, want_loss=False)
        g = -resid.mean(axis=0)
        v = v - delta * (g.T @ u_new + v @ ((v.T @ v - u_new.T @ u_new) / 2.0))
        u = u_new

        _, resid = _loss_terms(data, u @ v.T, bx, want_loss=False)
        gb = -np.einsum("il,ijk->jkl", X, resid) / N
        b = truncate(b - tau * gb, hyper.sparsity)
        bx = covariate_effects(b, X)

        loss, _ = _loss_terms(data, u @ v.T, bx, want_resid=False)
        obj = loss + balance_penalty(u, v)
        _check_obj(obj)
        trace.append(obj)
        if abs(trace[-1] - trace[-2]) < hyper.tol:
            converged = True
            break
    factors = FactorModel(ASYMMETRIC, u, v)
    return FitResult(factors, b, trace, len(trace) - 1, converged, hyper)


def _run_sym(data, hyper, u0, lam, b0, delta, tau):
    X = data.covariates
    N = data.num_subjects
    u, b = u0.copy(), b0.copy()

    def theta_of(m):
        t = (m * lam) @ m.T
        return (t + t.T) / 2.0

    bx = covariate_effects(b, X)
    obj, _ = _loss_terms(data, theta_of(u), bx, want_resid=False)
    _check_obj(obj)
    trace = [obj]
    converged = False
    for _ in range(hyper.max_iter):
        _, resid = _loss_terms(data, theta_of(u), bx, want_loss=False)
        g = -resid.mean(axis=0)
        u = u - delta * (((g + g.T) @ u) * lam)

        _, resid = _loss_terms(data, theta_of(u), bx, want_loss=False)
        gb = -np.einsum("il,ijk->jkl", X, resid) / N
        gb = (gb + gb.transpose(1, 0, 2)) / 2.0
        b = truncate_symmetric(b - tau * gb, hyper.sparsity)
        bx = covariate_effects(b, X)

        obj, _ = _loss_terms(data, theta_of(u), bx, want_resid=False)
        _check_obj(obj)
        trace.append(obj)
        if abs(trace[-1] - trace[-2]) < hyper.tol:
            converged = True
            break
    factors = FactorModel(SYMMETRIC, u, lam=lam.copy())
    return FitResult(factors, b, trace, len(trace) - 1, converged, hyper)


def _with_step_halving(runner, delta0, tau0):
    """Run a fit, halving both steps and restarting on divergence."""
    delta, tau = delta0, tau0
    attempts = []
    for _ in range(1 + MAX_STEP_HALVINGS):
        try:
            return runner(delta, tau)
        except DivergenceError as err:
            attempts.append((delta, tau, str(err)))
            delta, tau = delta / 2.0, tau / 2.0
    history = "; ".join(f"delta={d:.3g}, tau={t:.3g}: {m}" for d, t, m in attempts)
    raise DivergenceError(f"fit diverged after step halvings [{history}]")


def fit_asym(data: NetworkDataset, hyper: Hyperparams) -> FitResult:
    """Alternating descent on the augmented objective over ``theta = u v'``.

    Each iteration takes a gradient step in u, then in v against the updated
    u, then a truncated gradient step in the slope tensor. Stops when the
    successive objective difference drops below ``hyper.tol``. A non-finite
    objective triggers step halving and a restart from the initialization, up
    to three times, before divergence is reported.
    """
    u0, v0, b0 = init_asym(data, hyper.rank)
    sigma1 = float(u0[:, 0] @ u0[:, 0])
    delta, tau = _resolve_steps(data, hyper, sigma1)
    return _with_step_halving(
        lambda d, t: _run_asym(data, hyper, u0, v0, b0, d, t), delta, tau
    )


def init_sym(data: NetworkDataset, hyper: Hyperparams):
    """Symmetric-mode initialization via a full asymmetric solve.

    Recovers the eigenvalue sign pattern from column-wise factor alignment,
    ``lam_i = sign(u~_i . v~_i)``, and folds the factors into a single one,
    ``u0 = (u~ + v~ diag(lam)) / 2``. Returns ``(u0, lam, b0)``.
    """
    if not data.symmetric:
        raise ValueError("symmetric initialization requires symmetric data")
    pre = fit_asym(data, hyper)
    ut, vt = pre.factors.u, pre.factors.v
    dots = np.sum(ut * vt, axis=0)
    lam = np.where(dots >= 0.0, 1.0, -1.0)
    u0 = (ut + vt * lam) / 2.0
    # project the warm-started tensor into the symmetric class, same budget
    b_sym = (pre.b + pre.b.transpose(1, 0, 2)) / 2.0
    b0 = truncate_symmetric(b_sym, hyper.sparsity)
    return u0, lam, b0


def fit_sym(data: NetworkDataset, hyper: Hyperparams) -> FitResult:
    """Alternating descent on the plain loss over ``theta = u diag(lam) u'``.

    The sign pattern is fixed at its initialization value. The slope-tensor
    gradient is symmetrized and truncation keeps mirrored entry pairs, so the
    symmetric model class is preserved at every iterate.
    """
    if not data.symmetric:
        raise ValueError("symmetric fit requires symmetric data")
    u0, lam, b0 = init_sym(data, hyper)
    delta, tau = _resolve_steps(data, hyper, _init_sigma1(data))
    return _with_step_halving(
        lambda d, t: _run_sym(data, hyper, u0, lam, b0, d, t), delta, tau
    )


def distance_d(
    m: FactorModel,
    m_star: FactorModel,
    b: np.ndarray,
    b_star: np.ndarray,
    sigma1: float,
) -> float:
    """Rotation-invariant squared distance between factor stacks plus tensors.

    The factor part minimizes ``||M - M* Q||_F`` over orthonormal Q (the
    orthogonal Procrustes solution); the tensor part is a squared Frobenius
    distance scaled by ``1/sigma1``.
    """
    if m.mode != m_star.mode:
        raise ValueError("factor modes differ")
    big = m.stacked()
    big_star = m_star.stacked()
    if big.shape != big_star.shape:
        raise ValueError(f"factor shapes differ: {big.shape} vs {big_star.shape}")
    sv = np.linalg.svd(big_star.T @ big, compute_uv=False)
    d2 = float(np.sum(big * big) + np.sum(big_star * big_star) - 2.0 * np.sum(sv))
    d2 = max(d2, 0.0)
    return d2 + frobenius(b - b_star) ** 2 / sigma1


def _ebic_from_loss(loss: float, n: int, num_subjects: int, p: int, rank: int, sparsity: int) -> float:
    penalty = math.log(n * n * num_subjects) + math.log(n * n * (p + 1))
    return 2.0 * num_subjects * loss + penalty * (2 * n * rank + sparsity)


def ebic(fit: FitResult, data: NetworkDataset) -> float:
    """Extended BIC of a completed fit: ``2 N loss + [log(n^2 N) + log(n^2 (p+1))] (2 n r + s)``."""
    bx = covariate_effects(fit.b, data.covariates)
    loss, _ = _loss_terms(data, fit.theta(), bx, want_resid=False)
    return _ebic_from_loss(
        loss, data.num_nodes, data.num_subjects, data.num_covariates,
        fit.hyper.rank, fit.hyper.sparsity,
    )


@dataclass
class GridCell:
    """One (rank, sparsity fraction) cell of a tuning sweep."""

    rank: int
    s0: float
    sparsity: int
    loss: float
    ebic: float
    converged: bool
    iterations: int
    error: str | None = None


def tune(
    data: NetworkDataset,
    rank_grid,
    sparsity_grid,
    hyper_template: Hyperparams,
):
    """Fit every (rank, sparsity fraction) pair and pick the minimum-eBIC cell.

    Ties break toward smaller rank, then smaller sparsity. Cells whose fit
    diverges are recorded in the grid report and skipped. Returns
    ``(best FitResult, list of GridCell)``.
    """
    ranks = sorted(set(int(r) for r in rank_grid))
    fractions = sorted(set(float(s) for s in sparsity_grid))
    if not ranks or not fractions:
        raise ValueError("tuning grids must be nonempty")
    n, p = data.num_nodes, data.num_covariates
    fitter = fit_sym if data.symmetric else fit_asym
    cells = []
    best_fit = None
    best_ebic = np.inf
    for r in ranks:
        for s0 in fractions:
            s = sparsity_from_fraction(s0, n, p)
            hyper = replace(hyper_template, rank=r, sparsity=s)
            try:
                fit = fitter(data, hyper)
            except DivergenceError as err:
                cells.append(GridCell(r, s0, s, np.nan, np.nan, False, 0, str(err)))
                continue
            bx = covariate_effects(fit.b, data.covariates)
            loss, _ = _loss_terms(data, fit.theta(), bx, want_resid=False)
            crit = _ebic_from_loss(loss, n, data.num_subjects, p, r, s)
            cells.append(GridCell(r, s0, s, loss, crit, fit.converged, fit.iterations))
            if crit < best_ebic:
                best_ebic = crit
                best_fit = fit
    if best_fit is None:
        raise DivergenceError("every cell of the tuning grid diverged")
    return best_fit, cells
