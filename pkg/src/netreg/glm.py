"""Exponential-family links and the population network likelihood.

The model for subject i is ``g(E[A_i | x_i]) = theta + b x3 x_i`` applied
entry-wise, with a canonical link g, so the cumulant derivative satisfies
``psi' = g^{-1}``. The loss is the negative log-likelihood averaged over
subjects and summed over off-diagonal entries; diagonal entries never enter
the loss or any gradient.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

BERNOULLI_LOGIT = "bernoulli-logit"
POISSON_LOG = "poisson-log"
GAUSSIAN_IDENTITY = "gaussian-identity"

_FAMILY_ALIASES = {
    "bernoulli": BERNOULLI_LOGIT,
    "logit": BERNOULLI_LOGIT,
    "binary": BERNOULLI_LOGIT,
    "poisson": POISSON_LOG,
    "log": POISSON_LOG,
    "count": POISSON_LOG,
    "gaussian": GAUSSIAN_IDENTITY,
    "identity": GAUSSIAN_IDENTITY,
    "normal": GAUSSIAN_IDENTITY,
}

# |eta| beyond this under the log link means exp(eta) is useless numerically
ETA_GUARD = 50.0


class DivergenceError(RuntimeError):
    """A fit left the numerically safe region (non-finite objective or predictor)."""


@dataclass(frozen=True)
class EdgeFamily:
    """Edge distribution with its canonical link and cumulant function."""

    tag: str
    dispersion: float = 1.0

    def __post_init__(self):
        if self.tag not in (BERNOULLI_LOGIT, POISSON_LOG, GAUSSIAN_IDENTITY):
            raise ValueError(f"unknown edge family {self.tag!r}")
        if self.dispersion <= 0:
            raise ValueError("dispersion must be positive")
        if self.tag != GAUSSIAN_IDENTITY and self.dispersion != 1.0:
            raise ValueError(f"dispersion is fixed at 1 for {self.tag}")

    @classmethod
    def from_name(cls, name: str) -> "EdgeFamily":
        key = name.strip().lower()
        tag = _FAMILY_ALIASES.get(key, key)
        return cls(tag)

    @classmethod
    def bernoulli_logit(cls) -> "EdgeFamily":
        return cls(BERNOULLI_LOGIT)

    @classmethod
    def poisson_log(cls) -> "EdgeFamily":
        return cls(POISSON_LOG)

    @classmethod
    def gaussian_identity(cls) -> "EdgeFamily":
        return cls(GAUSSIAN_IDENTITY)

    def psi(self, eta):
        """Cumulant function evaluated entry-wise."""
        if self.tag == BERNOULLI_LOGIT:
            return np.logaddexp(0.0, eta)
        if self.tag == POISSON_LOG:
            return np.exp(eta)
        return 0.5 * np.square(eta)

    def psi_prime(self, eta):
        """Mean function, equals the inverse link for canonical families."""
        if self.tag == BERNOULLI_LOGIT:
            return expit(eta)
        if self.tag == POISSON_LOG:
            return np.exp(eta)
        return np.asarray(eta, dtype=float)

    def psi_double(self, eta):
        """Variance function (second cumulant derivative)."""
        if self.tag == BERNOULLI_LOGIT:
            p = expit(eta)
            return p * (1.0 - p)
        if self.tag == POISSON_LOG:
            return np.exp(eta)
        return np.ones_like(np.asarray(eta, dtype=float))

    def link(self, mu):
        if self.tag == BERNOULLI_LOGIT:
            return logit(mu)
        if self.tag == POISSON_LOG:
            return np.log(mu)
        return np.asarray(mu, dtype=float)

    def inv_link(self, eta):
        return self.psi_prime(eta)

    def check_adjacency(self, a: np.ndarray):
        """Raise if the observed edges are incompatible with the family."""
        if self.tag == BERNOULLI_LOGIT:
            if not np.all((a == 0.0) | (a == 1.0)):
                raise ValueError("Bernoulli family requires 0/1 adjacency entries")
        elif self.tag == POISSON_LOG:
            if np.any(a < 0.0) or not np.all(a == np.rint(a)):
                raise ValueError("Poisson family requires nonnegative integer entries")


@dataclass
class NetworkDataset:
    """A population of adjacency matrices with per-subject covariates.

    Parameters
    ----------
    adjacency : ndarray, shape (N, n, n)
        One adjacency matrix per subject over a shared node set.
    covariates : ndarray, shape (N, p)
        Subject covariate rows; p may be zero.
    family : EdgeFamily
        Edge distribution and link.
    symmetric : bool
        Declares every network undirected (checked on construction).
    """

    adjacency: np.ndarray
    covariates: np.ndarray
    family: EdgeFamily
    symmetric: bool = False

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=float)
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.adjacency.ndim != 3 or self.adjacency.shape[1] != self.adjacency.shape[2]:
            raise ValueError(f"adjacency must be (N, n, n), got {self.adjacency.shape}")
        if self.covariates.ndim != 2 or self.covariates.shape[0] != self.adjacency.shape[0]:
            raise ValueError(
                f"covariates {self.covariates.shape} do not match "
                f"{self.adjacency.shape[0]} subjects"
            )
        if not np.all(np.isfinite(self.adjacency)):
            raise ValueError("adjacency entries must be finite")
        if not np.all(np.isfinite(self.covariates)):
            raise ValueError("covariate entries must be finite")
        self.family.check_adjacency(self.adjacency)
        if self.symmetric and not np.array_equal(
            self.adjacency, self.adjacency.transpose(0, 2, 1)
        ):
            raise ValueError("symmetric flag set but some network is not symmetric")

    @property
    def num_subjects(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[1]

    @property
    def num_covariates(self) -> int:
        return self.covariates.shape[1]


def covariate_effects(b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Stacked per-subject mode-3 products ``b x3 x_i``, shape (N, n, n)."""
    return np.einsum("jkl,il->ijk", b, x)


def _zero_diagonal(stack: np.ndarray) -> np.ndarray:
    n = stack.shape[-1]
    stack[..., np.arange(n), np.arange(n)] = 0.0
    return stack


def _check_shapes(data: NetworkDataset, theta: np.ndarray, b: np.ndarray):
    n, p = data.num_nodes, data.num_covariates
    if theta.shape != (n, n):
        raise ValueError(f"theta shape {theta.shape} does not match n={n}")
    if b.shape != (n, n, p):
        raise ValueError(f"slope tensor shape {b.shape} does not match (n, n, p)=({n}, {n}, {p})")


def _loss_terms(data, theta, bx, want_loss=True, want_resid=True):
    """Shared loss/gradient pieces at linear predictor ``theta + bx``.

    Returns ``(loss, resid)`` where ``resid = A - psi'(eta)`` with zeroed
    diagonals; either element is None when not requested. Raises
    DivergenceError when the log link sees an unsafe predictor.
    """
    eta = theta[None, :, :] + bx
    if data.family.tag == POISSON_LOG:
        off = ~np.eye(data.num_nodes, dtype=bool)
        m = np.abs(eta[:, off]).max() if eta.size else 0.0
        if m > ETA_GUARD:
            raise DivergenceError(
                f"linear predictor magnitude {m:.2f} exceeds {ETA_GUARD} under the log link"
            )
    loss = None
    if want_loss:
        contrib = data.adjacency * eta - data.family.psi(eta)
        _zero_diagonal(contrib)
        loss = -float(contrib.sum()) / data.num_subjects
    resid = None
    if want_resid:
        resid = data.adjacency - data.family.psi_prime(eta)
        _zero_diagonal(resid)
    return loss, resid


def neg_loglik(data: NetworkDataset, theta: np.ndarray, b: np.ndarray) -> float:
    """Negative log-likelihood of ``(theta, b)``, averaged over subjects.

    Sums ``A_jj' eta_jj' - psi(eta_jj')`` over ordered pairs j != j' and
    negates; symmetric networks therefore count each undirected edge twice.
    """
    _check_shapes(data, theta, b)
    bx = covariate_effects(b, data.covariates)
    loss, _ = _loss_terms(data, theta, bx, want_resid=False)
    return loss


def grad_theta(data: NetworkDataset, theta: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient of the loss in the intercept matrix; diagonal exactly zero."""
    _check_shapes(data, theta, b)
    bx = covariate_effects(b, data.covariates)
    _, resid = _loss_terms(data, theta, bx, want_loss=False)
    return -resid.mean(axis=0)


def grad_b(data: NetworkDataset, theta: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient of the loss in the slope tensor; diagonal fibers exactly zero."""
    _check_shapes(data, theta, b)
    bx = covariate_effects(b, data.covariates)
    _, resid = _loss_terms(data, theta, bx, want_loss=False)
    return -np.einsum("il,ijk->jkl", data.covariates, resid) / data.num_subjects


def balance_penalty(u: np.ndarray, v: np.ndarray) -> float:
    """Factor balance regularizer ``||u'u - v'v||_F^2 / 8``."""
    gap = u.T @ u - v.T @ v
    return float(np.sum(gap * gap)) / 8.0


def aug_loss(data: NetworkDataset, u: np.ndarray, v: np.ndarray, b: np.ndarray) -> float:
    """Loss at ``theta = u v'`` plus the balance regularizer."""
    if u.shape != v.shape:
        raise ValueError(f"factor shapes differ: {u.shape} vs {v.shape}")
    return neg_loglik(data, u @ v.T, b) + balance_penalty(u, v)


def grad_u(data: NetworkDataset, u: np.ndarray, v: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient of the augmented loss in the left factor."""
    if u.shape != v.shape:
        raise ValueError(f"factor shapes differ: {u.shape} vs {v.shape}")
    g = grad_theta(data, u @ v.T, b)
    return g @ v + u @ ((u.T @ u - v.T @ v) / 2.0)


def grad_v(data: NetworkDataset, u: np.ndarray, v: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient of the augmented loss in the right factor."""
    if u.shape != v.shape:
        raise ValueError(f"factor shapes differ: {u.shape} vs {v.shape}")
    g = grad_theta(data, u @ v.T, b)
    return g.T @ u + v @ ((v.T @ v - u.T @ u) / 2.0)


def grad_u_sym(data: NetworkDataset, u: np.ndarray, lam: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient in u of the plain loss at ``theta = u diag(lam) u'``."""
    t = (u * lam) @ u.T
    g = grad_theta(data, (t + t.T) / 2.0, b)
    return ((g + g.T) @ u) * lam
