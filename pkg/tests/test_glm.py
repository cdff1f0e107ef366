import numpy as np
import pytest
from scipy.special import expit

from netreg.glm import (
    DivergenceError,
    EdgeFamily,
    NetworkDataset,
    aug_loss,
    grad_b,
    grad_theta,
    grad_u,
    grad_v,
    neg_loglik,
)

FAMILIES = [
    EdgeFamily.bernoulli_logit(),
    EdgeFamily.poisson_log(),
    EdgeFamily.gaussian_identity(),
]


def random_dataset(rng, family, n=4, N=3, p=2, symmetric=False):
    """Small dataset drawn from the model itself so every family is exercised."""
    theta = 0.5 * rng.standard_normal((n, n))
    b = 0.3 * rng.standard_normal((n, n, p))
    x = rng.standard_normal((N, p))
    if symmetric:
        theta = (theta + theta.T) / 2
        b = (b + b.transpose(1, 0, 2)) / 2
    eta = theta[None] + np.einsum("jkl,il->ijk", b, x)
    if family.tag == "bernoulli-logit":
        a = (rng.random((N, n, n)) < expit(eta)).astype(float)
    elif family.tag == "poisson-log":
        a = rng.poisson(np.exp(eta)).astype(float)
    else:
        a = eta + rng.standard_normal((N, n, n))
    if symmetric:
        upper = np.triu(a, k=1)
        a = upper + upper.transpose(0, 2, 1)
    a[:, np.arange(n), np.arange(n)] = 0.0
    return NetworkDataset(a, x, family, symmetric=symmetric)


def loss_loop(data, theta, b):
    """Per-edge scalar GLM oracle: independent loop over subjects and entries."""
    A, X = data.adjacency, data.covariates
    N, n = A.shape[0], A.shape[1]
    total = 0.0
    for i in range(N):
        for j in range(n):
            for jp in range(n):
                if j == jp:
                    continue
                eta = theta[j, jp] + float(b[j, jp] @ X[i])
                total += A[i, j, jp] * eta - float(data.family.psi(eta))
    return -total / N


def fd_gradient(f, x0, step=1e-5):
    """Central finite differences of a scalar function of an array."""
    g = np.zeros_like(x0)
    it = np.nditer(x0, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x0.copy()
        xp[idx] += step
        xm = x0.copy()
        xm[idx] -= step
        g[idx] = (f(xp) - f(xm)) / (2 * step)
        it.iternext()
    return g


def rel_err(a, b):
    denom = max(np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


class TestEdgeFamily:
    def test_psi_prime_is_inverse_link(self):
        eta = np.linspace(-3, 3, 13)
        for fam in FAMILIES:
            mu = fam.psi_prime(eta)
            np.testing.assert_allclose(fam.link(mu), eta, atol=1e-10)

    def test_psi_double_positive(self):
        eta = np.linspace(-4, 4, 17)
        logit_dd = EdgeFamily.bernoulli_logit().psi_double(eta)
        assert np.all(logit_dd > 0.0) and np.all(logit_dd <= 0.25)
        p = expit(eta)
        np.testing.assert_allclose(logit_dd, p * (1 - p), atol=1e-12)
        assert np.all(EdgeFamily.poisson_log().psi_double(eta) > 0.0)

    def test_from_name_aliases(self):
        assert EdgeFamily.from_name("bernoulli").tag == "bernoulli-logit"
        assert EdgeFamily.from_name("Poisson-Log").tag == "poisson-log"
        assert EdgeFamily.from_name("gaussian").tag == "gaussian-identity"
        with pytest.raises(ValueError):
            EdgeFamily.from_name("cauchy")

    def test_dispersion_fixed_for_discrete(self):
        with pytest.raises(ValueError):
            EdgeFamily("bernoulli-logit", dispersion=2.0)


class TestNetworkDataset:
    def test_rejects_nonbinary_bernoulli(self):
        a = np.full((2, 3, 3), 0.5)
        with pytest.raises(ValueError):
            NetworkDataset(a, np.zeros((2, 1)), EdgeFamily.bernoulli_logit())

    def test_rejects_negative_counts(self):
        a = -np.ones((1, 3, 3))
        with pytest.raises(ValueError):
            NetworkDataset(a, np.zeros((1, 0)), EdgeFamily.poisson_log())

    def test_rejects_asymmetric_when_flagged(self):
        a = np.zeros((1, 3, 3))
        a[0, 0, 1] = 1.0
        with pytest.raises(ValueError):
            NetworkDataset(a, np.zeros((1, 0)), EdgeFamily.bernoulli_logit(), symmetric=True)

    def test_zero_covariates_allowed(self):
        a = np.zeros((2, 3, 3))
        d = NetworkDataset(a, np.zeros((2, 0)), EdgeFamily.bernoulli_logit())
        assert d.num_covariates == 0


class TestNegLoglik:
    def test_gaussian_closed_form(self):
        # theta equal to the single observed network, b = 0:
        # every off-diagonal term is A^2 - A^2/2
        rng = np.random.default_rng(0)
        a = rng.standard_normal((1, 5, 5))
        a[:, np.arange(5), np.arange(5)] = 0.0
        data = NetworkDataset(a, np.zeros((1, 2)), EdgeFamily.gaussian_identity())
        off = ~np.eye(5, dtype=bool)
        expected = -0.5 * float(np.sum(a[0][off] ** 2))
        got = neg_loglik(data, a[0], np.zeros((5, 5, 2)))
        assert abs(got - expected) < 1e-12

    def test_bernoulli_at_zero(self):
        n, N = 4, 3
        a = np.zeros((N, n, n))
        data = NetworkDataset(a, np.zeros((N, 0)), EdgeFamily.bernoulli_logit())
        got = neg_loglik(data, np.zeros((n, n)), np.zeros((n, n, 0)))
        assert abs(got - n * (n - 1) * np.log(2.0)) < 1e-12

    @pytest.mark.parametrize("family", FAMILIES, ids=lambda f: f.tag)
    def test_matches_per_edge_loop(self, family):
        rng = np.random.default_rng(42)
        data = random_dataset(rng, family)
        theta = 0.3 * rng.standard_normal((4, 4))
        b = 0.2 * rng.standard_normal((4, 4, 2))
        got = neg_loglik(data, theta, b)
        assert abs(got - loss_loop(data, theta, b)) < 1e-10

    def test_gaussian_difference_equals_least_squares(self):
        # identity link: loss differences reduce to half-sum-of-squares differences
        rng = np.random.default_rng(1)
        data = random_dataset(rng, EdgeFamily.gaussian_identity(), n=5, N=4, p=2)
        b = 0.1 * rng.standard_normal((5, 5, 2))
        t1 = rng.standard_normal((5, 5))
        t2 = rng.standard_normal((5, 5))
        off = ~np.eye(5, dtype=bool)

        def half_ss(theta):
            eta = theta[None] + np.einsum("jkl,il->ijk", b, data.covariates)
            resid = data.adjacency - eta
            return 0.5 * float(np.sum(resid[:, off] ** 2)) / data.num_subjects

        lhs = neg_loglik(data, t1, b) - neg_loglik(data, t2, b)
        rhs = half_ss(t1) - half_ss(t2)
        assert abs(lhs - rhs) < 1e-8

    def test_log_link_guard(self):
        a = np.ones((1, 3, 3))
        a[:, np.arange(3), np.arange(3)] = 0.0
        data = NetworkDataset(a, np.zeros((1, 0)), EdgeFamily.poisson_log())
        theta = np.zeros((3, 3))
        theta[0, 1] = 60.0
        with pytest.raises(DivergenceError):
            neg_loglik(data, theta, np.zeros((3, 3, 0)))


class TestGradients:
    def test_gaussian_stationary_point(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((1, 4, 4))
        a[:, np.arange(4), np.arange(4)] = 0.0
        data = NetworkDataset(a, np.zeros((1, 1)), EdgeFamily.gaussian_identity())
        g = grad_theta(data, a[0], np.zeros((4, 4, 1)))
        assert np.abs(g).max() < 1e-12

    def test_bernoulli_all_ones_at_zero(self):
        a = np.ones((3, 4, 4))
        a[:, np.arange(4), np.arange(4)] = 0.0
        data = NetworkDataset(a, np.zeros((3, 2)), EdgeFamily.bernoulli_logit())
        g = grad_theta(data, np.zeros((4, 4)), np.zeros((4, 4, 2)))
        off = ~np.eye(4, dtype=bool)
        np.testing.assert_allclose(g[off], -0.5, atol=1e-12)
        assert np.all(np.diag(g) == 0.0)

    def test_zero_covariates_zero_grad_b(self):
        rng = np.random.default_rng(3)
        data = random_dataset(rng, EdgeFamily.bernoulli_logit())
        data.covariates[:] = 0.0
        g = grad_b(data, np.zeros((4, 4)), np.zeros((4, 4, 2)))
        assert np.all(g == 0.0)

    def test_duplicated_covariate_duplicates_slices(self):
        rng = np.random.default_rng(4)
        data = random_dataset(rng, EdgeFamily.bernoulli_logit(), p=2)
        data.covariates[:, 1] = data.covariates[:, 0]
        theta = 0.2 * rng.standard_normal((4, 4))
        b = np.zeros((4, 4, 2))
        g = grad_b(data, theta, b)
        np.testing.assert_allclose(g[:, :, 0], g[:, :, 1], atol=1e-14)

    @pytest.mark.parametrize("family", FAMILIES, ids=lambda f: f.tag)
    def test_grad_theta_finite_differences(self, family):
        rng = np.random.default_rng(5)
        data = random_dataset(rng, family, n=4, N=3, p=2)
        theta = 0.3 * rng.standard_normal((4, 4))
        b = 0.2 * rng.standard_normal((4, 4, 2))
        fd = fd_gradient(lambda t: neg_loglik(data, t, b), theta)
        got = grad_theta(data, theta, b)
        assert rel_err(got, fd) < 1e-5
        assert np.all(np.diag(got) == 0.0)

    @pytest.mark.parametrize("family", FAMILIES, ids=lambda f: f.tag)
    def test_grad_b_finite_differences(self, family):
        rng = np.random.default_rng(6)
        data = random_dataset(rng, family, n=4, N=3, p=2)
        theta = 0.3 * rng.standard_normal((4, 4))
        b = 0.2 * rng.standard_normal((4, 4, 2))
        fd = fd_gradient(lambda t: neg_loglik(data, theta, t), b)
        got = grad_b(data, theta, b)
        assert rel_err(got, fd) < 1e-5
        assert np.all(got[np.arange(4), np.arange(4), :] == 0.0)

    @pytest.mark.parametrize("family", FAMILIES, ids=lambda f: f.tag)
    def test_factor_gradients_finite_differences(self, family):
        rng = np.random.default_rng(7)
        data = random_dataset(rng, family, n=4, N=3, p=2)
        u = 0.5 * rng.standard_normal((4, 2))
        v = 0.5 * rng.standard_normal((4, 2))
        b = 0.2 * rng.standard_normal((4, 4, 2))
        fd_u = fd_gradient(lambda t: aug_loss(data, t, v, b), u)
        fd_v = fd_gradient(lambda t: aug_loss(data, u, t, b), v)
        assert rel_err(grad_u(data, u, v, b), fd_u) < 1e-5
        assert rel_err(grad_v(data, u, v, b), fd_v) < 1e-5

    def test_joint_stationarity(self):
        # u = v and zero intercept gradient makes both factor gradients vanish
        rng = np.random.default_rng(8)
        n = 4
        u = rng.standard_normal((n, 2))
        theta = u @ u.T
        a = np.repeat(theta[None], 2, axis=0)
        a[:, np.arange(n), np.arange(n)] = 0.0
        data = NetworkDataset(a, np.zeros((2, 0)), EdgeFamily.gaussian_identity())
        b = np.zeros((n, n, 0))
        assert np.abs(grad_theta(data, theta, b)).max() < 1e-12
        assert np.abs(grad_u(data, u, u, b)).max() < 1e-12
        assert np.abs(grad_v(data, u, u, b)).max() < 1e-12

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(9)
        data = random_dataset(rng, EdgeFamily.bernoulli_logit())
        u = rng.standard_normal((4, 2))
        v = rng.standard_normal((4, 2))
        b = 0.1 * rng.standard_normal((4, 4, 2))
        q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        gu = grad_u(data, u, v, b)
        gv = grad_v(data, u, v, b)
        np.testing.assert_allclose(grad_u(data, u @ q, v @ q, b), gu @ q, atol=1e-10)
        np.testing.assert_allclose(grad_v(data, u @ q, v @ q, b), gv @ q, atol=1e-10)


class TestAugLoss:
    def test_balanced_factors_no_penalty(self):
        rng = np.random.default_rng(10)
        data = random_dataset(rng, EdgeFamily.bernoulli_logit())
        u = rng.standard_normal((4, 2))
        b = np.zeros((4, 4, 2))
        assert abs(aug_loss(data, u, u, b) - neg_loglik(data, u @ u.T, b)) < 1e-12

    def test_imbalance_penalized_theta_invariant(self):
        rng = np.random.default_rng(11)
        data = random_dataset(rng, EdgeFamily.bernoulli_logit())
        w = rng.standard_normal((4, 2))
        b = np.zeros((4, 4, 2))
        balanced = aug_loss(data, w, w, b)
        skewed = aug_loss(data, 2.0 * w, 0.5 * w, b)
        # same theta, so the loss part matches and the gap is pure penalty
        assert skewed > balanced
        assert abs((skewed - balanced) - (np.sum((4.0 * w.T @ w - 0.25 * w.T @ w) ** 2) / 8.0)) < 1e-8

    def test_compositional(self):
        rng = np.random.default_rng(12)
        data = random_dataset(rng, EdgeFamily.poisson_log())
        u = 0.4 * rng.standard_normal((4, 2))
        v = 0.4 * rng.standard_normal((4, 2))
        b = 0.1 * rng.standard_normal((4, 4, 2))
        expected = neg_loglik(data, u @ v.T, b) + np.sum((u.T @ u - v.T @ v) ** 2) / 8.0
        assert abs(aug_loss(data, u, v, b) - expected) < 1e-10

    def test_rotation_invariance(self):
        rng = np.random.default_rng(13)
        data = random_dataset(rng, EdgeFamily.bernoulli_logit())
        u = rng.standard_normal((4, 2))
        v = rng.standard_normal((4, 2))
        b = 0.1 * rng.standard_normal((4, 4, 2))
        q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        assert abs(aug_loss(data, u, v, b) - aug_loss(data, u @ q, v @ q, b)) < 1e-10
