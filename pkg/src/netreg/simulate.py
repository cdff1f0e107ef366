"""Ground-truth generators and the replication harness.

Four logit-Bernoulli protocols over undirected networks: the native low-rank
plus sparse model, a shared-plus-individual deviation model, a stochastic
block model, and an additive-plus-multiplicative latent factor model. Every
generator is a pure function of its configuration, so a fixed seed gives a
bit-identical dataset; replication r of a study draws its stream from the
pair (seed, r).
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from netreg.analysis import detect_communities, error_report, f1_support, nmi, select_edges
from netreg.glm import EdgeFamily, NetworkDataset
from netreg.optim import Hyperparams, fit_asym, fit_sym, tune

PROTOCOLS = ("glsnet", "cise", "sbm", "latent_factor")


@dataclass
class SimConfig:
    """Parameters of one simulated study.

    ``s0`` is the nonzero fraction of off-diagonal slope entries; ``w`` and
    ``between`` are the within/between block probabilities of the ``sbm``
    protocol; ``K`` counts blocks (sbm) or latent factors (latent_factor).
    """

    protocol: str
    n: int
    N: int
    p: int = 0
    r: int = 2
    s0: float = 0.0
    signal: float = 2.0
    w: float = 0.5
    between: float = 0.1
    K: int = 3
    community_sizes: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.n < 2 or self.N < 1:
            raise ValueError("need at least two nodes and one subject")
        if self.community_sizes is not None:
            self.community_sizes = tuple(int(c) for c in self.community_sizes)


@dataclass
class SimTruth:
    """Ground truth retained for scoring a fit.

    ``support`` holds upper-triangle (j, j', k) triples; ``subject_offsets``
    carries per-subject link-scale deviations when the protocol has them.
    """

    theta_star: np.ndarray
    b_star: np.ndarray
    support: set
    sigma1: float
    communities: np.ndarray | None = None
    subject_offsets: list | None = None


def _top_singular_value(m: np.ndarray) -> float:
    return float(np.linalg.svd(m, compute_uv=False)[0])


def _zero_diag(m: np.ndarray) -> np.ndarray:
    out = m.copy()
    np.fill_diagonal(out, 0.0)
    return out


def _sample_symmetric_bernoulli(rng, probs: np.ndarray) -> np.ndarray:
    """Draw symmetric 0/1 networks: sample the upper triangle and mirror it."""
    draws = (rng.random(probs.shape) < probs).astype(float)
    upper = np.triu(draws, k=1)
    return upper + upper.transpose(0, 2, 1)


def _standardize_columns(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (x - mean) / sd


def gen_glsnet(cfg: SimConfig):
    """Networks from the native model: low-rank intercept, sparse slopes.

    The slope tensor gets ``floor(s0 n (n-1) p)`` nonzero entries (rounded
    down to an even count) placed in mirrored off-diagonal pairs, all equal to
    ``cfg.signal``.
    """
    rng = np.random.default_rng(cfg.seed)
    n, p, num = cfg.n, cfg.p, cfg.N
    x = _standardize_columns(rng.standard_normal((num, p))) if p > 0 else np.zeros((num, 0))
    u = rng.standard_normal((n, cfg.r))
    theta = _zero_diag(u @ u.T)

    b = np.zeros((n, n, p))
    support = set()
    budget = int(math.floor(cfg.s0 * n * (n - 1) * p))
    pairs = budget // 2
    if pairs > 0:
        rows, cols = np.triu_indices(n, k=1)
        slots = len(rows) * p
        chosen = rng.choice(slots, size=pairs, replace=False)
        pair_idx, slice_idx = np.unravel_index(chosen, (len(rows), p))
        for pi, k in zip(pair_idx, slice_idx):
            j, jp = int(rows[pi]), int(cols[pi])
            b[j, jp, k] = b[jp, j, k] = cfg.signal
            support.add((j, jp, int(k)))

    eta = theta[None] + np.einsum("jkl,il->ijk", b, x)
    adj = _sample_symmetric_bernoulli(rng, expit(eta))
    data = NetworkDataset(adj, x, EdgeFamily.bernoulli_logit(), symmetric=True)
    truth = SimTruth(theta, b, support, _top_singular_value(theta))
    return data, truth


def gen_cise(cfg: SimConfig):
    """Shared low-rank pattern plus a rank-one individual deviation per subject.

    No covariates: the slope tensor is empty and the deviations live in
    ``truth.subject_offsets``.
    """
    rng = np.random.default_rng(cfg.seed)
    n, num = cfg.n, cfg.N
    u = rng.standard_normal((n, cfg.r))
    theta = _zero_diag(u @ u.T)
    d = rng.standard_normal((num, n))
    offsets = [_zero_diag(np.outer(d[i], d[i])) for i in range(num)]
    eta = theta[None] + np.stack(offsets)
    adj = _sample_symmetric_bernoulli(rng, expit(eta))
    data = NetworkDataset(adj, np.zeros((num, 0)), EdgeFamily.bernoulli_logit(), symmetric=True)
    truth = SimTruth(
        theta, np.zeros((n, n, 0)), set(), _top_singular_value(theta),
        subject_offsets=offsets,
    )
    return data, truth


def gen_sbm(cfg: SimConfig):
    """Independent stochastic-block-model networks with shared membership.

    Within-block probability ``w``, between-block probability ``between``;
    the intercept truth is the logit of the expanded block probability matrix.
    """
    if not (0.0 < cfg.w < 1.0) or not (0.0 < cfg.between < 1.0):
        raise ValueError("block probabilities must lie in (0, 1)")
    sizes = cfg.community_sizes
    if sizes is None:
        raise ValueError("sbm protocol needs community_sizes")
    if len(sizes) != cfg.K or sum(sizes) != cfg.n:
        raise ValueError(f"community sizes {sizes} do not split {cfg.n} nodes into {cfg.K} blocks")
    rng = np.random.default_rng(cfg.seed)
    labels = np.repeat(np.arange(1, cfg.K + 1), sizes)
    block = np.full((cfg.K, cfg.K), cfg.between)
    np.fill_diagonal(block, cfg.w)
    probs = block[labels - 1][:, labels - 1]
    theta = _zero_diag(logit(probs))
    adj = _sample_symmetric_bernoulli(rng, np.repeat(probs[None], cfg.N, axis=0))
    data = NetworkDataset(adj, np.zeros((cfg.N, 0)), EdgeFamily.bernoulli_logit(), symmetric=True)
    truth = SimTruth(
        theta, np.zeros((cfg.n, cfg.n, 0)), set(), _top_singular_value(theta),
        communities=labels,
    )
    return data, truth


def gen_latent_factor(cfg: SimConfig):
    """Additive node effects plus multiplicative latent factors on the link scale."""
    rng = np.random.default_rng(cfg.seed)
    n, num = cfg.n, cfg.N
    alpha = rng.standard_normal(n)
    c = rng.standard_normal((n, cfg.K))
    theta = _zero_diag(alpha[:, None] + alpha[None, :] + c @ c.T)
    adj = _sample_symmetric_bernoulli(rng, np.repeat(expit(theta)[None], num, axis=0))
    data = NetworkDataset(adj, np.zeros((num, 0)), EdgeFamily.bernoulli_logit(), symmetric=True)
    truth = SimTruth(theta, np.zeros((n, n, 0)), set(), _top_singular_value(theta))
    return data, truth


_GENERATORS = {
    "glsnet": gen_glsnet,
    "cise": gen_cise,
    "sbm": gen_sbm,
    "latent_factor": gen_latent_factor,
}


def generate(cfg: SimConfig):
    """Dispatch to the protocol generator; returns ``(NetworkDataset, SimTruth)``."""
    return _GENERATORS[cfg.protocol](cfg)


def replication_seed(seed: int, rep: int, stream: int = 0) -> int:
    """Derived seed for replication ``rep``; ``stream`` separates fit-side draws."""
    return int(np.random.SeedSequence((seed, rep, stream)).generate_state(1)[0])


@dataclass
class ReplicationRow:
    rep: int
    seed: int
    metrics: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class ReplicationReport:
    """Per-replication metrics with mean and standard-error aggregates."""

    config: SimConfig
    reps: int
    rows: list
    summary: dict
    failures: int

    METRIC_ORDER = (
        "mu_error", "mu_error_normalized", "theta_error", "b_error",
        "f1", "nmi", "iterations", "rank", "sparsity",
    )


def _summarize(rows):
    summary = {}
    good = [r.metrics for r in rows if r.error is None]
    if not good:
        return summary
    keys = sorted({k for m in good for k in m if isinstance(m[k], (int, float))})
    for key in keys:
        vals = np.array([m[key] for m in good if key in m], dtype=float)
        if vals.size == 0:
            continue
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else None
        summary[key] = {"mean": mean, "se": se, "count": int(vals.size)}
    return summary


def run_replications(
    cfg: SimConfig,
    reps: int,
    hyper: Hyperparams | None = None,
    rank_grid=None,
    sparsity_grid=None,
    restarts: int = 20,
) -> ReplicationReport:
    """Generate, fit, and score ``reps`` independent replications.

    Fits with fixed ``hyper`` when given, otherwise tunes over the supplied
    grids. Failures (divergence, singular cells) are recorded per replication
    without aborting the run.
    """
    if reps < 1:
        raise ValueError("need at least one replication")
    if hyper is None and (rank_grid is None or sparsity_grid is None):
        raise ValueError("pass either fixed hyperparameters or both tuning grids")
    rows = []
    for rep in range(reps):
        data_seed = replication_seed(cfg.seed, rep)
        rep_cfg = replace(cfg, seed=data_seed)
        row = ReplicationRow(rep=rep, seed=data_seed)
        try:
            data, truth = generate(rep_cfg)
            if rank_grid is not None:
                template = hyper if hyper is not None else Hyperparams(rank=1)
                fit, _ = tune(data, rank_grid, sparsity_grid, template)
            elif data.symmetric:
                fit = fit_sym(data, hyper)
            else:
                fit = fit_asym(data, hyper)
            errs = error_report(fit.theta(), fit.b, truth, data)
            row.metrics.update(errs.as_dict())
            row.metrics["rank"] = fit.hyper.rank
            row.metrics["sparsity"] = fit.hyper.sparsity
            row.metrics["iterations"] = fit.iterations
            row.metrics["converged"] = bool(fit.converged)
            est = select_edges(fit.b, symmetric=data.symmetric)
            row.metrics["f1"] = f1_support(est, truth.support)
            if truth.communities is not None:
                comm = detect_communities(
                    fit.factors.u, cfg.K, restarts=restarts,
                    seed=replication_seed(cfg.seed, rep, stream=1),
                )
                row.metrics["nmi"] = nmi(comm.labels, truth.communities)
        except Exception as err:  # noqa: BLE001 - per-replication isolation
            row.error = f"{type(err).__name__}: {err}"
        rows.append(row)
    failures = sum(1 for r in rows if r.error is not None)
    return ReplicationReport(cfg, reps, rows, _summarize(rows), failures)
