"""Dense matrix and 3-way tensor kernels shared by the fitting code.

Conventions: a matrix is a 2-d ``numpy.ndarray``; a 3-way tensor is a 3-d
``ndarray`` of shape ``(d1, d2, d3)`` whose k-th frontal slice is
``t[:, :, k]``. All kernels are pure functions and never mutate their inputs.
"""

from typing import NamedTuple

import numpy as np


class SvdResult(NamedTuple):
    """Top-r singular triplets: ``sigma`` descending, factor columns orthonormal."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


def mode3_product(b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Contract a tensor with a vector along the third mode.

    Returns the matrix ``sum_k x[k] * b[:, :, k]`` of shape ``(d1, d2)``.
    """
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    if b.ndim != 3:
        raise ValueError(f"expected a 3-way tensor, got shape {b.shape}")
    if x.shape != (b.shape[2],):
        raise ValueError(f"vector length {x.shape} does not match third mode {b.shape[2]}")
    return b @ x


def tensor_matrix_inner(m: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Slice-wise inner products: component k is ``<m, b[:, :, k]>``."""
    m = np.asarray(m, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.ndim != 3 or m.shape != b.shape[:2]:
        raise ValueError(f"matrix {m.shape} does not match tensor slices {b.shape}")
    return np.einsum("ij,ijk->k", m, b)


def frobenius(x: np.ndarray) -> float:
    """Frobenius norm, sqrt of the sum of squared entries, for any array."""
    return float(np.linalg.norm(np.asarray(x, dtype=float).ravel()))


def truncate(b: np.ndarray, s: int) -> np.ndarray:
    """Keep the s largest-magnitude entries of ``b``, zero the rest.

    Ties at the cut are broken toward the smaller linear (row-major) index,
    so the result is deterministic. ``s`` at or above the entry count returns
    a copy of ``b`` unchanged.
    """
    b = np.asarray(b, dtype=float)
    if s < 0:
        raise ValueError("sparsity budget must be nonnegative")
    flat = b.reshape(-1)
    if s >= flat.size:
        return b.copy()
    out = np.zeros_like(flat)
    if s > 0:
        # stable sort on -|v| keeps ascending linear index within ties
        order = np.argsort(-np.abs(flat), kind="stable")
        keep = order[:s]
        out[keep] = flat[keep]
    return out.reshape(b.shape)


def truncate_symmetric(b: np.ndarray, s: int) -> np.ndarray:
    """Hard-threshold a tensor with symmetric square slices, in mirrored pairs.

    Entries (j, j', k) and (j', j, k) are ranked by their shared magnitude and
    kept or dropped together; both count against the budget ``s``. Diagonal
    entries are always zeroed.
    """
    b = np.asarray(b, dtype=float)
    if s < 0:
        raise ValueError("sparsity budget must be nonnegative")
    if b.ndim != 3 or b.shape[0] != b.shape[1]:
        raise ValueError(f"expected square slices, got shape {b.shape}")
    n = b.shape[0]
    rows, cols = np.triu_indices(n, k=1)
    vals = b[rows, cols, :]                      # (npairs, d3)
    flat = np.abs(vals).reshape(-1)
    order = np.argsort(-flat, kind="stable")
    keep = order[: s // 2]
    out = np.zeros_like(b)
    pair_idx, slice_idx = np.unravel_index(keep, vals.shape)
    j, jp = rows[pair_idx], cols[pair_idx]
    out[j, jp, slice_idx] = b[j, jp, slice_idx]
    out[jp, j, slice_idx] = b[jp, j, slice_idx]
    return out


def svd_r(m: np.ndarray, r: int) -> SvdResult:
    """Rank-r truncated singular value decomposition.

    ``u @ diag(sigma) @ v.T`` is the best rank-r Frobenius approximation of
    ``m``. Sign convention: the largest-magnitude entry of each left singular
    vector is nonnegative.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    if r < 0 or r > min(m.shape):
        raise ValueError(f"rank {r} out of range for shape {m.shape}")
    u_full, sigma, vt = np.linalg.svd(m, full_matrices=False)
    u = u_full[:, :r].copy()
    v = vt[:r].T.copy()
    sigma = sigma[:r].copy()
    for i in range(r):
        j = int(np.argmax(np.abs(u[:, i])))
        if u[j, i] < 0:
            u[:, i] = -u[:, i]
            v[:, i] = -v[:, i]
    return SvdResult(u, sigma, v)
