# Row/column normalization, Sinkhorn-Knopp balancing, and the smoothing-
# filter denoisers built from them.
#
# Scaling is always done with diagonal scale vectors applied to the CSR data
# array; the sparsity pattern never changes, so successive iterates can be
# compared entrywise.
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class BalancingReport:
    iterations: int
    final_residual: float
    row_deviation: float
    col_deviation: float
    converged: bool


def _as_csr(mat) -> sparse.csr_array:
    if sparse.issparse(mat):
        out = sparse.csr_array(mat)
    else:
        out = sparse.csr_array(np.asarray(mat, dtype=np.float64))
    if out.shape[0] != out.shape[1]:
        raise ValueError(f"matrix must be square, got {out.shape}")
    out.sort_indices()
    return out


def _row_sums(mat: sparse.csr_array) -> np.ndarray:
    return np.asarray(mat.sum(axis=1)).ravel()


def _col_sums(mat: sparse.csr_array) -> np.ndarray:
    return np.asarray(mat.sum(axis=0)).ravel()


def row_normalize(mat) -> sparse.csr_array:
    """Scale each row to sum 1. Raises on a row with nonpositive sum."""
    m = _as_csr(mat)
    sums = _row_sums(m)
    bad = np.flatnonzero(sums <= 0)
    if bad.size:
        raise ValueError(f"row {bad[0]} has nonpositive sum {sums[bad[0]]}")
    out = m.copy()
    per_entry_row = np.repeat(np.arange(m.shape[0]), np.diff(m.indptr))
    out.data = m.data / sums[per_entry_row]
    return out


def col_normalize(mat) -> sparse.csr_array:
    """Scale each column to sum 1. Raises on a column with nonpositive sum."""
    m = _as_csr(mat)
    sums = _col_sums(m)
    bad = np.flatnonzero(sums <= 0)
    if bad.size:
        raise ValueError(f"column {bad[0]} has nonpositive sum {sums[bad[0]]}")
    out = m.copy()
    out.data = m.data / sums[m.indices]
    return out


def balance_pass(mat) -> sparse.csr_array:
    """One balancing pass: column normalization followed by row normalization."""
    return row_normalize(col_normalize(mat))


def sinkhorn(mat, tol: float = 1e-8, max_iter: int = 1000):
    """Alternate column/row normalization until successive iterates agree.

    Stops when the Frobenius norm of the iterate difference drops to tol.
    Returns (balanced matrix, BalancingReport); non-convergence within
    max_iter is flagged on the report, not raised.
    """
    current = _as_csr(mat)
    residual = np.inf
    iterations = 0
    converged = False
    for _ in range(max_iter):
        nxt = balance_pass(current)
        residual = float(np.linalg.norm(nxt.data - current.data))
        current = nxt
        iterations += 1
        if residual <= tol:
            converged = True
            break
    row_dev = float(np.max(np.abs(_row_sums(current) - 1.0)))
    col_dev = float(np.max(np.abs(_col_sums(current) - 1.0)))
    return current, BalancingReport(
        iterations=iterations,
        final_residual=residual,
        row_deviation=row_dev,
        col_deviation=col_dev,
        converged=converged,
    )


def smooth_denoise(mat, img: np.ndarray, sinkhorn_iters: int = 0) -> np.ndarray:
    """Apply the smoothing filter after `sinkhorn_iters` balancing passes.

    A final row normalization makes the applied filter row-stochastic, so
    constant images pass through unchanged. iters=0 is the plain row-
    normalized filter; iters=1 is the column-then-row normalized one.
    """
    a = np.asarray(img, dtype=np.float64)
    m = _as_csr(mat)
    if m.shape[0] != a.size:
        raise ValueError(f"matrix size {m.shape[0]} does not match {a.size} pixels")
    if sinkhorn_iters < 0:
        raise ValueError("sinkhorn_iters must be >= 0")
    for _ in range(sinkhorn_iters):
        m = balance_pass(m)
    filt = row_normalize(m)
    return (filt @ a.ravel()).reshape(a.shape)


def modified_em_step(gamma: np.ndarray):
    """Mean-free EM surrogate step on a responsibility-shaped matrix.

    Returns (beta, gamma') where beta row-normalizes gamma (the implicit
    mean-update coefficients) and gamma' column-normalizes beta (the
    posterior update). One step corresponds to one balancing pass.
    """
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {g.shape}")
    row = g.sum(axis=1)
    bad = np.flatnonzero(row <= 0)
    if bad.size:
        raise ValueError(f"row {bad[0]} has nonpositive sum {row[bad[0]]}")
    beta = g / row[:, None]
    col = beta.sum(axis=0)
    bad = np.flatnonzero(col <= 0)
    if bad.size:
        raise ValueError(f"column {bad[0]} has nonpositive sum {col[bad[0]]}")
    return beta, beta / col[None, :]
