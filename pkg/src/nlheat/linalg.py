"""Numerical backbone: sparse/dense solves and the dense nonsymmetric eigensolver.

Thin, contract-checked wrappers around scipy/LAPACK.  Matrices are kept in
CSR form (sorted, deduplicated column indices per row); the eigensolver is
LAPACK's balanced Hessenberg + Francis QR via ``numpy.linalg.eigvals``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class LinalgError(RuntimeError):
    pass


def as_csr(a) -> sp.csr_matrix:
    """Coerce to canonical CSR (sorted indices, duplicates summed)."""
    m = sp.csr_matrix(a)
    m.sum_duplicates()
    m.sort_indices()
    if not np.all(np.isfinite(m.data)):
        raise LinalgError("sparse matrix has non-finite entries")
    return m


def sparse_factor(a):
    """LU-factor a square sparse matrix (COLAMD ordering, partial pivoting)."""
    a = as_csr(a)
    n, m = a.shape
    if n != m:
        raise LinalgError(f"matrix is {n}x{m}, expected square")
    try:
        return spla.splu(a.tocsc())
    except RuntimeError as exc:  # singular factorization
        raise LinalgError(f"sparse LU failed: {exc}") from exc


def sparse_solve(a, b: np.ndarray, rtol: float = 1e-11) -> np.ndarray:
    """Solve ``a x = b`` by sparse LU; verifies the relative residual."""
    a = as_csr(a)
    lu = sparse_factor(a)
    x = lu.solve(np.asarray(b, dtype=float))
    resid = np.linalg.norm(a @ x - b)
    scale = np.linalg.norm(b)
    if scale > 0 and resid > rtol * scale:
        raise LinalgError(f"sparse solve residual {resid / scale:.3e} exceeds {rtol:.1e}")
    return x


def eigenvalues_dense(a: np.ndarray) -> np.ndarray:
    """Full complex spectrum of a dense square matrix.

    Uses LAPACK geev (balancing, Hessenberg reduction, shifted QR).
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise LinalgError(f"expected square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise LinalgError("matrix has non-finite entries")
    try:
        return np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise LinalgError(f"eigenvalue iteration failed: {exc}") from exc


def dense_lu_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense LU solve with residual check."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise LinalgError(f"dense solve failed: {exc}") from exc
    resid = np.linalg.norm(a @ x - b)
    scale = max(np.linalg.norm(b), 1e-300)
    if resid > 1e-8 * scale * max(1.0, np.linalg.cond(a) * np.finfo(float).eps / 1e-11):
        # tolerate ill conditioning proportionally; well-conditioned inputs hit 1e-11
        if resid > 1e-6 * scale:
            raise LinalgError(f"dense solve residual {resid / scale:.3e}")
    return x


def qr_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Least-squares solve (QR/SVD) for possibly overdetermined systems."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    return x
