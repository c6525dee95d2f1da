"""
Sparse iterative linear solvers
===============================

Conjugate gradients for the symmetric positive definite systems produced by
the Newton and semi-implicit iterations, and restarted GMRES for the
nonsymmetric systems produced by the Newton-like iteration. Matrices are
scipy CSR; solvers never modify their inputs.

Preconditioners are small objects with an ``apply(r)`` method:

- ``IdentityPreconditioner`` — no-op.
- ``JacobiPreconditioner`` — diagonal scaling; requires a strictly positive
  diagonal. This is the default everywhere.
- ``IncompleteCholesky`` — zero-fill incomplete Cholesky on the lower
  triangle with a drop tolerance; falls back to Jacobi on a nonpositive
  pivot (a warning is issued).
- ``IncompleteLU`` — SuperLU incomplete LU with a drop tolerance.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spilu, spsolve_triangular

__all__ = [
    "LinearSolveReport",
    "IdentityPreconditioner",
    "JacobiPreconditioner",
    "IncompleteCholesky",
    "IncompleteLU",
    "make_preconditioner",
    "cg_solve",
    "gmres_solve",
]


@dataclass
class LinearSolveReport:
    """Outcome of one linear solve.

    ``converged`` implies the final relative residual is at or below the
    requested tolerance. ``residual_history`` holds the monitored 2-norm
    residuals, one entry per iteration, starting with the initial residual.
    """

    iterations: int = 0
    relative_residual: float = np.inf
    converged: bool = False
    residual_history: list = field(default_factory=list)


class IdentityPreconditioner:
    kind = "identity"

    def apply(self, r):
        return r


class JacobiPreconditioner:
    kind = "jacobi"

    def __init__(self, A):
        diag = A.diagonal()
        if np.any(diag <= 0):
            raise ValueError("jacobi preconditioner requires a strictly positive diagonal")
        self.inv_diag = 1.0 / diag

    def apply(self, r):
        return self.inv_diag * r


class IncompleteCholesky:
    """Zero-fill incomplete Cholesky with post-drop of small factor entries.

    The factor is restricted to the sparsity pattern of the lower triangle of
    A; computed entries with ``|l_ij| < drop_tol * sqrt(a_ii)`` are then
    dropped. With ``drop_tol = 0`` on a pattern without fill-in (diagonal or
    tridiagonal matrices) the factor is the exact Cholesky factor.
    """

    kind = "incomplete-cholesky"

    def __init__(self, A, drop_tol=0.1):
        A = sparse.csr_matrix(A)
        L, ok = _ic0(A)
        if not ok:
            warnings.warn(
                "incomplete Cholesky hit a nonpositive pivot; falling back to jacobi",
                stacklevel=2,
            )
            self._fallback = JacobiPreconditioner(A)
            self.L = None
            return
        self._fallback = None
        if drop_tol > 0:
            scale = np.sqrt(A.diagonal())
            L = L.tocoo()
            keep = (L.row == L.col) | (np.abs(L.data) >= drop_tol * scale[L.row])
            L = sparse.csr_matrix(
                (L.data[keep], (L.row[keep], L.col[keep])), shape=L.shape
            )
        self.L = sparse.csr_matrix(L)

    def apply(self, r):
        if self._fallback is not None:
            return self._fallback.apply(r)
        y = spsolve_triangular(self.L, r, lower=True)
        return spsolve_triangular(self.L.T.tocsr(), y, lower=False)


class IncompleteLU:
    kind = "incomplete-lu"

    def __init__(self, A, drop_tol=0.1):
        self.ilu = spilu(sparse.csc_matrix(A), drop_tol=drop_tol)

    def apply(self, r):
        return self.ilu.solve(r)


def make_preconditioner(kind, A, drop_tol=0.1):
    """Build a preconditioner by name: identity | jacobi | ic | ilu."""
    if kind in (None, "identity", "none"):
        return IdentityPreconditioner()
    if kind == "jacobi":
        return JacobiPreconditioner(A)
    if kind in ("ic", "incomplete-cholesky"):
        return IncompleteCholesky(A, drop_tol=drop_tol)
    if kind in ("ilu", "incomplete-lu"):
        return IncompleteLU(A, drop_tol=drop_tol)
    raise ValueError(f"unknown preconditioner kind {kind!r}")


def _ic0(A):
    """IC factor on the lower-triangular pattern of CSR matrix A.

    Returns (L, ok). Column-oriented updates; for a symmetric matrix the CSR
    rows double as CSC columns of the lower triangle.
    """
    low = sparse.tril(A, format="csc")
    low.sort_indices()
    n = A.shape[0]
    indptr, indices, data = low.indptr, low.indices, low.data.copy()
    for j in range(n):
        c0, c1 = indptr[j], indptr[j + 1]
        if c1 == c0 or indices[c0] != j or data[c0] <= 0:
            return None, False
        piv = np.sqrt(data[c0])
        data[c0] = piv
        if c1 == c0 + 1:
            continue
        data[c0 + 1 : c1] /= piv
        rows_j = indices[c0 + 1 : c1]
        vals_j = data[c0 + 1 : c1]
        for t in range(rows_j.size):
            ljk = vals_j[t]
            if ljk == 0.0:
                continue
            k = rows_j[t]
            k0, k1 = indptr[k], indptr[k + 1]
            if k1 == k0:
                continue
            target = indices[k0:k1]
            pos = np.searchsorted(target, rows_j[t:])
            ok = (pos < k1 - k0) & (target[np.minimum(pos, k1 - k0 - 1)] == rows_j[t:])
            data[k0 + pos[ok]] -= vals_j[t:][ok] * ljk
    L = sparse.csc_matrix((data, indices, indptr), shape=(n, n))
    return L.tocsr(), True


def _check_square(A, b):
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if b.shape[0] != A.shape[0]:
        raise ValueError("right-hand side length does not match matrix")


def cg_solve(A, b, M=None, tol=1e-10, maxit=None, x0=None, check_symmetry=True):
    """Preconditioned conjugate gradients for symmetric positive definite A.

    Stops when ``||b - A x||_2 <= tol * ||b||_2``. A breakdown (nonpositive
    curvature, signalling an indefinite or singular matrix) returns the
    current iterate with ``converged=False`` rather than raising.

    Parameters
    ----------
    A : scipy sparse matrix, symmetric positive definite
    b : (n,) array
    M : preconditioner with ``apply``, optional
    tol : float
        Relative residual tolerance; must be positive.
    maxit : int, optional
        Defaults to ``10 * n``.
    x0 : (n,) array, optional
    check_symmetry : bool
        Verify ``A == A.T`` exactly (raises ValueError otherwise). Skipped
        by callers that construct A symmetric by design.

    Returns
    -------
    (x, LinearSolveReport)
    """
    b = np.asarray(b, dtype=np.float64)
    _check_square(A, b)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if check_symmetry and (A != A.T).nnz != 0:
        raise ValueError("cg_solve requires a symmetric matrix")
    if M is None:
        M = IdentityPreconditioner()
    n = b.shape[0]
    if maxit is None:
        maxit = 10 * n

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), LinearSolveReport(0, 0.0, True, [0.0])

    rnorm = np.linalg.norm(r)
    history = [rnorm]
    if rnorm <= tol * bnorm:
        return x, LinearSolveReport(0, rnorm / bnorm, True, history)

    z = M.apply(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, maxit + 1):
        Ap = A @ p
        curv = p @ Ap
        if curv <= 0 or not np.isfinite(curv):
            return x, LinearSolveReport(it - 1, rnorm / bnorm, False, history)
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        history.append(rnorm)
        if rnorm <= tol * bnorm:
            return x, LinearSolveReport(it, rnorm / bnorm, True, history)
        z = M.apply(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, LinearSolveReport(maxit, rnorm / bnorm, False, history)


def gmres_solve(A, b, M=None, tol=1e-10, restart=50, maxit=None, x0=None):
    """Right-preconditioned restarted GMRES.

    Handles nonsymmetric matrices. The monitored residual is the true
    residual ``||b - A x||_2`` (right preconditioning leaves it unchanged).
    Stagnation across two consecutive restart cycles yields a non-converged
    report instead of spinning.

    Returns
    -------
    (x, LinearSolveReport)
    """
    b = np.asarray(b, dtype=np.float64)
    _check_square(A, b)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if restart < 1:
        raise ValueError("restart must be >= 1")
    if M is None:
        M = IdentityPreconditioner()
    n = b.shape[0]
    if maxit is None:
        maxit = 10 * n
    restart = min(restart, n)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), LinearSolveReport(0, 0.0, True, [0.0])

    r = b - A @ x
    rnorm = np.linalg.norm(r)
    history = [rnorm]
    if rnorm <= tol * bnorm:
        return x, LinearSolveReport(0, rnorm / bnorm, True, history)

    total_it = 0
    stagnant_cycles = 0
    while total_it < maxit:
        cycle_start = rnorm
        V = np.zeros((restart + 1, n))
        H = np.zeros((restart + 1, restart))
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        g = np.zeros(restart + 1)
        g[0] = rnorm
        V[0] = r / rnorm
        j = 0
        while j < restart and total_it < maxit:
            w = A @ M.apply(V[j])
            for i in range(j + 1):  # modified Gram-Schmidt
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            happy = H[j + 1, j] < 1e-14 * max(1.0, abs(H[j, j]))
            if not happy:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):  # apply stored Givens rotations
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j] = H[j, j] / denom if denom else 1.0
            sn[j] = H[j + 1, j] / denom if denom else 0.0
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total_it += 1
            j += 1
            rnorm = abs(g[j])
            history.append(rnorm)
            if rnorm <= tol * bnorm or happy:
                break
        if j:
            R = np.triu(H[:j, :j])
            if np.min(np.abs(np.diag(R))) > 1e-300:
                y = np.linalg.solve(R, g[:j])
            else:  # singular projected system (singular A)
                y = np.linalg.lstsq(R, g[:j], rcond=None)[0]
            x += M.apply(V[:j].T @ y)
        r = b - A @ x
        rnorm = np.linalg.norm(r)
        history[-1] = rnorm  # replace estimate with the true residual
        if rnorm <= tol * bnorm:
            return x, LinearSolveReport(total_it, rnorm / bnorm, True, history)
        if rnorm >= cycle_start * (1.0 - 1e-12):
            stagnant_cycles += 1
            if stagnant_cycles >= 2:
                return x, LinearSolveReport(total_it, rnorm / bnorm, False, history)
        else:
            stagnant_cycles = 0
    return x, LinearSolveReport(total_it, rnorm / bnorm, False, history)
