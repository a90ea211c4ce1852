"""
Sparse assembly and linear solves for the implicit half of the scheme.

Matrices are scipy CSR arrays with duplicates summed and column indices
sorted. A factorization is picked by structure: LAPACK banded LU for
tridiagonal systems (every 1D operator), SuperLU for moderately sized
sparse systems and preconditioned BiCGSTAB beyond that.
"""
import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse import linalg as spla

from mfsde_pipeline import LinearSolveError, config

logger = logging.getLogger(__name__)

METHODS = ("auto", "banded", "splu", "iterative")

def sparse_matrix(rows, cols, values, shape):
    """Assemble triplets into a finalized CSR matrix (duplicates summed)"""
    A = sp.coo_matrix((values, (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def bandwidth(A):
    A = sp.coo_matrix(A)
    if A.nnz == 0:
        return 0, 0
    offsets = A.col.astype(np.int64) - A.row.astype(np.int64)
    return int(max(-offsets.min(), 0)), int(max(offsets.max(), 0))


@dataclass
class FactorizedSystem:
    matrix: Any
    method: str
    factors: Any = field(repr=False)
    preconditioner: Any = field(default=None, repr=False)

    @property
    def n(self):
        return self.matrix.shape[0]

    def solve(self, b):
        return solve(self, b)


def _pivot_floor(A):
    scale = abs(A).max() if A.nnz else 0.0
    return config["solver.pivot_threshold"] * max(scale, np.finfo(float).tiny)


def _factorize_banded(A):
    kl, ku = bandwidth(A)
    n = A.shape[0]
    ab = np.zeros((2 * kl + ku + 1, n))
    coo = sp.coo_matrix(A)
    # LAPACK band storage, A[i, j] -> ab[kl + ku + i - j, j]
    ab[kl + ku + coo.row - coo.col, coo.col] = coo.data
    lub, piv, info = lapack.dgbtrf(ab, kl, ku)
    if info < 0:
        raise LinearSolveError(
            "illegal argument {} passed to dgbtrf".format(-info), location=None
        )
    if info > 0:
        raise LinearSolveError(
            "singular matrix, zero pivot at row {}".format(info - 1),
            location=info - 1,
        )
    udiag = np.abs(lub[kl + ku])
    floor = _pivot_floor(A)
    if udiag.min() < floor:
        loc = int(np.argmin(udiag))
        raise LinearSolveError(
            "pivot {:.3e} at row {} below threshold {:.3e}".format(
                udiag[loc], loc, floor
            ),
            location=loc,
        )
    return lub, piv, kl, ku


def _factorize_splu(A):
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as err:
        raise LinearSolveError("SuperLU breakdown: {}".format(err), location=None)
    udiag = np.abs(lu.U.diagonal())
    floor = _pivot_floor(A)
    if udiag.min() < floor:
        loc = int(lu.perm_c[np.argmin(udiag)])
        raise LinearSolveError(
            "pivot {:.3e} at column {} below threshold {:.3e}".format(
                udiag.min(), loc, floor
            ),
            location=loc,
        )
    return lu


def factorize(A, method="auto", preconditioner=None):
    """
    Factorize a square sparse matrix for repeated solves.

    Args:
        A: square matrix, any scipy sparse format or dense array
        method: 'auto', 'banded', 'splu' or 'iterative'. 'auto' takes the
            banded path when the bandwidth is at most 1, SuperLU up to
            config['solver.direct_max_unknowns'] unknowns, BiCGSTAB above.
        preconditioner: matrix approximating A, factorized with SuperLU and
            used as the BiCGSTAB preconditioner. Defaults to an incomplete
            LU of A.

    Returns:
        FactorizedSystem

    Raises:
        ValueError: A is not square or the method is unknown
        LinearSolveError: a zero or tiny pivot was met
    """
    if method not in METHODS:
        raise ValueError("method must be one of {}".format(METHODS))
    A = sp.csr_matrix(A, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square, got {}".format(A.shape))
    A.sum_duplicates()
    A.sort_indices()

    if method == "auto":
        if max(bandwidth(A)) <= 1:
            method = "banded"
        elif A.shape[0] <= config["solver.direct_max_unknowns"]:
            method = "splu"
        else:
            method = "iterative"

    if method == "banded":
        return FactorizedSystem(A, method, _factorize_banded(A))
    if method == "splu":
        return FactorizedSystem(A, method, _factorize_splu(A))

    if preconditioner is not None:
        lu = _factorize_splu(sp.csr_matrix(preconditioner, dtype=float))
    else:
        try:
            lu = spla.spilu(sp.csc_matrix(A))
        except RuntimeError as err:
            raise LinearSolveError("incomplete LU breakdown: {}".format(err))
    M = spla.LinearOperator(A.shape, matvec=lu.solve, dtype=float)
    logger.debug("iterative solver selected for %d unknowns", A.shape[0])
    return FactorizedSystem(A, method, None, preconditioner=M)


def _solve_iterative(F, b):
    A = F.matrix
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b)
    history = []

    def record(xk):
        history.append(float(np.linalg.norm(b - A @ xk) / bnorm))

    x, info = spla.bicgstab(
        A,
        b,
        rtol=config["solver.rtol"],
        atol=0.0,
        maxiter=int(config["solver.maxiter_factor"] * F.n),
        M=F.preconditioner,
        callback=record,
    )
    if info > 0:
        raise LinearSolveError(
            "BiCGSTAB did not converge in {} iterations".format(info),
            location=info,
            residuals=history,
        )
    if info < 0:
        raise LinearSolveError(
            "BiCGSTAB breakdown", location=len(history), residuals=history
        )
    return x


def solve(F, b):
    """
    Solve A x = b with a factorized system; b may be (n,) or (n, k)
    """
    b = np.asarray(b, dtype=float)
    if b.shape[0] != F.n:
        raise ValueError(
            "right-hand side has {} rows, system has {}".format(b.shape[0], F.n)
        )

    if F.method == "banded":
        lub, piv, kl, ku = F.factors
        rhs = b.reshape(F.n, -1)
        x, info = lapack.dgbtrs(lub, kl, ku, rhs, piv)
        if info != 0:
            raise LinearSolveError("dgbtrs failed with info {}".format(info))
        return x.reshape(b.shape)
    if F.method == "splu":
        return F.factors.solve(b)

    if b.ndim == 1:
        return _solve_iterative(F, b)
    return np.column_stack([_solve_iterative(F, col) for col in b.T])


def relative_residual(A, x, b):
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(A @ x - b) / (np.linalg.norm(b) + 1e-300))
