"""Sparse solves and the condition number sigma_max(A) / lambda_min(sym(A))."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOL = 1e-12
DENSE_EIG_MAX = 2000


class SolverError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = list(history or [])


class IndefiniteError(SolverError):
    pass


@dataclass
class SolveReport:
    x: np.ndarray
    residual: float
    method: str
    iterations: int = 0
    fill: float = float("nan")
    history: list = field(default_factory=list)

    def to_dict(self, include_solution=False):
        d = {"residual": self.residual, "method": self.method, "iterations": self.iterations,
             "fill": self.fill, "n": int(len(self.x))}
        if include_solution:
            d["x"] = self.x.tolist()
        return d

    def to_json(self, include_solution=False, **kw):
        return json.dumps(self.to_dict(include_solution), **kw)


def _rel_residual(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


def solve(system_or_matrix, rhs=None, tol=DEFAULT_TOL, method="auto", restart=200, maxiter=50):
    """Solve A x = b; sparse LU first, GMRES with ILU if LU fails or is refused.

    Accepts a SparseSystem or a matrix with ``rhs``.
    """
    if rhs is None:
        A, b = system_or_matrix.matrix, system_or_matrix.rhs
    else:
        A, b = system_or_matrix, rhs
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise SolverError(f"shape mismatch {A.shape} vs {b.shape}")
    history = []
    if method in ("auto", "lu"):
        try:
            lu = spla.splu(A)
            x = lu.solve(b)
            # one step of iterative refinement
            x += lu.solve(b - A @ x)
            res = _rel_residual(A, x, b)
            history.append(res)
            fill = (lu.L.nnz + lu.U.nnz) / max(A.nnz, 1)
            if np.isfinite(res) and res <= tol:
                return SolveReport(x, float(res), "lu", 0, float(fill), history)
        except RuntimeError as exc:  # singular factor
            history.append(str(exc))
        if method == "lu":
            raise SolverError("sparse LU did not reach the tolerance", history)
    try:
        ilu = spla.spilu(A, drop_tol=1e-6, fill_factor=20)
    except RuntimeError as exc:
        raise SolverError(f"incomplete LU failed: {exc}", history) from exc
    M = spla.LinearOperator(A.shape, ilu.solve)
    its = 0

    def cb(rk):
        nonlocal its
        its += 1
        history.append(float(rk))

    x, info = spla.gmres(A, b, rtol=tol, atol=0.0, restart=restart, maxiter=maxiter, M=M,
                         callback=cb, callback_type="pr_norm")
    res = _rel_residual(A, x, b)
    if info != 0 or not res <= tol * 10:
        raise SolverError(f"GMRES did not converge (info={info}, residual={res:.3e})", history)
    return SolveReport(x, float(res), "gmres", its, float("nan"), history)


def sigma_max(A, tol=1e-10, dense_max=200):
    """Largest singular value: dense SVD for small n, Lanczos on A^T A otherwise."""
    n = A.shape[0]
    if n <= dense_max:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        return float(sla.svdvals(dense)[0])
    A = sp.csr_matrix(A)
    op = spla.LinearOperator((A.shape[1], A.shape[1]), matvec=lambda v: A.T @ (A @ v), dtype=float)
    ev = spla.eigsh(op, k=1, which="LA", tol=tol, return_eigenvectors=False)
    return float(np.sqrt(ev[0]))


def sigma_max_power(A, tol=1e-14, maxiter=100000, seed=0):
    """Power iteration on A^T A."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(maxiter):
        w = A.T @ (A @ v)
        new = float(np.linalg.norm(w))
        v = w / new
        if abs(new - lam) <= tol * new:
            break
        lam = new
    return float(np.sqrt(new))


def negative_inertia(S):
    """Number of negative eigenvalues of a sparse symmetric matrix.

    LU without pivoting under a symmetric fill-reducing ordering is an
    LDL^T factorization, so the signs of diag(U) give the inertia.
    """
    lu = spla.splu(sp.csc_matrix(S), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})
    if not (np.array_equal(lu.perm_r, lu.perm_c)):
        raise SolverError("symmetric factorization pivoted; inertia unavailable")
    return int(np.count_nonzero(lu.U.diagonal() < 0))


def lambda_min_sym(A):
    """Smallest eigenvalue of (A + A^T)/2.

    For large indefinite matrices the returned value is a negative
    eigenvalue, not necessarily the most negative one.
    """
    S = 0.5 * (A + A.T)
    n = S.shape[0]
    if n <= DENSE_EIG_MAX:
        dense = S.toarray() if sp.issparse(S) else np.asarray(S)
        return float(sla.eigvalsh(dense, subset_by_index=[0, 0])[0])
    S = sp.csc_matrix(S)
    # eigenvalue nearest 0 by shift-invert; it is lambda_min when S is PD
    near = spla.eigsh(S, k=1, sigma=0.0, which="LM", tol=1e-12, return_eigenvectors=False)[0]
    if near < 0:
        return float(near)
    try:
        neg = negative_inertia(S)
    except (SolverError, RuntimeError):
        neg = None
    if neg == 0:
        return float(near)
    lo = spla.eigsh(S, k=1, which="SA", tol=1e-8, return_eigenvectors=False)[0]
    return float(min(lo, near))


def condition_number(A):
    """sigma_max(A) / lambda_min((A + A^T)/2); raises if the symmetric part is not PD."""
    lmin = lambda_min_sym(A)
    if not lmin > 0:
        raise IndefiniteError(f"symmetric part not positive definite (lambda_min = {lmin:.3e})")
    return sigma_max(A) / lmin
