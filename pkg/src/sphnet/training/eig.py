"""Symmetric and generalized symmetric eigensolvers (Jacobi + Cholesky)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tp import backend


class EigenError(ValueError):
    pass


@dataclass
class EigResult:
    eigenvalues: np.ndarray  # ascending
    vectors: np.ndarray      # columns are eigenvectors / orbital coefficients


def sym_eig(A, tol: float = 1e-12, max_sweeps: int = 100) -> EigResult:
    """Cyclic Jacobi until the off-diagonal norm is below ``tol * ||A||_F``."""
    A = np.array(A, dtype=np.float64, copy=True, order="C")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise EigenError(f"expected a square matrix, got {A.shape}")
    if A.size == 0:
        return EigResult(np.zeros(0), np.zeros((0, 0)))
    scale = np.linalg.norm(A)
    if np.abs(A - A.T).max() > 1e-10 * max(1.0, scale):
        raise EigenError("matrix is not symmetric")
    V = np.empty_like(A)
    sweeps = backend.active().jacobi_eigh(A, V, tol * scale, max_sweeps)
    if sweeps < 0:
        raise EigenError(f"Jacobi did not converge in {max_sweeps} sweeps")
    vals = np.diag(A).copy()
    order = np.argsort(vals, kind="stable")
    return EigResult(vals[order], V[:, order])


def cholesky(S) -> np.ndarray:
    """Lower-triangular ``L`` with ``S = L L^T``; names the first non-positive pivot."""
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    L = np.zeros_like(S)
    for k in range(n):
        piv = S[k, k] - L[k, :k] @ L[k, :k]
        if not piv > 0.0:
            raise EigenError(f"overlap matrix is not positive definite: pivot {k} = {piv:.3e}")
        L[k, k] = np.sqrt(piv)
        L[k + 1:, k] = (S[k + 1:, k] - L[k + 1:, :k] @ L[k, :k]) / L[k, k]
    return L


def _solve_lower(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    X = np.zeros_like(B)
    for k in range(L.shape[0]):
        X[k] = (B[k] - L[k, :k] @ X[:k]) / L[k, k]
    return X


def _solve_upper(U: np.ndarray, B: np.ndarray) -> np.ndarray:
    X = np.zeros_like(B)
    for k in range(U.shape[0] - 1, -1, -1):
        X[k] = (B[k] - U[k, k + 1:] @ X[k + 1:]) / U[k, k]
    return X


def gen_eig(H, S=None) -> EigResult:
    """Solve ``H C = S C diag(eps)`` via ``S = L L^T`` and ``L^-1 H L^-T``."""
    H = np.asarray(H, dtype=np.float64)
    if S is None:
        return sym_eig(H)
    S = np.asarray(S, dtype=np.float64)
    if S.shape != H.shape:
        raise EigenError(f"H {H.shape} and S {S.shape} differ in shape")
    if np.abs(S - S.T).max() > 1e-10 * max(1.0, np.linalg.norm(S)):
        raise EigenError("overlap matrix is not symmetric")
    L = cholesky(S)
    tmp = _solve_lower(L, H)              # L^-1 H
    A = _solve_lower(L, tmp.T.copy()).T   # L^-1 H L^-T
    A = 0.5 * (A + A.T)
    res = sym_eig(A)
    C = _solve_upper(L.T, res.vectors)    # L^-T Y
    return EigResult(res.eigenvalues, C)
