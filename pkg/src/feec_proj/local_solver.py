"""Dense gauged (KKT) solves and rank utilities for patch-local systems."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lapack, lu_factor, lu_solve

from .exceptions import SingularSystem


@dataclass(frozen=True)
class SolverConfig:
    rank_tol: float = 1e-9
    residual_tol: float = 1e-10
    rcond_min: float = 1e-13


DEFAULT = SolverConfig()


@dataclass
class GaugedSolution:
    x: np.ndarray
    multipliers: np.ndarray
    residual: float
    fallback: bool
    rcond: float


def _kkt(A, B):
    n, m = A.shape[0], B.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = A
    K[:n, n:] = B.T
    K[n:, :n] = B
    return K


def solve_gauged(A, B=None, rhs_A=None, rhs_B=None, config=DEFAULT):
    """Solve A x + B^T y = rhs_A, B x = rhs_B.

    Right-hand sides may be matrices (one column per load).  The residual is
    relative to the right-hand side scale.  If the KKT matrix is numerically
    singular the minimum-norm least-squares solution is returned with
    `fallback` set.
    """
    A = np.asarray(A, dtype=float)
    A = A.reshape(A.shape[0], A.shape[0]) if A.ndim == 2 else np.atleast_2d(A)
    n = A.shape[0]
    if n == 0:
        width = () if rhs_A is None or np.ndim(rhs_A) < 2 else (np.shape(rhs_A)[1],)
        z = np.zeros((0,) + width)
        return GaugedSolution(z, np.zeros((0,) + width), 0.0, False, 1.0)
    if B is None:
        B = np.zeros((0, n))
    else:
        B = np.asarray(B, dtype=float)
        B = B.reshape(B.shape[0] if B.ndim == 2 else -1, n)
    m = B.shape[0]
    rhs_A = np.zeros(n) if rhs_A is None else np.asarray(rhs_A, dtype=float)
    vec = rhs_A.ndim == 1
    rhs_A = rhs_A.reshape(n, -1)
    rhs_B = np.zeros((m, rhs_A.shape[1])) if rhs_B is None else np.asarray(rhs_B, dtype=float).reshape(m, rhs_A.shape[1])
    # balance the gauge rows against A; x is unaffected, y is rescaled back below
    bn, an = np.abs(B).max(initial=0.0), np.abs(A).max(initial=0.0)
    gs = an / bn if bn > 0 and an > 0 else 1.0
    K = _kkt(A, B * gs)
    rhs = np.vstack([rhs_A, rhs_B * gs])
    with warnings.catch_warnings():
        # singular pivots are detected through rcond below
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(K, check_finite=False)
    anorm = np.linalg.norm(K, 1)
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    fallback = not np.isfinite(rcond) or rcond < config.rcond_min
    if fallback:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    else:
        sol = lu_solve((lu, piv), rhs, check_finite=False)
    scale = max(np.abs(rhs).max(initial=0.0), np.abs(K).max() * np.abs(sol).max(initial=0.0), 1e-300)
    residual = float(np.abs(K @ sol - rhs).max(initial=0.0) / scale)
    x, y = sol[:n], sol[n:] * gs
    if vec:
        x, y = x[:, 0], y[:, 0]
    return GaugedSolution(x, y, residual, bool(fallback), float(rcond))


def solve_or_raise(A, B, rhs_A, rhs_B=None, patch=None, what="local system", config=DEFAULT):
    sol = solve_gauged(A, B, rhs_A, rhs_B, config)
    if sol.fallback:
        raise SingularSystem(f"{what} is singular (rcond {sol.rcond:.2e})", patch)
    if sol.residual > config.residual_tol:
        raise SingularSystem(f"{what}: residual {sol.residual:.2e}", patch)
    return sol.x


def rank_and_nullspace(M, tol=None, config=DEFAULT):
    """Numerical rank at relative tolerance and an orthonormal null space basis (columns)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    tol = config.rank_tol if tol is None else tol
    if M.size == 0:
        return 0, np.eye(M.shape[1])
    _, s, vt = np.linalg.svd(M)
    rank = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    return rank, vt[rank:].T.copy()


def orth(M, tol=None, config=DEFAULT):
    """Orthonormal basis (columns) of the column space of M."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    tol = config.rank_tol if tol is None else tol
    if M.size == 0:
        return np.zeros((M.shape[0], 0))
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    rank = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    return u[:, :rank].copy()
