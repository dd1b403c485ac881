"""Finite-difference Jacobians with column grouping, and a damped Newton iteration on dense LU."""

import logging
from dataclasses import dataclass
from typing import Callable

import networkx as nx
import numpy as np
from scipy import sparse
from scipy.linalg import lu_factor, lu_solve

from gasnet.errors import DomainError, NewtonDiverged, StateError

logger = logging.getLogger(__name__)

ResidualFn = Callable[[np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
LUFactors = tuple[np.ndarray, np.ndarray]

_MAX_DAMPING = 6
# residual contraction below which the current factorization is kept
REUSE_CONTRACTION = 0.1


@dataclass(frozen=True)
class NewtonResult:
    x: np.ndarray
    iterations: int
    step_norm: float
    jacobian_evaluations: int
    factors: LUFactors | None = None


def color_columns(pattern: sparse.spmatrix) -> np.ndarray:
    """Group columns that never share a nonzero row; returns one color per column.

    Greedy coloring of the column intersection graph, largest degree first.
    """
    pat = sparse.csc_matrix(pattern, dtype=bool)
    n_cols = pat.shape[1]
    overlap = sparse.coo_matrix(pat.T.astype(np.int8) @ pat.astype(np.int8))
    graph = nx.Graph()
    graph.add_nodes_from(range(n_cols))
    graph.add_edges_from((i, j) for i, j in zip(overlap.row, overlap.col) if i < j)
    coloring = nx.greedy_color(graph, strategy="largest_first")
    return np.array([coloring[j] for j in range(n_cols)], dtype=np.intp)


def fd_jacobian(
    fun: ResidualFn,
    x: np.ndarray,
    f0: np.ndarray,
    pattern: sparse.spmatrix | None = None,
    colors: np.ndarray | None = None,
    rel_step: float = 1e-7,
    typical: np.ndarray | float = 1.0,
) -> np.ndarray:
    """Forward-difference Jacobian, one residual evaluation per column group.

    Perturbation per column is rel_step * max(|x_j|, typical_j).
    """
    n = x.size
    jac = np.zeros((f0.size, n))
    h = rel_step * np.maximum(np.abs(x), typical)
    if pattern is None:
        for j in range(n):
            xp = x.copy()
            xp[j] += h[j]
            jac[:, j] = (fun(xp) - f0) / (xp[j] - x[j])
        return jac

    pat = sparse.csc_matrix(pattern, dtype=bool)
    if colors is None:
        colors = color_columns(pat)
    for color in range(int(colors.max()) + 1):
        cols = np.flatnonzero(colors == color)
        xp = x.copy()
        xp[cols] += h[cols]
        df = fun(xp) - f0
        for j in cols:
            rows = pat.indices[pat.indptr[j]:pat.indptr[j + 1]]
            jac[rows, j] = df[rows] / (xp[j] - x[j])
    return jac


def _factor(jac: np.ndarray) -> LUFactors:
    if not np.all(np.isfinite(jac)):
        raise NewtonDiverged("Jacobian has non-finite entries")
    lu, piv = lu_factor(jac, check_finite=False)
    if np.any(np.diag(lu) == 0.0):
        raise NewtonDiverged("singular Jacobian")
    return lu, piv


def _safe_eval(fun: ResidualFn, x: np.ndarray) -> np.ndarray | None:
    try:
        f = fun(x)
    except (StateError, DomainError):
        return None
    return f if np.all(np.isfinite(f)) else None


def newton_solve(
    fun: ResidualFn,
    x0: np.ndarray,
    jacobian: JacobianFn,
    tol: float = 1e-10,
    max_iter: int = 50,
    typical: np.ndarray | float = 1.0,
    reuse_below: float = REUSE_CONTRACTION,
    factors: LUFactors | None = None,
) -> NewtonResult:
    """Solve fun(x) = 0.

    Converged when max_j |dx_j| / (|x_j| + typical_j) <= tol. Steps that leave the
    admissible state set are halved up to a few times. The Jacobian is refactored
    unless the residual shrank below `reuse_below` times its previous norm, so
    reuse_below=0 refactors every iteration. `factors` seeds the first iteration
    with a factorization from an earlier solve.
    """
    x = np.array(x0, dtype=float)
    f = _safe_eval(fun, x)
    if f is None:
        raise NewtonDiverged("initial iterate is not admissible", iterations=0)
    n_jac = 0
    prev_norm = np.inf
    step_norm = np.inf
    for it in range(1, max_iter + 1):
        f_norm = float(np.linalg.norm(f))
        stale = it > 1 and f_norm > reuse_below * prev_norm
        if factors is None or stale:
            factors = _factor(jacobian(x, f))
            n_jac += 1
        prev_norm = f_norm
        dx = -lu_solve(factors, f, check_finite=False)
        if not np.all(np.isfinite(dx)):
            raise NewtonDiverged("Newton update is not finite", iterations=it, residual=f_norm)

        scale = 1.0
        for _ in range(_MAX_DAMPING):
            trial = x + scale * dx
            f_trial = _safe_eval(fun, trial)
            if f_trial is not None:
                break
            scale *= 0.5
        else:
            raise NewtonDiverged("no admissible damped Newton step", iterations=it, residual=f_norm)
        x, f = trial, f_trial
        step_norm = float(np.max(np.abs(scale * dx) / (np.abs(x) + typical), initial=0.0))
        logger.debug("newton iter %d: |F|=%.3e step=%.3e damping=%.3g", it, f_norm, step_norm, scale)
        if step_norm <= tol:
            return NewtonResult(x=x, iterations=it, step_norm=step_norm, jacobian_evaluations=n_jac,
                                factors=factors)
    raise NewtonDiverged(
        f"Newton did not converge in {max_iter} iterations (step {step_norm:.3e})",
        iterations=max_iter,
        residual=float(np.linalg.norm(f)),
    )
