"""Sequential-threshold ridge regression (STRidge) with tolerance search."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class RegressionProblem:
    Theta: np.ndarray
    y: np.ndarray
    column_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.Theta = np.asarray(self.Theta, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.Theta.ndim != 2 or self.Theta.shape[0] != self.y.size:
            raise ValueError(f"Theta {self.Theta.shape} and y {self.y.shape} are inconsistent")
        if not (np.all(np.isfinite(self.Theta)) and np.all(np.isfinite(self.y))):
            raise ValueError("regression inputs contain NaN/Inf")
        if not self.column_names:
            self.column_names = [f"c{j}" for j in range(self.Theta.shape[1])]
        if len(set(self.column_names)) != len(self.column_names) or len(self.column_names) != self.Theta.shape[1]:
            raise ValueError("column names must be unique, one per column")

    @property
    def shape(self):
        return self.Theta.shape

    def rows(self, idx) -> "RegressionProblem":
        return RegressionProblem(self.Theta[idx], self.y[idx], list(self.column_names))


@dataclass
class SparseSolution:
    coefficients: np.ndarray
    support: np.ndarray
    tol_used: float
    score: float = np.nan
    status: str = "ok"
    trace: list[tuple[float, float, int]] = field(default_factory=list)

    def terms(self, names: Sequence[str]) -> dict[str, float]:
        return {n: float(c) for n, c in zip(names, self.coefficients) if c != 0.0}


def _column_norms(Theta: np.ndarray) -> np.ndarray:
    return np.linalg.norm(Theta, axis=0)


def _solve(X: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, bool]:
    """Ridge on already-normalized columns; returns (w, rank_deficient)."""
    k = X.shape[1]
    if k == 0:
        return np.zeros(0), False
    if lam > 0:
        return np.linalg.solve(X.T @ X + lam * np.eye(k), X.T @ y), False
    w, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    return w, rank < k


def ridge(problem: RegressionProblem, lambda_ridge: float = 0.0, return_status: bool = False):
    """Solve ``(Xn'Xn + lam I) w = Xn'y`` on unit-norm columns, return de-normalized coefficients.

    ``lambda_ridge == 0`` falls back to SVD least squares, which gives the
    minimum-norm solution when the system is rank deficient.
    """
    if lambda_ridge < 0:
        raise ValueError("lambda_ridge must be >= 0")
    norms = _column_norms(problem.Theta)
    live = norms > 0
    coef = np.zeros(problem.Theta.shape[1])
    w, deficient = _solve(problem.Theta[:, live] / norms[live], problem.y, lambda_ridge)
    coef[live] = w / norms[live]
    if deficient:
        log.warning("ridge: rank-deficient system, returning minimum-norm solution")
    return (coef, "rank-deficient" if deficient else "ok") if return_status else coef


class _Normalized:
    """Unit-norm columns plus their Gram matrix, shared across tolerance trials."""

    def __init__(self, problem: RegressionProblem):
        self.problem = problem
        self.norms = _column_norms(problem.Theta)
        self.live = self.norms > 0
        self.X = np.zeros_like(problem.Theta)
        self.X[:, self.live] = problem.Theta[:, self.live] / self.norms[self.live]
        self.G = self.X.T @ self.X
        self.b = self.X.T @ problem.y

    def solve(self, support: np.ndarray, lam: float) -> np.ndarray:
        idx = np.flatnonzero(support)
        Gs = self.G[np.ix_(idx, idx)]
        if lam > 0:
            return np.linalg.solve(Gs + lam * np.eye(idx.size), self.b[idx])
        # unregularized: normal equations when well conditioned, SVD otherwise
        if np.linalg.cond(Gs) < 1e10:
            return np.linalg.solve(Gs, self.b[idx])
        return _solve(self.X[:, idx], self.problem.y, 0.0)[0]


def _stridge_normalized(nz: _Normalized, lambda_ridge: float, tol: float, max_iter: int) -> SparseSolution:
    M = nz.X.shape[1]
    support = nz.live.copy()
    w = np.zeros(M)
    if support.any():
        w[support] = nz.solve(support, lambda_ridge)
    for _ in range(max_iter):
        keep = support & (np.abs(w) >= tol)
        if keep.sum() == support.sum():
            break
        support = keep
        w[:] = 0.0
        if not support.any():
            break
        w[support] = nz.solve(support, lambda_ridge)
    if not support.any():
        return SparseSolution(np.zeros(M), support, tol, status="empty-support")
    coef = np.zeros(M)
    coef[support] = nz.solve(support, 0.0) / nz.norms[support]
    return SparseSolution(coef, support, tol)


def stridge(problem: RegressionProblem, lambda_ridge: float, tol: float, max_iter: int = 10) -> SparseSolution:
    """Alternate ridge solves and hard thresholding of |w| < tol until the support is fixed.

    Coefficients are compared on unit-norm columns; the returned values are an
    unregularized least-squares refit on the final support.
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    return _stridge_normalized(_Normalized(problem), lambda_ridge, tol, max_iter)


@dataclass
class StridgeConfig:
    # 1e-5 relative to the unit diagonal of the normalized Gram matrix
    lambda_ridge: float | None = None
    eta: float = 1e-3
    tol_grid_size: int = 30
    max_iter: int = 10
    val_fraction: float = 0.2
    split_seed: int = 0
    refine: bool = True


def train_stridge(problem: RegressionProblem, lambda_ridge: float | None = None, eta: float = 1e-3,
                  tol_grid_size: int = 30, config: StridgeConfig | None = None) -> SparseSolution:
    """Pick the STRidge tolerance on a held-out split.

    ``score(tol) = ||y_val - Theta_val w||^2 / ||y_val||^2 + eta * nnz(w)``
    over a geometric grid on ``[1e-4 c, c]`` with ``c = max |ridge coefficient|``
    (normalized columns), then one finer pass between the incumbent's
    neighbours.  The winning support (ties go to the smaller tol) is refit by
    least squares on all rows.
    """
    cfg = config or StridgeConfig(lambda_ridge=lambda_ridge, eta=eta, tol_grid_size=tol_grid_size)
    N, M = problem.shape
    if N < 10:
        raise ValueError("train_stridge needs at least 10 rows")
    lam = cfg.lambda_ridge if cfg.lambda_ridge is not None else 1e-5
    perm = np.random.default_rng(cfg.split_seed).permutation(N)
    nval = max(1, int(round(cfg.val_fraction * N)))
    val, train = perm[:nval], perm[nval:]
    ptrain, pval = problem.rows(train), problem.rows(val)
    yv2 = float(pval.y @ pval.y)
    if yv2 == 0.0 or not np.any(problem.y):
        return SparseSolution(np.zeros(M), np.zeros(M, dtype=bool), 0.0, 0.0, status="zero-target")

    nz = _Normalized(ptrain)
    w0 = np.zeros(M)
    if nz.live.any():
        w0[nz.live] = nz.solve(nz.live, lam)
    c = float(np.max(np.abs(w0))) if M else 0.0
    if c == 0.0:
        return SparseSolution(np.zeros(M), np.zeros(M, dtype=bool), 0.0, status="zero-ridge")

    trace = []

    supports = {}

    def score(tol):
        sol = _stridge_normalized(nz, lam, tol, cfg.max_iter)
        r = pval.y - pval.Theta @ sol.coefficients
        s = float(r @ r) / yv2 + cfg.eta * int(sol.support.sum())
        trace.append((float(tol), s, int(sol.support.sum())))
        supports[float(tol)] = sol.support
        return s

    grid = np.geomspace(1e-4 * c, c, cfg.tol_grid_size)
    scores = [score(t) for t in grid]
    best = int(np.argmin(scores))  # argmin keeps the first (smallest tol) on ties
    best_tol, best_score = float(grid[best]), scores[best]
    if cfg.refine:
        lo = grid[max(best - 1, 0)]
        hi = grid[min(best + 1, len(grid) - 1)]
        for t in np.geomspace(lo, hi, 9):
            s = score(t)
            if s < best_score or (s == best_score and t < best_tol):
                best_tol, best_score = float(t), s
    support = supports[best_tol]
    coef = np.zeros(M)
    if support.any():
        coef[support] = ridge(RegressionProblem(problem.Theta[:, support], problem.y), 0.0)
    status = "ok" if support.any() else "empty-support"
    return SparseSolution(coef, support, best_tol, best_score, status, trace)


def write_trace_csv(sol: SparseSolution, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tol", "score", "nnz"])
        w.writerows(sol.trace)
