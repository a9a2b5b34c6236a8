"""Adam and limited-memory BFGS for the packed ``[theta, coefficients]`` vector.

Both respect a fixed boolean ``mask``: entries outside it get no update, so
pruned coefficients stay exactly zero.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    x: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, x0: np.ndarray, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(x0.copy(), np.zeros_like(x0), np.zeros_like(x0), 0, lr, **kw)


def adam_step(state: AdamState, grad: np.ndarray, mask: np.ndarray | None = None) -> AdamState:
    if mask is not None:
        grad = np.where(mask, grad, 0.0)
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    mhat = m / (1 - state.beta1 ** t)
    vhat = v / (1 - state.beta2 ** t)
    x = state.x - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    if mask is not None:
        x = np.where(mask, x, state.x)
    return AdamState(x, m, v, t, state.lr, state.beta1, state.beta2, state.eps)


@dataclass
class LbfgsConfig:
    max_iter: int = 500
    history: int = 10
    tol_g: float = 1e-9
    tol_f: float = 1e-10
    window: int = 10
    c1: float = 1e-4
    max_halvings: int = 30
    callback_every: int = 0


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    n_iter: int
    n_eval: int
    status: str
    log: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status in ("gtol", "ftol")


def lbfgs_minimize(objective: Callable[[np.ndarray], tuple[float, np.ndarray]], x0: np.ndarray,
                   config: LbfgsConfig | None = None, mask: np.ndarray | None = None,
                   callback: Callable[[int, np.ndarray, float], bool | None] | None = None) -> LbfgsResult:
    """Two-loop L-BFGS with Armijo backtracking (step halving).

    Stops on ``max|g| < tol_g``, on relative loss change below ``tol_f``
    over ``window`` iterations, or when ``callback`` returns True.  A failed
    line search first drops the curvature history; failing again from steepest
    descent returns the best point so far with status ``"linesearch"``.
    """
    cfg = config or LbfgsConfig()
    msk = np.ones_like(x0, dtype=bool) if mask is None else mask
    x = x0.copy()
    f, g = objective(x)
    g = np.where(msk, g, 0.0)
    n_eval = 1
    S: deque = deque(maxlen=cfg.history)
    Y: deque = deque(maxlen=cfg.history)
    history = [f]
    trace = [(0, f, float(np.max(np.abs(g))) if g.size else 0.0)]
    status = "maxiter"
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if np.max(np.abs(g)) < cfg.tol_g:
            status = "gtol"
            break
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(S), reversed(Y)):
            rho = 1.0 / (y @ s)
            a = rho * (s @ q)
            q -= a * y
            alphas.append((rho, a))
        if S:
            s, y = S[-1], Y[-1]
            q *= (s @ y) / (y @ y)
        else:
            q *= min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
        for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        slope = g @ d
        if slope >= 0:
            # not a descent direction: restart from steepest descent
            S.clear()
            Y.clear()
            d = -g * min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
            slope = g @ d
        step = 1.0
        for _ in range(cfg.max_halvings):
            xn = x + step * d
            fn, gn = objective(xn)
            n_eval += 1
            if np.isfinite(fn) and fn <= f + cfg.c1 * step * slope:
                break
            step *= 0.5
        else:
            if S:
                # stale curvature pairs: retry once from steepest descent
                S.clear()
                Y.clear()
                continue
            status = "linesearch"
            break
        gn = np.where(msk, gn, 0.0)
        s, y = xn - x, gn - g
        if s @ y > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
        x, f, g = xn, fn, gn
        history.append(f)
        trace.append((it, f, float(np.max(np.abs(g)))))
        if callback is not None and callback(it, x, f):
            status = "callback"
            break
        if len(history) > cfg.window:
            old = history[-cfg.window - 1]
            if abs(old - f) <= cfg.tol_f * max(abs(old), abs(f), 1e-300):
                status = "ftol"
                break
    return LbfgsResult(x, f, it, n_eval, status, trace)
