"""Accelerated proximal gradient (FISTA) with constant step or backtracking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = ["FistaConfig", "FistaTrace", "BacktrackingError", "momentum",
           "backtrack_check", "fista"]

MAX_DOUBLINGS = 60


class BacktrackingError(RuntimeError):
    """The Lipschitz estimate kept growing; gradient and prox are inconsistent."""


@dataclass(frozen=True)
class FistaConfig:
    """Settings for :func:`fista`.

    ``L`` is the step constant in constant mode; ``L0`` and ``eta`` drive
    backtracking.  The run stops when the best objective decreased by less
    than ``rel_tol`` (relative) over the last ``window`` iterations;
    ``window=0`` disables that rule.
    """

    mode: str = "constant"
    L: Optional[float] = None
    L0: float = 1.0
    eta: float = 2.0
    max_iter: int = 5000
    rel_tol: float = 1e-10
    window: int = 5
    monotone_guard: bool = True

    def __post_init__(self):
        if self.mode not in ("constant", "backtracking"):
            raise ValueError(f"unknown FISTA mode {self.mode!r}")
        if self.mode == "constant" and not (self.L and self.L > 0):
            raise ValueError("constant mode needs a positive L")
        if self.mode == "backtracking" and not self.L0 > 0:
            raise ValueError("L0 must be positive")
        if not self.eta > 1:
            raise ValueError("eta must exceed 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")


@dataclass
class FistaTrace:
    objective: list = field(default_factory=list)
    best: list = field(default_factory=list)
    lipschitz: list = field(default_factory=list)
    n_iter: int = 0
    reason: str = ""


def momentum(a: float) -> float:
    """Next momentum weight ``(1 + sqrt(1 + 4 a^2)) / 2``."""
    return 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * a * a))


def backtrack_check(f: Callable, grad: Callable, g: Optional[Callable], x, y,
                    L: float, *, fy=None, gy=None) -> bool:
    """``(f + g)(x) <= Q_L(x, y)``, the sufficient-decrease test."""
    fy = f(y) if fy is None else fy
    gy = grad(y) if gy is None else gy
    gx = 0.0 if g is None else g(x)
    d = np.asarray(x) - np.asarray(y)
    Q = fy + float(np.vdot(gy, d)) + gx + 0.5 * L * float(np.vdot(d, d))
    lhs = f(x) + gx
    return lhs <= Q + 1e-12 * (1.0 + abs(Q))


def fista(f: Callable, grad: Callable, prox: Callable, start, config: FistaConfig,
          g: Optional[Callable] = None, callback: Optional[Callable] = None):
    """Minimize ``f + g`` from ``start``.

    Parameters
    ----------
    f, grad : callables
        Smooth part and its gradient.
    prox : callable ``prox(v, L)``
        Returns ``prox_{g/L}(v)``.
    g : callable, optional
        Nonsmooth part (zero if omitted).
    callback : callable ``callback(x, k) -> bool``, optional
        Called with each new iterate; returning True stops the run.

    Returns
    -------
    x : ndarray
        Best iterate (or last iterate when ``monotone_guard`` is off).
    trace : FistaTrace
    """
    def obj(x):
        v = f(x) + (0.0 if g is None else g(x))
        if not np.isfinite(v):
            raise FloatingPointError("non-finite objective in FISTA")
        return v

    x_prev = np.array(start, dtype=np.float64, copy=True)
    y = x_prev.copy()
    a = 1.0
    best_x = x_prev.copy()
    best = obj(x_prev)
    trace = FistaTrace(objective=[best], best=[best])
    L = config.L if config.mode == "constant" else config.L0
    x = x_prev
    for k in range(1, config.max_iter + 1):
        gy = grad(y)
        if config.mode == "constant":
            x = prox(y - gy / L, L)
        else:
            fy = f(y)
            for i in range(MAX_DOUBLINGS + 1):
                x = prox(y - gy / L, L)
                if backtrack_check(f, grad, g, x, y, L, fy=fy, gy=gy):
                    break
                if i == MAX_DOUBLINGS:
                    raise BacktrackingError(
                        f"no sufficient decrease after {MAX_DOUBLINGS} increases of L")
                L *= config.eta
        trace.lipschitz.append(L)
        val = obj(x)
        trace.objective.append(val)
        if val < best:
            best, best_x = val, x.copy()
        trace.best.append(best)
        a_next = momentum(a)
        y = x + ((a - 1.0) / a_next) * (x - x_prev)
        x_prev, a = x, a_next
        trace.n_iter = k
        if callback is not None and callback(x, k):
            trace.reason = "callback"
            break
        w = config.window
        if w and k >= w and trace.best[k - w] - best <= config.rel_tol * abs(best):
            trace.reason = "rel_tol"
            break
    else:
        trace.reason = "max_iter"
    return (best_x if config.monotone_guard else x), trace
