"""Soft-thresholding, simple-solution tests and the iterative soft-thresholding prox."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels as K
from .problem import DimensionError, PenaltyConfig

__all__ = [
    "ProxNeighborhood",
    "ProxInfo",
    "soft_threshold",
    "phi",
    "check_block_simple",
    "check_chain_simple",
    "ist_operator",
    "ist_prox",
    "prox_objective",
]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10000


def soft_threshold(x, lam):
    """Componentwise soft-thresholding ``S(x, lam)``."""
    x = np.asarray(x, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def phi(x, s, lam):
    """``x + lam`` where ``s > 0``, ``x - lam`` where ``s < 0``, else ``S(x, lam)``."""
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), x.shape)
    if x.shape != s.shape:
        raise DimensionError("phi arguments must have equal length")
    if np.any(lam < 0):
        raise ValueError("threshold must be nonnegative")
    return np.where(s > 0, x + lam, np.where(s < 0, x - lam, soft_threshold(x, lam)))


@dataclass(frozen=True)
class ProxNeighborhood:
    """Anchors of the prox problem.

    Minimizes ``l1_scale ||b||_1 + lambda2 (w_left ||b - left|| +
    w_right ||b - right||) + L/2 ||b - z||^2``.  A zero weight removes the
    corresponding anchor.
    """

    left: np.ndarray
    right: np.ndarray
    w_left: float
    w_right: float
    l1_scale: float
    L: float
    lambda2: float = 1.0

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be positive")
        if min(self.w_left, self.w_right, self.l1_scale, self.lambda2) < 0:
            raise ValueError("weights and scales must be nonnegative")
        object.__setattr__(self, "left", np.ascontiguousarray(self.left, dtype=np.float64))
        object.__setattr__(self, "right", np.ascontiguousarray(self.right, dtype=np.float64))

    @property
    def a_left(self) -> float:
        return float(self.lambda2 * self.w_left)

    @property
    def a_right(self) -> float:
        return float(self.lambda2 * self.w_right)


class ProxInfo(NamedTuple):
    n_iter: int
    converged: bool
    restarted: bool
    nonfinite: bool


def prox_objective(z, nbhd: ProxNeighborhood, beta) -> float:
    """Value of the prox objective at ``beta``."""
    return float(K.prox_objective(np.asarray(z, float), nbhd.L, nbhd.l1_scale,
                                  nbhd.left, nbhd.right, nbhd.a_left,
                                  nbhd.a_right, np.asarray(beta, float)))


def ist_operator(beta, z, nbhd: ProxNeighborhood) -> np.ndarray:
    """The fixed-point map whose fixed points include the prox and both anchors."""
    return K.ist_operator(np.asarray(beta, float), np.asarray(z, float), nbhd.L,
                          nbhd.l1_scale, nbhd.left, nbhd.right, nbhd.a_left,
                          nbhd.a_right)


def ist_prox(z, nbhd: ProxNeighborhood, start=None, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER, return_info: bool = False):
    """Proximal point of an l1 norm plus two anchored l2 norms.

    Iterates ``beta <- T(beta)`` from ``start`` until
    ``||T(beta) - beta|| <= tol (1 + ||beta||)``.  Anchors that already solve
    the problem are returned directly.  If the iterate collides with an
    anchor it is restarted just off that anchor along a descent direction.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    if z.shape != nbhd.left.shape or z.shape != nbhd.right.shape:
        raise DimensionError("z and anchors must have the same length")
    if not tol > 0:
        raise ValueError("tol must be positive")
    start = z.copy() if start is None else np.ascontiguousarray(start, dtype=np.float64)
    beta, n_iter, status = K.ist_prox(z, nbhd.L, nbhd.l1_scale, nbhd.left,
                                      nbhd.right, nbhd.a_left, nbhd.a_right,
                                      start, tol, max_iter)
    if status & K.IST_NONFINITE:
        raise FloatingPointError("non-finite iterate in iterative soft-thresholding")
    if return_info:
        info = ProxInfo(int(n_iter), not status & K.IST_MAXITER,
                        bool(status & K.IST_RESTART), False)
        return beta, info
    return beta


def _local_terms(X, y, penalty: PenaltyConfig, n: int):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 2:
        X, y = X[None], y[None]
    if X.shape[:2] != y.shape:
        raise DimensionError("X and y do not agree")
    G = np.einsum("sdi,sdj->ij", X, X)
    c = np.einsum("sdi,sd->i", X, y)
    yy = float(np.sum(y * y))
    return G, c, yy, penalty.ridge * n, penalty.l1 * n


def _check(G, c, yy, ridge, l1, left, right, a_left, a_right):
    left = np.ascontiguousarray(left, dtype=np.float64)
    right = np.ascontiguousarray(right, dtype=np.float64)
    if left.shape != (G.shape[0],) or right.shape != left.shape:
        raise DimensionError("neighbor blocks must have length p")
    code = K.check_simple(G, c, yy, ridge, l1, left, right, a_left, a_right)
    if code == K.LEFT:
        return left.copy()
    if code == K.RIGHT:
        return right.copy()
    return None


def check_block_simple(left, right, X_t, y_t, penalty: PenaltyConfig,
                       w_left: float, w_right: float) -> Optional[np.ndarray]:
    """Return the neighbor that solves the single-block problem, if any.

    Pass ``w_left = 0`` at ``t = 1`` and ``w_right = 0`` at ``t = T``.
    """
    G, c, yy, ridge, l1 = _local_terms(X_t, y_t, penalty, 1)
    lam2 = penalty.lambda2
    return _check(G, c, yy, ridge, l1, left, right, lam2 * w_left, lam2 * w_right)


def check_chain_simple(left, right, X_seg, y_seg, penalty: PenaltyConfig,
                       w_left: float, w_right: float) -> Optional[np.ndarray]:
    """Return the neighbor that solves the single-chain problem, if any.

    ``X_seg`` (n, d, p) and ``y_seg`` (n, d) hold the chain's data; the l1
    scale grows with the chain length ``n``.
    """
    X_seg = np.asarray(X_seg, dtype=np.float64)
    n = 1 if X_seg.ndim == 2 else X_seg.shape[0]
    G, c, yy, ridge, l1 = _local_terms(X_seg, y_seg, penalty, n)
    lam2 = penalty.lambda2
    return _check(G, c, yy, ridge, l1, left, right, lam2 * w_left, lam2 * w_right)
