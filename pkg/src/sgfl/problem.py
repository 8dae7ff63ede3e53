"""Problem definition for the sparse group fused lasso.

The model is ``y_t = X_t beta_t + eps_t`` for ``t = 1..T`` and the fitting
objective is

    F(beta) = 1/2 sum_t ||y_t - X_t beta_t||^2
              + lam1 sum_t (alpha ||beta_t||_1 + (1 - alpha)/2 ||beta_t||^2)
              + lam2 sum_{t<T} w_t ||beta_{t+1} - beta_t||_2

Time indices are 0-based in arrays.  Change points reported to users are
1-based (the first time of a new segment), which is what the metrics and the
file formats use.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "DimensionError",
    "Dataset",
    "PenaltyConfig",
    "Segmentation",
    "Solution",
    "SolverReport",
    "evaluate_objective",
    "kronecker_lift",
    "spectral_norm",
]


class DimensionError(ValueError):
    """Raised when array shapes do not agree or inputs are not finite."""


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


class Dataset:
    """Observed sequences ``{X_t, y_t}``.

    Parameters
    ----------
    X : array_like, shape (T, d, p)
        Design matrices.
    y : array_like, shape (T, d)
        Responses.

    Datasets built with :func:`kronecker_lift` keep the low-dimensional
    predictors ``x_t`` and never form ``X_t`` unless :attr:`X` is accessed.
    """

    def __init__(self, X, y, *, _lift: Optional[np.ndarray] = None):
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2:
            raise DimensionError("y must have shape (T, d)")
        if _lift is not None:
            x = np.asarray(_lift, dtype=np.float64)
            if x.ndim != 2 or x.shape[0] != y.shape[0]:
                raise DimensionError("lifted predictors must have shape (T, m)")
            self._x = _frozen(x)
            self._X = None
            T, d = y.shape
            p = d * x.shape[1]
        else:
            X = np.asarray(X, dtype=np.float64)
            if X.ndim == 2:
                X = X[:, None, :]
            if X.ndim != 3:
                raise DimensionError("X must have shape (T, d, p)")
            if X.shape[:2] != y.shape:
                raise DimensionError(
                    f"X has shape {X.shape} but y has shape {y.shape}")
            self._x = None
            self._X = _frozen(X)
            T, d, p = X.shape
        if T < 1 or d < 1 or p < 1:
            raise DimensionError("T, d and p must all be at least 1")
        self._y = _frozen(y)
        arrays = [self._y, self._x if self._X is None else self._X]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise DimensionError("dataset contains non-finite values")
        self.T, self.d, self.p = int(T), int(d), int(p)

    def __repr__(self):
        kind = "lifted" if self.lifted else "design"
        return f"Dataset(T={self.T}, d={self.d}, p={self.p}, {kind})"

    @property
    def lifted(self) -> bool:
        return self._x is not None

    @property
    def y(self) -> np.ndarray:
        return self._y

    @property
    def x(self) -> Optional[np.ndarray]:
        """Predictors ``x_t`` (T, m) of a lifted dataset, else ``None``."""
        return self._x

    @property
    def m(self) -> Optional[int]:
        return None if self._x is None else self._x.shape[1]

    @cached_property
    def X(self) -> np.ndarray:
        if self._X is not None:
            return self._X
        eye = np.eye(self.d)
        return _frozen(np.stack([np.kron(xt[None, :], eye) for xt in self._x]))

    def predict(self, B) -> np.ndarray:
        """Return ``X_t beta_t`` stacked as (T, d) for coefficients (T, p)."""
        B = np.asarray(B, dtype=np.float64)
        if self.lifted:
            A = B.reshape(self.T, self.m, self.d)  # vec(A) is column-major
            return np.einsum("tjd,tj->td", A, self._x)
        return np.einsum("tdp,tp->td", self._X, B)

    def rmatvec(self, R) -> np.ndarray:
        """Return ``X_t' r_t`` stacked as (T, p) for residuals (T, d)."""
        R = np.asarray(R, dtype=np.float64)
        if self.lifted:
            return np.einsum("tj,td->tjd", self._x, R).reshape(self.T, self.p)
        return np.einsum("tdp,td->tp", self._X, R)

    @cached_property
    def grams(self) -> np.ndarray:
        """``X_t' X_t`` for every t, shape (T, p, p)."""
        if self.lifted:
            xx = np.einsum("ti,tj->tij", self._x, self._x)
            G = np.stack([np.kron(a, np.eye(self.d)) for a in xx])
        else:
            G = np.einsum("tdi,tdj->tij", self._X, self._X)
        return _frozen(G)

    @cached_property
    def xty(self) -> np.ndarray:
        """``X_t' y_t`` for every t, shape (T, p)."""
        return _frozen(self.rmatvec(self._y))

    @cached_property
    def yy(self) -> np.ndarray:
        """``||y_t||^2`` for every t."""
        return _frozen(np.einsum("td,td->t", self._y, self._y))

    @cached_property
    def lipschitz(self) -> np.ndarray:
        """Spectral norms ``||X_t' X_t||_2``."""
        if self.lifted:
            # (x x') kron I has the single nonzero eigenvalue ||x||^2
            return _frozen(np.einsum("tj,tj->t", self._x, self._x))
        return _frozen([spectral_norm(G) for G in self.grams])

    def rss(self, B) -> float:
        R = self._y - self.predict(B)
        return float(np.sum(R * R))


@dataclass(frozen=True)
class PenaltyConfig:
    """Regularization parameters.

    ``weights`` holds the T-1 total variation weights; ``None`` means all
    ones.  The boundary weights ``w_0 = w_T = 0`` are implicit.
    """

    lambda1: float
    lambda2: float
    alpha: float = 1.0
    weights: Optional[Sequence[float]] = None

    def __post_init__(self):
        if not (np.isfinite(self.lambda1) and self.lambda1 >= 0):
            raise ValueError("lambda1 must be a finite nonnegative number")
        if not (np.isfinite(self.lambda2) and self.lambda2 >= 0):
            raise ValueError("lambda2 must be a finite nonnegative number")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be a finite nonnegative vector")
            object.__setattr__(self, "weights", tuple(float(v) for v in w))

    def tv_weights(self, T: int) -> np.ndarray:
        if self.weights is None:
            return np.ones(max(T - 1, 0))
        w = np.asarray(self.weights, dtype=np.float64)
        if w.size != T - 1:
            raise DimensionError(f"expected {T - 1} TV weights, got {w.size}")
        return w

    @property
    def l1(self) -> float:
        """Per-time-point l1 scale ``alpha * lambda1``."""
        return self.alpha * self.lambda1

    @property
    def ridge(self) -> float:
        """Per-time-point ridge curvature ``(1 - alpha) * lambda1``."""
        return (1.0 - self.alpha) * self.lambda1

    def replace(self, **changes) -> "PenaltyConfig":
        kw = dict(lambda1=self.lambda1, lambda2=self.lambda2,
                  alpha=self.alpha, weights=self.weights)
        kw.update(changes)
        return PenaltyConfig(**kw)


class Segmentation:
    """Partition of ``{0..T-1}`` into consecutive fusion chains.

    ``starts`` are 0-based chain starts with ``starts[0] == 0``.
    """

    __slots__ = ("starts", "T")

    def __init__(self, starts, T: int):
        s = np.asarray(starts, dtype=np.int64)
        if s.ndim != 1 or s.size == 0 or s[0] != 0:
            raise ValueError("chain starts must begin at 0")
        if np.any(np.diff(s) <= 0) or s[-1] >= T:
            raise ValueError("chain starts must be strictly increasing and < T")
        s.setflags(write=False)
        self.starts = s
        self.T = int(T)

    @classmethod
    def from_change_points(cls, change_points, T: int) -> "Segmentation":
        """Build from 1-based change points (first index of each new chain)."""
        cps = sorted(int(c) for c in change_points)
        return cls([0] + [c - 1 for c in cps], T)

    @classmethod
    def from_coefficients(cls, B) -> "Segmentation":
        """Chains of exactly equal consecutive rows of ``B``."""
        B = np.asarray(B)
        T = B.shape[0]
        diff = np.any(B[1:] != B[:-1], axis=1)
        return cls(np.concatenate(([0], np.flatnonzero(diff) + 1)), T)

    @property
    def K(self) -> int:
        return int(self.starts.size)

    @property
    def ends(self) -> np.ndarray:
        """Exclusive chain ends (the sentinel ``T`` closes the last chain)."""
        return np.append(self.starts[1:], self.T)

    @property
    def lengths(self) -> np.ndarray:
        return self.ends - self.starts

    def change_points(self) -> list:
        """1-based indices where a new chain starts (excludes the first)."""
        return [int(s) + 1 for s in self.starts[1:]]

    def labels(self) -> np.ndarray:
        """Chain index of every time point."""
        lab = np.zeros(self.T, dtype=np.int64)
        lab[self.starts[1:]] = 1
        return np.cumsum(lab)

    def __eq__(self, other):
        return (isinstance(other, Segmentation) and self.T == other.T
                and np.array_equal(self.starts, other.starts))

    def __repr__(self):
        return f"Segmentation(K={self.K}, T={self.T}, cps={self.change_points()})"


class Solution:
    """Chain-wise coefficients: one p-vector per fusion chain."""

    def __init__(self, coef, segmentation: Segmentation,
                 objective: float = float("nan")):
        coef = np.array(coef, dtype=np.float64)
        if coef.ndim != 2 or coef.shape[0] != segmentation.K:
            raise DimensionError("need one coefficient row per chain")
        coef.setflags(write=False)
        self.coef = coef
        self.segmentation = segmentation
        self.objective = float(objective)

    @classmethod
    def from_dense(cls, B, objective=float("nan")) -> "Solution":
        B = np.asarray(B, dtype=np.float64)
        seg = Segmentation.from_coefficients(B)
        return cls(B[seg.starts], seg, objective)

    @classmethod
    def zeros(cls, T: int, p: int) -> "Solution":
        return cls(np.zeros((1, p)), Segmentation([0], T), float("nan"))

    @property
    def T(self) -> int:
        return self.segmentation.T

    @property
    def p(self) -> int:
        return self.coef.shape[1]

    def expand(self) -> np.ndarray:
        """Dense (T, p) coefficients."""
        return self.coef[self.segmentation.labels()]

    def __repr__(self):
        return (f"Solution(K={self.segmentation.K}, p={self.p}, "
                f"objective={self.objective:.10g})")


@dataclass
class SolverReport:
    """What happened during a solve."""

    objective_trace: list = field(default_factory=list)
    certificate_norm: float = float("nan")
    certificate_tol: float = float("nan")
    stage_counts: dict = field(default_factory=dict)
    wall_time: float = 0.0
    exit_reason: str = ""
    flags: list = field(default_factory=list)
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def record(self, stage: str, value: float):
        n = len(self.objective_trace)
        self.objective_trace.append((n, stage, float(value)))
        self.stage_counts[stage] = self.stage_counts.get(stage, 0) + 1

    def flag(self, message: str):
        if message not in self.flags:
            self.flags.append(message)

    def finish(self, reason: str):
        self.exit_reason = reason
        self.wall_time = time.perf_counter() - self._t0

    @property
    def certified(self) -> bool:
        return self.exit_reason == "certificate"

    def is_monotone(self, rtol: float = 1e-12) -> bool:
        F = [v for _, _, v in self.objective_trace]
        return all(b <= a + rtol * (1 + abs(a)) for a, b in zip(F, F[1:]))

    def to_dict(self) -> dict:
        return {
            "objective_trace": [list(e) for e in self.objective_trace],
            "certificate_norm": self.certificate_norm,
            "certificate_tol": self.certificate_tol,
            "stage_counts": dict(self.stage_counts),
            "wall_time": self.wall_time,
            "exit_reason": self.exit_reason,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverReport":
        rep = cls()
        rep.objective_trace = [tuple(e) for e in d.get("objective_trace", [])]
        rep.certificate_norm = d.get("certificate_norm", float("nan"))
        rep.certificate_tol = d.get("certificate_tol", float("nan"))
        rep.stage_counts = dict(d.get("stage_counts", {}))
        rep.wall_time = d.get("wall_time", 0.0)
        rep.exit_reason = d.get("exit_reason", "")
        rep.flags = list(d.get("flags", []))
        return rep


def _as_dense(dataset: Dataset, beta: Union[Solution, np.ndarray]) -> np.ndarray:
    if isinstance(beta, Solution):
        if beta.T != dataset.T or beta.p != dataset.p:
            raise DimensionError("solution does not match dataset dimensions")
        return beta.expand()
    B = np.asarray(beta, dtype=np.float64)
    if B.ndim == 1 and dataset.T == 1:
        B = B[None, :]
    if B.shape != (dataset.T, dataset.p):
        raise DimensionError(
            f"coefficients have shape {B.shape}, expected {(dataset.T, dataset.p)}")
    if not np.all(np.isfinite(B)):
        raise DimensionError("coefficients contain non-finite values")
    return B


def evaluate_objective(dataset: Dataset, penalty: PenaltyConfig,
                       beta: Union[Solution, np.ndarray]) -> float:
    """Sparse group fused lasso objective (elastic-net form when alpha < 1)."""
    B = _as_dense(dataset, beta)
    R = dataset.y - dataset.predict(B)
    F = 0.5 * float(np.sum(R * R))
    if penalty.lambda1:
        F += penalty.l1 * float(np.sum(np.abs(B)))
        F += 0.5 * penalty.ridge * float(np.sum(B * B))
    if penalty.lambda2 and dataset.T > 1:
        w = penalty.tv_weights(dataset.T)
        F += penalty.lambda2 * float(w @ np.linalg.norm(np.diff(B, axis=0), axis=1))
    return F


def kronecker_lift(x, d: int) -> Dataset:
    """Multivariate-response data ``y_t = A_t x_t`` as a lifted Dataset.

    The returned dataset has ``p = d * m`` and ``X_t = x_t' kron I_d`` so
    that ``X_t vec(A_t) = A_t x_t``.  Responses are left at zero; use
    :func:`lift_response` to attach observed ``y``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.size == 0 or x.ndim != 2:
        raise DimensionError("need a non-empty (T, m) array of predictors")
    if d < 1:
        raise DimensionError("d must be at least 1")
    return Dataset(None, np.zeros((x.shape[0], d)), _lift=x)


def lift_response(x, y) -> Dataset:
    """Lifted dataset from predictors (T, m) and responses (T, d)."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.size == 0:
        raise DimensionError("empty predictors")
    return Dataset(None, y, _lift=x)


def spectral_norm(M, tol: float = 1e-13, max_iter: int = 100000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError("spectral_norm needs a square matrix")
    n = M.shape[0]
    if not np.any(M):
        return 0.0
    # deterministic start that is not orthogonal to typical eigenvectors
    v = 1.0 + np.arange(n) / (n + 1.0)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        u = M @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            # start happened to lie in the null space
            v = np.roll(v, 1) + 1e-3 * np.arange(n)
            v /= np.linalg.norm(v)
            continue
        lam_new = float(v @ u)
        v = u / nu
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return max(float(v @ (M @ v)), lam_new)
        lam = lam_new
    return lam
