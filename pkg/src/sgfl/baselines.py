"""General-purpose solvers for the same objective, used as baselines.

All of them work on dense (T, p) coefficients and return the best iterate
under the true objective.  None of them produces exact fusions; use
:func:`approximate_segmentation` to read change points off their output.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .fista import FistaConfig, fista
from .problem import Dataset, PenaltyConfig, Segmentation, Solution, evaluate_objective

TINY = np.finfo(np.float64).tiny

__all__ = [
    "BaselineConfig",
    "BaselineTrace",
    "TuningError",
    "group_soft_threshold",
    "smoothed_tv",
    "spg_solve",
    "pd_solve",
    "admm_solve",
    "ladmm_solve",
    "two_step_solve",
    "linearized_x_update",
    "approximate_segmentation",
    "threshold_coefficients",
]


class TuningError(RuntimeError):
    """No grid value satisfies the method's step-size requirements."""


@dataclass(frozen=True)
class BaselineConfig:
    """Iteration budgets and tuning grids.

    ``iterations`` is the budget of the final run; each grid candidate gets
    ``trial_iters`` iterations.  SPG uses its own restart schedule and stops
    after ``spg_max_iter`` iterations in total.
    """

    iterations: int = 5000
    trial_iters: int = 100
    tau_grid: Sequence[float] = tuple(float(f"1e{k}") for k in range(-6, 7))
    pd_relaxation: float = 1.9
    rho_grid: Sequence[float] = tuple(float(f"1e{k}") for k in range(4, -5, -1))
    inner_tol: float = 1e-10
    inner_max_iter: int = 5000
    spg_mu0: Optional[float] = None
    spg_decay: float = 0.1
    spg_stall: int = 100
    spg_mu_floor: float = 1e-8
    spg_max_iter: int = 10000

    def __post_init__(self):
        if self.iterations < 1 or self.trial_iters < 1:
            raise ValueError("iteration counts must be positive")
        if len(self.tau_grid) == 0 or len(self.rho_grid) == 0:
            raise ValueError("tuning grids must be nonempty")
        if min(self.tau_grid) <= 0 or min(self.rho_grid) <= 0:
            raise ValueError("grid values must be positive")


@dataclass
class BaselineTrace:
    method: str
    objective: list = field(default_factory=list)
    times: list = field(default_factory=list)
    best: float = float("inf")
    tuning: dict = field(default_factory=dict)
    tuning_time: float = 0.0
    wall_time: float = 0.0
    flags: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"method": self.method, "best": self.best, "tuning": self.tuning,
                "tuning_time": self.tuning_time, "wall_time": self.wall_time,
                "iterations": len(self.objective), "flags": list(self.flags)}


class _Ops:
    """Objective pieces and the differencing operator."""

    def __init__(self, dataset: Dataset, penalty: PenaltyConfig):
        self.ds = dataset
        self.pen = penalty
        self.T, self.p = dataset.T, dataset.p
        self.l1 = penalty.l1
        self.ridge = penalty.ridge
        self.a = penalty.lambda2 * penalty.tv_weights(self.T)
        self.beta_f = float(np.max(dataset.lipschitz)) + self.ridge

    def smooth(self, B) -> float:
        R = self.ds.y - self.ds.predict(B)
        return 0.5 * float(np.sum(R * R)) + 0.5 * self.ridge * float(np.sum(B * B))

    def grad(self, B):
        return self.ds.rmatvec(self.ds.predict(B) - self.ds.y) + self.ridge * B

    def l1_term(self, B) -> float:
        return self.l1 * float(np.sum(np.abs(B)))

    def tv(self, B) -> float:
        if self.T < 2:
            return 0.0
        return float(self.a @ np.linalg.norm(np.diff(B, axis=0), axis=1))

    def F(self, B) -> float:
        return self.smooth(B) + self.l1_term(B) + self.tv(B)

    @staticmethod
    def D(B):
        return B[1:] - B[:-1]

    @staticmethod
    def Dt(V):
        T = V.shape[0] + 1
        out = np.zeros((T, V.shape[1]))
        out[1:] += V
        out[:-1] -= V
        return out

    def soft(self, B, step):
        lam = self.l1 * step
        return np.sign(B) * np.maximum(np.abs(B) - lam, 0.0)

    def project_balls(self, V):
        nrm = np.linalg.norm(V, axis=1)
        s = np.where(nrm > self.a, self.a / np.where(nrm > 0, nrm, 1.0), 1.0)
        return V * s[:, None]


def group_soft_threshold(V, thresh):
    """Rowwise ``(1 - thresh / ||v||)_+ v`` (prox of a sum of l2 norms)."""
    V = np.asarray(V, dtype=np.float64)
    squeeze = V.ndim == 1
    V = np.atleast_2d(V)
    thresh = np.broadcast_to(np.asarray(thresh, dtype=np.float64), V.shape[:1])
    nrm = np.linalg.norm(V, axis=1)
    s = np.maximum(1.0 - thresh / np.where(nrm > 0, nrm, 1.0), 0.0)
    out = V * s[:, None]
    return out[0] if squeeze else out


class _Tracker:
    def __init__(self, ops: _Ops, method: str):
        self.ops = ops
        self.trace = BaselineTrace(method)
        self.best_B = None
        self.t0 = time.perf_counter()

    def see(self, B):
        Fv = self.ops.F(B)
        if not np.isfinite(Fv):
            raise FloatingPointError(f"{self.trace.method} diverged")
        self.trace.objective.append(Fv)
        self.trace.times.append(time.perf_counter() - self.t0)
        if Fv < self.trace.best:
            self.trace.best = Fv
            self.best_B = B.copy()
        return Fv


def _best_of(run, n_iter):
    """Best objective of a short trial run; inf on divergence."""
    try:
        with np.errstate(all="ignore"):
            best = np.inf
            for Fv in run(n_iter):
                if not np.isfinite(Fv):
                    return np.inf
                best = min(best, Fv)
            return best
    except FloatingPointError:
        return np.inf


def _tune(grid, trial):
    """Walk the grid while the best-of-trial objective improves."""
    results = []
    best_val, best_score = None, np.inf
    for v in grid:
        score = trial(v)
        results.append((float(v), float(score)))
        if score < best_score:
            best_val, best_score = v, score
        elif best_val is not None:
            break
    return best_val, results


# ---------------------------------------------------------------- primal-dual

def _flush(A):
    # over-relaxation shrinks zeroed entries geometrically into subnormals,
    # which are very slow on most hardware
    A[np.abs(A) < TINY] = 0.0
    return A


def _pd_iter(ops: _Ops, tau: float, sigma: float, rho: float, B=None, V=None):
    B = np.zeros((ops.T, ops.p)) if B is None else B.copy()
    V = np.zeros((max(ops.T - 1, 0), ops.p)) if V is None else V.copy()
    while True:
        Bt = ops.soft(B - tau * (ops.grad(B) + ops.Dt(V)), tau)
        Vt = ops.project_balls(V + sigma * ops.D(2.0 * Bt - B))
        B = _flush(rho * Bt + (1.0 - rho) * B)
        V = _flush(rho * Vt + (1.0 - rho) * V)
        # Vt is the projected dual; V may leave the balls through relaxation
        yield B, V, Vt


def pd_solve(dataset: Dataset, penalty: PenaltyConfig,
             config: Optional[BaselineConfig] = None):
    """Primal-dual splitting (Condat-Vu) with relaxation.

    ``sigma = 0.25 (1/tau - beta_f)``; ``tau`` is chosen from the grid by
    the best objective after ``trial_iters`` iterations, walking up the grid
    while that improves.

    Returns
    -------
    coefficients : ndarray (T, p)
    trace : BaselineTrace
    """
    config = config or BaselineConfig()
    ops = _Ops(dataset, penalty)
    rho = config.pd_relaxation
    t0 = time.perf_counter()

    def sigma_of(tau):
        return 0.25 * (1.0 / tau - ops.beta_f)

    feasible = [t for t in sorted(config.tau_grid) if sigma_of(t) > 0]
    if not feasible:
        raise TuningError("no tau in the grid satisfies 1/tau > max ||X_t'X_t||")

    def trial(tau):
        gen = _pd_iter(ops, tau, sigma_of(tau), rho)
        return _best_of(lambda n: (ops.F(next(gen)[0]) for _ in range(n)),
                        config.trial_iters)

    tau, results = _tune(feasible, trial)
    if tau is None:
        raise TuningError("every tau candidate diverged")
    tr = _Tracker(ops, "PD")
    tr.trace.tuning = {"tau": float(tau), "sigma": float(sigma_of(tau)), "rho": rho,
                       "trials": results}
    tr.trace.tuning_time = time.perf_counter() - t0
    tr.t0 = time.perf_counter()
    gen = _pd_iter(ops, tau, sigma_of(tau), rho)
    for _ in range(config.iterations):
        tr.see(next(gen)[0])
    tr.trace.wall_time = time.perf_counter() - t0
    return tr.best_B, tr.trace


# --------------------------------------------------------------------- ADMM

def linearized_x_update(dataset: Dataset, penalty: PenaltyConfig, B, Zv, U,
                        rho: float, mu: Optional[float] = None):
    """One linearized ADMM step for ``beta``.

    Soft-thresholds ``B - (grad f(B) + rho D'(D B - Z + U)) / mu`` at
    ``alpha lam1 / mu``; ``mu`` defaults to ``max ||X_t'X_t|| + ridge + 4 rho``.
    """
    ops = _Ops(dataset, penalty)
    mu = ops.beta_f + 4.0 * rho if mu is None else mu
    return _lin_step(ops, np.asarray(B, float), Zv, U, rho, mu)


def _lin_step(ops, B, Zv, U, rho, mu):
    G = ops.grad(B) + rho * ops.Dt(ops.D(B) - Zv + U)
    return ops.soft(B - G / mu, 1.0 / mu)


def _admm_iter(ops: _Ops, rho: float, config: BaselineConfig, linearized: bool,
               flags: list):
    T, p = ops.T, ops.p
    B = np.zeros((T, p))
    Zv = np.zeros((max(T - 1, 0), p))
    U = np.zeros_like(Zv)
    mu = ops.beta_f + 4.0 * rho
    thresh = ops.a / rho
    inner = FistaConfig(mode="constant", L=mu, rel_tol=config.inner_tol,
                        max_iter=config.inner_max_iter)
    while True:
        if linearized:
            B = _lin_step(ops, B, Zv, U, rho, mu)
        else:
            W = Zv - U
            f = lambda X: ops.smooth(X) + 0.5 * rho * float(np.sum((ops.D(X) - W) ** 2))  # noqa: E731
            g = lambda X: ops.grad(X) + rho * ops.Dt(ops.D(X) - W)  # noqa: E731
            B, tr = fista(f, g, lambda X, L: ops.soft(X, 1.0 / L), B, inner, g=ops.l1_term)
            if tr.reason == "max_iter":
                msg = "ADMM inner lasso hit its iteration limit"
                if msg not in flags:
                    flags.append(msg)
        DB = ops.D(B)
        Z_old = Zv
        Zv = group_soft_threshold(DB + U, thresh)
        U = U + DB - Zv
        res = (float(np.linalg.norm(DB - Zv)), rho * float(np.linalg.norm(ops.Dt(Zv - Z_old))))
        yield B, Zv, U, res


def _admm_solve(dataset, penalty, config, linearized):
    config = config or BaselineConfig()
    ops = _Ops(dataset, penalty)
    name = "LADMM" if linearized else "ADMM"
    t0 = time.perf_counter()
    flags: list = []

    def trial(rho):
        gen = _admm_iter(ops, rho, config, linearized, flags)
        return _best_of(lambda n: (ops.F(next(gen)[0]) for _ in range(n)),
                        config.trial_iters)

    rho, results = _tune(list(config.rho_grid), trial)
    if rho is None:
        raise TuningError("every rho candidate diverged")
    tr = _Tracker(ops, name)
    tr.trace.tuning = {"rho": float(rho), "trials": results}
    tr.trace.tuning_time = time.perf_counter() - t0
    tr.t0 = time.perf_counter()
    gen = _admm_iter(ops, rho, config, linearized, flags)
    for _ in range(config.iterations):
        B, Zv, U, res = next(gen)
        tr.see(B)
        tr.trace.residuals.append(res)
    tr.trace.flags = flags
    tr.trace.wall_time = time.perf_counter() - t0
    return tr.best_B, tr.trace


def admm_solve(dataset: Dataset, penalty: PenaltyConfig,
               config: Optional[BaselineConfig] = None):
    """ADMM on the split ``z = D beta`` with an inner lasso solve per step.

    ``rho`` is tuned down the grid from its largest value.  The trace keeps
    the primal and dual residuals ``(||D beta - z||, rho ||D'(z - z_prev)||)``
    of every iteration.
    """
    return _admm_solve(dataset, penalty, config, linearized=False)


def ladmm_solve(dataset: Dataset, penalty: PenaltyConfig,
                config: Optional[BaselineConfig] = None):
    """Linearized ADMM: the lasso step becomes one soft-thresholding step
    with curvature ``beta_f + 4 rho``."""
    return _admm_solve(dataset, penalty, config, linearized=True)


# ---------------------------------------------------------------------- SPG

def smoothed_tv(B, penalty: PenaltyConfig, mu: float):
    """Smoothed TV value and gradient.

    ``lam2 sum_t max_{||q|| <= w_t} <q, D_t B> - mu ||q||^2``; the dual
    maximizer is ``q_t = clip(D_t B / (2 mu))`` onto the ball of radius
    ``w_t``.  The gap to the exact TV is at most ``lam2 mu sum_t w_t^2``.
    """
    B = np.asarray(B, dtype=np.float64)
    T = B.shape[0]
    if T < 2:
        return 0.0, np.zeros_like(B)
    w = penalty.tv_weights(T)
    D = B[1:] - B[:-1]
    Q = D / (2.0 * mu)
    nrm = np.linalg.norm(Q, axis=1)
    Q *= np.where(nrm > w, w / np.where(nrm > 0, nrm, 1.0), 1.0)[:, None]
    val = penalty.lambda2 * float(np.sum(Q * D) - mu * np.sum(Q * Q))
    return val, penalty.lambda2 * _Ops.Dt(Q)


def spg_solve(dataset: Dataset, penalty: PenaltyConfig,
              config: Optional[BaselineConfig] = None):
    """Smoothing proximal gradient with restarts.

    FISTA on the smoothed objective; whenever the true objective fails to
    improve for ``spg_stall`` iterations, ``mu`` is multiplied by
    ``spg_decay`` and FISTA restarts from the best point.
    """
    config = config or BaselineConfig()
    ops = _Ops(dataset, penalty)
    w = penalty.tv_weights(ops.T)
    wmax = float(w.max()) if w.size else 0.0
    mu = config.spg_mu0 if config.spg_mu0 is not None else 1e-2 * penalty.lambda2 * wmax
    mu = max(mu, config.spg_mu_floor)
    tr = _Tracker(ops, "SPG")
    tr.trace.tuning = {"mu0": mu, "schedule": []}
    B = np.zeros((ops.T, ops.p))
    tr.see(B)
    total = 0
    while total < config.spg_max_iter:
        tr.trace.tuning["schedule"].append((total, mu))
        L = ops.beta_f + (2.0 * penalty.lambda2 / mu if ops.T > 1 else 0.0)
        L = max(L, 1e-12)
        X_prev = tr.best_B.copy()
        Y = X_prev.copy()
        a = 1.0
        stall, best_here = 0, tr.trace.best
        while total < config.spg_max_iter:
            G = ops.grad(Y) + smoothed_tv(Y, penalty, mu)[1]
            X = ops.soft(Y - G / L, 1.0 / L)
            total += 1
            Fv = tr.see(X)
            if Fv < best_here:
                best_here, stall = Fv, 0
            else:
                stall += 1
            a_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * a * a))
            Y = X + ((a - 1.0) / a_next) * (X - X_prev)
            X_prev, a = X, a_next
            if stall >= config.spg_stall:
                break
        if mu <= config.spg_mu_floor:
            if stall >= config.spg_stall:
                tr.trace.flags.append("mu schedule exhausted")
                break
            continue
        mu = max(mu * config.spg_decay, config.spg_mu_floor)
    tr.trace.wall_time = time.perf_counter() - tr.t0
    return tr.best_B, tr.trace


# ---------------------------------------------------------------- two-step

def _pooled_elastic_net(G, c, n, lam1, alpha, start):
    l1 = alpha * lam1 * n
    ridge = (1.0 - alpha) * lam1 * n
    L = max(float(np.linalg.eigvalsh(G)[-1]) + ridge, 1e-12)
    f = lambda b: 0.5 * b @ G @ b - c @ b + 0.5 * ridge * b @ b  # noqa: E731
    g = lambda b: G @ b - c + ridge * b  # noqa: E731
    cfg = FistaConfig(mode="constant", L=L, rel_tol=1e-14, max_iter=20000, window=20)
    x, _ = fista(f, g, lambda v, L: np.sign(v) * np.maximum(np.abs(v) - l1 / L, 0.0),
                 start, cfg, g=lambda b: l1 * float(np.sum(np.abs(b))))
    return x


def two_step_solve(dataset: Dataset, penalty2: PenaltyConfig,
                   penalty1: Union[PenaltyConfig, float], config=None):
    """Segment with ``lam1 = 0``, then fit an elastic net per segment.

    Parameters
    ----------
    penalty2 : PenaltyConfig
        Supplies ``lambda2`` and the TV weights for the segmentation step.
    penalty1 : PenaltyConfig or float
        Supplies ``lambda1`` (and ``alpha``) for the per-segment fits; the
        l1 scale of a segment of length n is ``alpha lambda1 n``.
    config : HybridConfig, optional
        Settings for the segmentation solve.

    Returns
    -------
    solution : Solution
        Objective evaluated with ``lambda1`` from ``penalty1`` and
        ``lambda2`` from ``penalty2``.
    report : SolverReport
        Report of the segmentation step.
    """
    from .hybrid import solve_sgfl

    if not isinstance(penalty1, PenaltyConfig):
        penalty1 = PenaltyConfig(float(penalty1), 0.0)
    seg_pen = penalty2.replace(lambda1=0.0)
    seg_sol, report = solve_sgfl(dataset, seg_pen, config)
    seg = seg_sol.segmentation
    G, c = dataset.grams, dataset.xty
    coef = np.empty((seg.K, dataset.p))
    for k, (a, b) in enumerate(zip(seg.starts, seg.ends)):
        coef[k] = _pooled_elastic_net(G[a:b].sum(0), c[a:b].sum(0), b - a,
                                      penalty1.lambda1, penalty1.alpha, seg_sol.coef[k])
    full = penalty2.replace(lambda1=penalty1.lambda1, alpha=penalty1.alpha)
    sol = Solution(coef, seg)
    # neighbouring segments may coincide after refitting (e.g. both zero)
    sol = Solution.from_dense(sol.expand())
    return Solution(sol.coef, sol.segmentation, evaluate_objective(dataset, full, sol)), report


# ----------------------------------------------------------- post-processing

def approximate_segmentation(B, rtol: float = 1e-6) -> Segmentation:
    """Change points where ``||b_{t+1} - b_t|| > rtol * (1 + max_t ||b_t||)``.

    Approximate: dense solvers never produce exact fusions.
    """
    B = np.asarray(B, dtype=np.float64)
    scale = 1.0 + float(np.max(np.linalg.norm(B, axis=1))) if B.size else 1.0
    jumps = np.linalg.norm(np.diff(B, axis=0), axis=1) > rtol * scale
    return Segmentation(np.concatenate(([0], np.flatnonzero(jumps) + 1)), B.shape[0])


def threshold_coefficients(B, rtol: float = 1e-8):
    """Zero entries with ``|b| <= rtol * (1 + max |b|)``; for metrics on dense output."""
    B = np.array(B, dtype=np.float64, copy=True)
    scale = 1.0 + (float(np.max(np.abs(B))) if B.size else 0.0)
    B[np.abs(B) <= rtol * scale] = 0.0
    return B
