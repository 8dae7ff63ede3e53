"""Hybrid solver: block descent, fusion cycles, all-chains descent and the
minimal-norm subgradient certificate with a subgradient step.

The working state is a dense (T, p) coefficient array.  Fusions arise only
from exact assignments (simple-solution snaps, merge commits, collision
merges), so the segmentation read off by exact row equality is the one the
algorithm built.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .fista import BacktrackingError, FistaConfig, fista
from .problem import (Dataset, PenaltyConfig, Segmentation, Solution,
                      SolverReport, _as_dense, evaluate_objective)

__all__ = [
    "HybridConfig",
    "SubgradientCertificate",
    "SolverError",
    "block_descent_pass",
    "fusion_cycle_pass",
    "all_chains_descent",
    "min_norm_subgradient",
    "subgradient_step",
    "polish",
    "line_search",
    "solve_sgfl",
]

GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)
# merges of coincident chains may cost this much F (relative) to rounding
MERGE_SLACK = 1e-15


@dataclass(frozen=True)
class HybridConfig:
    """Settings for :func:`solve_sgfl`.

    ``sweep`` is ``"cyclic"`` or ``"random"`` (permutation per pass, seeded
    by ``seed``).  ``certificate_rtol`` scales the certificate threshold
    ``certificate_rtol * (1 + ||Z||_F)``.  The minimal-norm search stops
    when ``||g||`` is below it, or when its duality gap is below
    ``certificate_gap * ||g||^2`` and proves the true minimum norm exceeds
    the threshold; ``-g`` is then a descent direction.  A failed certificate
    first triggers Newton polishing on the current segmentation and support
    (at most ``polish_max_vars`` free coefficients), kept only if it shrinks
    the minimal-norm subgradient.
    """

    epsilon: float = 1e-6
    sweep: str = "cyclic"
    seed: int = 0
    max_rounds: int = 200
    max_passes: int = 20
    local_rel_tol: float = 1e-12
    local_max_iter: int = 5000
    ist_tol: float = 1e-10
    ist_max_iter: int = 10000
    chains: FistaConfig = field(default_factory=lambda: FistaConfig(
        mode="backtracking", L0=1.0, eta=2.0, max_iter=20000, rel_tol=1e-13,
        window=20))
    certificate: FistaConfig = field(default_factory=lambda: FistaConfig(
        mode="constant", L=5.0, max_iter=20000, rel_tol=1e-14, window=0))
    certificate_rtol: float = 1e-6
    certificate_gap: float = 0.1
    collision_rtol: float = 1e-8
    merge_rtol: float = 1e-6
    polish_max_vars: int = 600
    polish_steps: int = 8

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.sweep not in ("cyclic", "random"):
            raise ValueError(f"unknown sweep pattern {self.sweep!r}")
        if self.max_rounds < 1 or self.max_passes < 1:
            raise ValueError("round and pass limits must be positive")
        if not 0 < self.certificate_gap < 0.5:
            raise ValueError("certificate_gap must lie in (0, 0.5)")


@dataclass
class SubgradientCertificate:
    """Minimal-norm subgradient ``G = Z + U + V D'`` (multipliers pre-scaled).

    ``U`` is p x T, ``V`` is p x (T-1); ``g`` stacks the columns of ``G``
    block by block, matching a (T, p) coefficient array flattened row-wise.
    """

    U: np.ndarray
    V: np.ndarray
    g: np.ndarray
    norm: float
    tol: float
    chain_norms: np.ndarray
    n_iter: int = 0
    gap: float = float("nan")

    @property
    def passed(self) -> bool:
        return self.norm <= self.tol

    def as_blocks(self) -> np.ndarray:
        """``g`` reshaped to (T, p)."""
        return self.g.reshape(self.U.shape[1], self.U.shape[0])


class SolverError(RuntimeError):
    """A stage failed; ``solution`` and ``report`` hold the best point so far."""

    def __init__(self, message, solution=None, report=None):
        super().__init__(message)
        self.solution = solution
        self.report = report


class _Problem:
    """Cached per-block and per-chain quantities."""

    def __init__(self, dataset: Dataset, penalty: PenaltyConfig):
        self.ds = dataset
        self.pen = penalty
        self.T, self.p = dataset.T, dataset.p
        self.G = np.array(dataset.grams)
        self.c = np.array(dataset.xty)
        self.yy = np.array(dataset.yy)
        self.Lt = np.array(dataset.lipschitz)
        self.l1 = float(penalty.l1)
        self.ridge = float(penalty.ridge)
        self.a = penalty.lambda2 * penalty.tv_weights(self.T)
        self.zero = np.zeros(self.p)
        self._chains = {}

    def F(self, B) -> float:
        return evaluate_objective(self.ds, self.pen, B)

    def chain(self, a: int, b: int):
        """Gram sum, cross products, ||y||^2 and Lipschitz constant of rows a..b."""
        key = (a, b)
        hit = self._chains.get(key)
        if hit is None:
            if a == b:
                hit = (self.G[a], self.c[a], float(self.yy[a]), float(self.Lt[a]))
            else:
                G = self.G[a:b + 1].sum(axis=0)
                L = float(np.linalg.eigvalsh(G)[-1])
                hit = (G, self.c[a:b + 1].sum(axis=0), float(self.yy[a:b + 1].sum()), L)
            self._chains[key] = hit
        return hit

    def neighbors(self, B, a: int, b: int):
        if a > 0:
            left, aL = B[a - 1], float(self.a[a - 1])
        else:
            left, aL = self.zero, 0.0
        if b < self.T - 1:
            right, aR = B[b + 1], float(self.a[b])
        else:
            right, aR = self.zero, 0.0
        return np.ascontiguousarray(left), np.ascontiguousarray(right), aL, aR

    def solve_local(self, B, a: int, b: int, start, config: HybridConfig):
        """Minimize F over a common value of rows a..b, others fixed.

        Returns ``(value, status)``; the simple-solution branch returns an
        exact copy of the neighbor.
        """
        n = b - a + 1
        G, c, yy, L = self.chain(a, b)
        left, right, aL, aR = self.neighbors(B, a, b)
        ridge = self.ridge * n
        return K.solve_block(G, c, yy, ridge, self.l1 * n, left, right, aL, aR,
                             L + ridge, np.ascontiguousarray(start, dtype=np.float64),
                             config.local_rel_tol, config.local_max_iter,
                             config.ist_tol, config.ist_max_iter)


def _sweep(T: int, config: HybridConfig, rng) -> np.ndarray:
    if config.sweep == "random":
        return rng.permutation(T)
    return np.arange(T)


def _note_status(report: Optional[SolverReport], status: int):
    if report is None or not status:
        return
    if status & K.IST_RESTART:
        report.flag("prox iteration restarted near a neighbor")
    if status & K.IST_MAXITER:
        report.flag("prox iteration hit its iteration limit")
    if status & K.IST_NONFINITE:
        raise FloatingPointError("non-finite value in the prox iteration")


def _working(prob: _Problem, beta) -> np.ndarray:
    return np.array(_as_dense(prob.ds, beta), dtype=np.float64, copy=True)


def block_descent_pass(solution, dataset: Dataset, penalty: PenaltyConfig,
                       sweep=None, config: Optional[HybridConfig] = None,
                       report: Optional[SolverReport] = None, _prob=None) -> Solution:
    """One sweep of block coordinate descent over single time points."""
    config = config or HybridConfig()
    prob = _prob or _Problem(dataset, penalty)
    B = _working(prob, solution)
    order = np.arange(prob.T) if sweep is None else np.asarray(sweep, dtype=np.int64)
    st = K.bcd_pass(prob.G, prob.c, prob.yy, prob.Lt, prob.ridge, prob.l1, prob.a, B,
                    order, config.local_rel_tol, config.local_max_iter,
                    config.ist_tol, config.ist_max_iter)
    _note_status(report, st)
    return Solution.from_dense(B, prob.F(B))


def _chain_of(B, t: int):
    """Exact-equality chain [a, b] containing t."""
    T = B.shape[0]
    a = t
    while a > 0 and np.array_equal(B[a - 1], B[t]):
        a -= 1
    b = t
    while b < T - 1 and np.array_equal(B[b + 1], B[t]):
        b += 1
    return a, b


def fusion_cycle_pass(solution, dataset: Dataset, penalty: PenaltyConfig,
                      sweep=None, config: Optional[HybridConfig] = None,
                      report: Optional[SolverReport] = None, _prob=None) -> Solution:
    """One sweep of single-chain optimization with tentative merges.

    At the start of a non-singleton chain the chain is re-optimized; at the
    end of a chain that is not the last one, the chain and its successor are
    optimized jointly and the merge is kept only if F strictly decreases.
    Chain membership of each sweep index is resolved against the current
    coefficients.
    """
    config = config or HybridConfig()
    prob = _prob or _Problem(dataset, penalty)
    B = _working(prob, solution)
    T = prob.T
    order = np.arange(T) if sweep is None else np.asarray(sweep)
    F = prob.F(B)
    for t in order:
        t = int(t)
        a, b = _chain_of(B, t)
        if t == a and b > a:
            x, st = prob.solve_local(B, a, b, B[t], config)
            _note_status(report, st)
            old = B[a:b + 1].copy()
            B[a:b + 1] = x
            F_new = prob.F(B)
            if F_new > F:
                # the local solver keeps its start, so this only guards rounding
                B[a:b + 1] = old
            else:
                F = F_new
        elif t == b and b < T - 1:
            _, b2 = _chain_of(B, b + 1)
            x, st = prob.solve_local(B, a, b2, B[t], config)
            _note_status(report, st)
            old = B[a:b2 + 1].copy()
            B[a:b2 + 1] = x
            F_new = prob.F(B)
            if F_new < F:
                F = F_new
            else:
                B[a:b2 + 1] = old
    return Solution.from_dense(B, F)


class _Chains:
    """Smooth/nonsmooth split of F over fixed chains."""

    def __init__(self, prob: _Problem, starts):
        self.prob = prob
        self.seg = Segmentation(starts, prob.T)
        s, e = self.seg.starts, self.seg.ends
        self.n = (e - s).astype(np.float64)
        self.labels = self.seg.labels()
        self.G = np.stack([prob.chain(int(a), int(b) - 1)[0] for a, b in zip(s, e)])
        self.c = np.stack([prob.chain(int(a), int(b) - 1)[1] for a, b in zip(s, e)])
        self.Lk = np.array([prob.chain(int(a), int(b) - 1)[3] for a, b in zip(s, e)])
        self.a = prob.a[s[1:] - 1] if self.seg.K > 1 else np.zeros(0)
        self.l1 = prob.l1 * self.n
        self.ridge = prob.ridge * self.n

    def f(self, Bk):
        ds = self.prob.ds
        R = ds.y - ds.predict(Bk[self.labels])
        val = 0.5 * float(np.sum(R * R))
        val += 0.5 * float(self.ridge @ np.einsum("kj,kj->k", Bk, Bk))
        if Bk.shape[0] > 1:
            val += float(self.a @ np.linalg.norm(np.diff(Bk, axis=0), axis=1))
        return val

    def grad(self, Bk):
        g = np.einsum("kij,kj->ki", self.G, Bk) - self.c + self.ridge[:, None] * Bk
        if Bk.shape[0] > 1:
            D = np.diff(Bk, axis=0)
            nrm = np.linalg.norm(D, axis=1)
            safe = np.where(nrm > 0, nrm, 1.0)
            U = np.where(nrm[:, None] > 0, (self.a / safe)[:, None] * D, 0.0)
            g[1:] += U
            g[:-1] -= U
        return g

    def g(self, Bk):
        return float(self.l1 @ np.abs(Bk).sum(axis=1))

    def prox(self, V, L):
        lam = (self.l1 / L)[:, None]
        return np.sign(V) * np.maximum(np.abs(V) - lam, 0.0)

    def F(self, Bk):
        return self.prob.F(Bk[self.labels])

    def L0(self) -> float:
        return max(float(np.max(self.Lk + self.ridge)), 1e-10)


def _close_pairs(Bk, rtol):
    """Indices k with chains k and k+1 within ``rtol``, closest first."""
    D = np.linalg.norm(np.diff(Bk, axis=0), axis=1)
    scale = 1.0 + np.linalg.norm(Bk[:-1], axis=1)
    idx = np.flatnonzero(D <= rtol * scale)
    return idx[np.argsort(D[idx] / scale[idx], kind="stable")]


def _try_merge(ch: _Chains, Bk, k: int, pools, F_ref: float):
    """Merge chains k and k+1 at the best of a few common values.

    Accepted when F does not exceed ``F_ref`` beyond rounding.  Returns
    ``(starts, Bk, F)`` or ``None``.
    """
    n1, n2 = ch.n[k], ch.n[k + 1]
    best, best_F = None, np.inf
    for P in pools:
        for v in (P[k], P[k + 1], (n1 * P[k] + n2 * P[k + 1]) / (n1 + n2)):
            trial = Bk.copy()
            trial[k] = v
            trial[k + 1] = v
            Ft = ch.F(trial)
            if Ft < best_F:
                best, best_F = trial, Ft
    if best is None or best_F > F_ref + MERGE_SLACK * (1.0 + abs(F_ref)):
        return None
    starts = np.delete(ch.seg.starts, k + 1)
    return starts, np.delete(best, k + 1, axis=0), best_F


def all_chains_descent(solution, dataset: Dataset, penalty: PenaltyConfig,
                       config: Optional[HybridConfig] = None,
                       report: Optional[SolverReport] = None, _prob=None) -> Solution:
    """Optimize all chain values jointly with the segmentation held fixed.

    Uses FISTA with backtracking on the chain representatives.  When two
    neighboring chains collide they are merged and FISTA restarts with
    momentum reset.
    """
    config = config or HybridConfig()
    prob = _prob or _Problem(dataset, penalty)
    B = _working(prob, solution)
    starts = Segmentation.from_coefficients(B).starts
    Bk = B[starts].copy()
    budget = starts.size - 1
    while True:
        ch = _Chains(prob, starts)
        F_in = ch.F(Bk)
        hit = {}

        def collide(x, k, hit=hit):
            if x.shape[0] < 2:
                return False
            idx = _close_pairs(x, config.collision_rtol)
            if idx.size:
                hit["x"] = x.copy()
                return True
            return False

        base = config.chains
        cfg = FistaConfig(mode="backtracking", L0=ch.L0(), eta=base.eta,
                          max_iter=base.max_iter, rel_tol=base.rel_tol,
                          window=base.window, monotone_guard=True)
        try:
            x, _ = fista(ch.f, ch.grad, ch.prox, Bk, cfg, g=ch.g, callback=collide)
        except BacktrackingError:
            # stalled at a kink of the TV term; fall back to merging
            if report is not None:
                report.flag("all-chains backtracking stalled at a kink")
            x = Bk
        F_x = ch.F(x)
        if F_x > F_in:
            x, F_x = Bk, F_in
        Bk = x
        merged = False
        pools = (Bk,) if "x" not in hit else (Bk, hit["x"])
        while budget > 0 and Bk.shape[0] > 1:
            done = True
            for k in _close_pairs(Bk, config.merge_rtol):
                res = _try_merge(ch, Bk, int(k), pools, F_x)
                if res is not None:
                    starts, Bk, F_x = res
                    ch = _Chains(prob, starts)
                    pools = (Bk,)
                    budget -= 1
                    merged = True
                    done = False
                    break
            if done:
                break
        if not merged:
            break
    out = Bk[Segmentation(starts, prob.T).labels()]
    return Solution.from_dense(out, prob.F(out))


# stopping test stride for the minimal-norm search
CHECK_EVERY = 5


def _certificate_parts(prob: _Problem, B):
    ds = prob.ds
    Z = ds.rmatvec(ds.predict(B) - ds.y) + prob.ridge * B
    l1 = prob.l1
    sgn = np.sign(B)
    Ufix = sgn != 0
    Ubase = l1 * sgn
    T, p = B.shape
    if T > 1:
        D = B[1:] - B[:-1]
        Vfix = np.any(D != 0, axis=1)
        nrm = np.linalg.norm(D, axis=1)
        Vbase = np.zeros_like(D)
        Vbase[Vfix] = (prob.a[Vfix] / nrm[Vfix])[:, None] * D[Vfix]
    else:
        Vfix = np.zeros(0, dtype=bool)
        Vbase = np.zeros((0, p))
    return Z, Ufix, Ubase, Vfix, Vbase


def _residual(Z, U, V):
    R = Z + U
    if V.shape[0]:
        R[1:] += V
        R[:-1] -= V
    return R


def min_norm_subgradient(solution, dataset: Dataset, penalty: PenaltyConfig,
                         config: Optional[HybridConfig] = None, _prob=None
                         ) -> SubgradientCertificate:
    """Subgradient of minimal norm by projected FISTA (L = 5).

    Multipliers are pre-scaled: U lies in ``[-alpha lam1, alpha lam1]`` with
    fixed signs on the support and V column t lies in the ball of radius
    ``lam2 w_t``, fixed to the scaled unit difference at change points.
    """
    config = config or HybridConfig()
    prob = _prob or _Problem(dataset, penalty)
    B = _working(prob, solution)
    T, p = B.shape
    Z, Ufix, Ubase, Vfix, Vbase = _certificate_parts(prob, B)
    l1 = prob.l1
    radius = prob.a
    tol = config.certificate_rtol * (1.0 + float(np.linalg.norm(Z)))
    nU = T * p

    def project(x):
        U = x[:nU].reshape(T, p)
        V = x[nU:].reshape(T - 1, p) if T > 1 else np.zeros((0, p))
        U = np.where(Ufix, Ubase, np.clip(U, -l1, l1))
        if T > 1:
            nv = np.linalg.norm(V, axis=1)
            s = np.where(nv > radius, radius / np.where(nv > 0, nv, 1.0), 1.0)
            V = np.where(Vfix[:, None], Vbase, V * s[:, None])
        return np.concatenate([U.ravel(), V.ravel()])

    def split(x):
        U = x[:nU].reshape(T, p)
        V = x[nU:].reshape(T - 1, p) if T > 1 else np.zeros((0, p))
        return U, V

    def f(x):
        R = _residual(Z, *split(x))
        return 0.5 * float(np.sum(R * R))

    def grad(x):
        R = _residual(Z, *split(x))
        gV = R[1:] - R[:-1]
        return np.concatenate([R.ravel(), gV.ravel()])

    def fw_gap(R):
        # ||g||^2 - min over the subdifferential of <s, g>
        lin = float(np.sum(Z * R)) + float(np.sum(Ubase[Ufix] * R[Ufix]))
        lin -= l1 * float(np.sum(np.abs(R[~Ufix])))
        if T > 1:
            DR = R[1:] - R[:-1]
            lin += float(np.sum(Vbase[Vfix] * DR[Vfix]))
            lin -= float(radius[~Vfix] @ np.linalg.norm(DR[~Vfix], axis=1))
        return float(np.sum(R * R)) - lin

    def done(x):
        # ||g*||^2 >= ||g||^2 - 2 gap, so a failure is only declared once proven
        R = _residual(Z, *split(x))
        n2 = float(np.sum(R * R))
        if n2 <= tol * tol:
            return True
        gap = fw_gap(R)
        return gap <= config.certificate_gap * n2 and n2 - 2.0 * gap > tol * tol

    # warm start: cancel Z chain by chain, then project
    U0 = np.where(Ufix, Ubase, np.clip(-Z, -l1, l1))
    V0 = np.zeros((max(T - 1, 0), p))
    acc = np.zeros(p)
    for t in range(T - 1):
        if Vfix[t]:
            acc = Vbase[t].copy()
        else:
            acc = acc + Z[t] + U0[t]
        V0[t] = acc
    x0 = project(np.concatenate([U0.ravel(), V0.ravel()]))
    n_iter = 0
    if done(x0):
        x = x0
    else:
        x, trace = fista(f, grad, lambda v, L: project(v), x0, config.certificate,
                         callback=lambda x, k: k % CHECK_EVERY == 0 and done(x))
        n_iter = trace.n_iter
    U, V = split(x)
    R = _residual(Z, U, V)
    seg = Segmentation.from_coefficients(B)
    chain_norms = np.array([np.linalg.norm(R[a:b]) for a, b in zip(seg.starts, seg.ends)])
    return SubgradientCertificate(U=U.T.copy(), V=V.T.copy(), g=R.ravel().copy(),
                                  norm=float(np.linalg.norm(R)), tol=tol,
                                  chain_norms=chain_norms, n_iter=n_iter,
                                  gap=fw_gap(R))


def polish(solution, dataset: Dataset, penalty: PenaltyConfig,
           config: Optional[HybridConfig] = None, _prob=None) -> Optional[Solution]:
    """Newton steps with the segmentation and the zero pattern held fixed.

    With both fixed the objective is smooth in the nonzero chain
    coefficients, so Newton's method reaches working precision in the
    coefficients where objective comparisons cannot.  Returns ``None`` when
    the reduced problem is too large or singular, or when a step would
    change a sign or close a change point.
    """
    config = config or HybridConfig()
    prob = _prob or _Problem(dataset, penalty)
    B = _working(prob, solution)
    seg = Segmentation.from_coefficients(B)
    starts, ends = seg.starts, seg.ends
    K_, p = len(starts), prob.p
    Bk = B[starts].copy()
    free = Bk != 0
    idx = np.flatnonzero(free.ravel())
    if idx.size == 0 or idx.size > config.polish_max_vars:
        return None
    n = (ends - starts).astype(np.float64)
    parts = [prob.chain(int(a), int(b) - 1) for a, b in zip(starts, ends)]
    bound = prob.a[ends[:-1] - 1]
    sign = np.sign(Bk)
    eye = np.eye(p)

    def derivatives(Bk):
        g = np.empty((K_, p))
        H = np.zeros((K_ * p, K_ * p))
        for k, (G, c, _, _) in enumerate(parts):
            r = prob.ridge * n[k]
            g[k] = G @ Bk[k] - c + r * Bk[k] + prob.l1 * n[k] * sign[k]
            H[k * p:(k + 1) * p, k * p:(k + 1) * p] = G + r * eye
        for k in range(K_ - 1):
            if bound[k] == 0:
                continue
            d = Bk[k + 1] - Bk[k]
            nd = np.linalg.norm(d)
            if nd == 0:
                return None, None
            u = d / nd
            g[k] -= bound[k] * u
            g[k + 1] += bound[k] * u
            M = (bound[k] / nd) * (eye - np.outer(u, u))
            i, j = slice(k * p, (k + 1) * p), slice((k + 1) * p, (k + 2) * p)
            H[i, i] += M
            H[j, j] += M
            H[i, j] -= M
            H[j, i] -= M
        return g.ravel()[idx], H[np.ix_(idx, idx)]

    x = Bk.ravel().copy()
    for _ in range(config.polish_steps):
        g, H = derivatives(x.reshape(K_, p))
        if g is None:
            return None
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        x[idx] -= step
        if np.any(np.sign(x[idx]) != sign.ravel()[idx]):
            return None
        if np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(x)):
            break
    Bk = x.reshape(K_, p)
    if np.any(np.all(Bk[1:] == Bk[:-1], axis=1)):
        return None
    out = Bk[seg.labels()]
    return Solution.from_dense(out, prob.F(out))


def line_search(phi, scale: float, max_doublings: int = 200):
    """Minimize a convex function of ``alpha >= 0`` along a ray.

    Brackets by doubling from ``1e-8 * scale`` and refines by golden
    section to width ``1e-10 * scale``.  Returns ``(alpha, phi(alpha))`` or
    ``None`` if no step below ``phi(0)`` was found.
    """
    f0 = phi(0.0)
    a = 1e-8 * scale
    fa = phi(a)
    tries = 0
    while not fa < f0:
        tries += 1
        if tries > 8:
            return None
        a *= 0.1
        fa = phi(a)
    lo = 0.0
    for _ in range(max_doublings):
        f2 = phi(2.0 * a)
        if not f2 < fa:
            hi = 2.0 * a
            break
        lo, a, fa = a, 2.0 * a, f2
    else:
        return a, fa
    best_a, best_f = a, fa
    width = 1e-10 * scale
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = phi(x1), phi(x2)
    while hi - lo > width:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = phi(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = phi(x2)
        for xa, fx in ((x1, f1), (x2, f2)):
            if fx < best_f:
                best_a, best_f = xa, fx
    return best_a, best_f


def _step_scale(prob: _Problem, g: np.ndarray, B) -> float:
    Gb = g.reshape(prob.T, prob.p)
    gg = float(np.sum(Gb * Gb))
    HG = np.einsum("tij,tj->ti", prob.G, Gb) + prob.ridge * Gb
    gHg = float(np.sum(Gb * HG))
    if gHg > 0:
        return gg / gHg
    return (1.0 + float(np.linalg.norm(B))) / np.sqrt(gg)


def subgradient_step(solution, g, dataset: Dataset, penalty: PenaltyConfig, _prob=None):
    """Exact line search along ``-g``.

    Returns ``(Solution, alpha)``, or ``(None, 0.0)`` when no decrease was
    found (``-g`` is not a descent direction to working precision).
    """
    prob = _prob or _Problem(dataset, penalty)
    B = _working(prob, solution)
    g = np.asarray(g, dtype=np.float64).reshape(B.shape)
    if not np.any(g):
        return None, 0.0
    scale = _step_scale(prob, g, B)
    res = line_search(lambda s: prob.F(B - s * g), scale)
    if res is None:
        return None, 0.0
    alpha, Fa = res
    return Solution.from_dense(B - alpha * g, Fa), alpha


def solve_sgfl(dataset: Dataset, penalty: PenaltyConfig,
               config: Optional[HybridConfig] = None, start=None,
               callback=None):
    """Minimize the sparse group fused lasso objective.

    Parameters
    ----------
    dataset : Dataset
    penalty : PenaltyConfig
    config : HybridConfig, optional
    start : Solution or array (T, p), optional
        Starting coefficients; zeros (a single chain) by default.
    callback : callable, optional
        ``callback(stage, solution)`` after every stage; for diagnostics.

    Returns
    -------
    solution : Solution
    report : SolverReport
    """
    config = config or HybridConfig()
    prob = _Problem(dataset, penalty)
    report = SolverReport()
    rng = np.random.default_rng(config.seed)
    eps = config.epsilon
    if start is None:
        sol = Solution.zeros(prob.T, prob.p)
        sol = Solution(sol.coef, sol.segmentation, prob.F(sol))
    else:
        B0 = _working(prob, start)
        sol = Solution.from_dense(B0, prob.F(B0))
    report.record("start", sol.objective)

    def stage(name, fn):
        nonlocal sol
        try:
            new = fn(sol)
        except (FloatingPointError, BacktrackingError, np.linalg.LinAlgError) as exc:
            report.finish("error")
            raise SolverError(f"{name} stage failed: {exc}", sol, report) from exc
        if new.objective > sol.objective + MERGE_SLACK * (1.0 + abs(sol.objective)):
            # every stage keeps its input when it cannot improve
            report.flag(f"{name} stage returned a worse point; kept the input")
            new = sol
        sol = new
        report.record(name, sol.objective)
        if callback is not None:
            callback(name, sol)
        return sol.objective

    def bcd(s):
        return block_descent_pass(s, dataset, penalty, _sweep(prob.T, config, rng),
                                  config, report, prob)

    def fusion(s):
        return fusion_cycle_pass(s, dataset, penalty, _sweep(prob.T, config, rng),
                                 config, report, prob)

    def chains(s):
        return all_chains_descent(s, dataset, penalty, config, report, prob)

    F_prev = sol.objective
    for n_round in range(config.max_rounds):
        while True:
            for _ in range(config.max_passes):
                F0 = sol.objective
                if not stage("block", bcd) < (1.0 - eps) * F0:
                    break
            fused = False
            for _ in range(config.max_passes):
                F0 = sol.objective
                if stage("fusion", fusion) < (1.0 - eps) * F0:
                    fused = True
                else:
                    break
            if not fused:
                break
        stage("chains", chains)
        cert = min_norm_subgradient(sol, dataset, penalty, config, prob)
        report.certificate_norm = cert.norm
        report.certificate_tol = cert.tol
        report.stage_counts["certificate"] = report.stage_counts.get("certificate", 0) + 1
        if not cert.passed:
            pol = polish(sol, dataset, penalty, config, prob)
            if pol is not None and pol.objective <= sol.objective + MERGE_SLACK * (
                    1.0 + abs(sol.objective)):
                pcert = min_norm_subgradient(pol, dataset, penalty, config, prob)
                if pcert.norm < cert.norm:
                    sol, cert = pol, pcert
                    report.record("polish", sol.objective)
                    report.certificate_norm = cert.norm
                    if callback is not None:
                        callback("polish", sol)
        if cert.passed:
            report.finish("certificate")
            return sol, report
        # the round (subgradient step plus the stages after it) stalled
        if n_round > 0 and not sol.objective < (1.0 - eps) * F_prev:
            report.finish("tolerance")
            return sol, report
        new, _ = subgradient_step(sol, cert.g, dataset, penalty, prob)
        if new is None:
            report.flag("line search found no decrease along the certificate direction")
            report.finish("line_search")
            return sol, report
        F_prev = sol.objective
        sol = new
        report.record("subgradient", sol.objective)
        if callback is not None:
            callback("subgradient", sol)
    report.finish("max_rounds")
    return sol, report
