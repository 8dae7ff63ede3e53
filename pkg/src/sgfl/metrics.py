"""Change-point and support metrics, information criteria, refits and grids."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np

from .problem import Dataset, Segmentation, Solution, SolverReport, _as_dense

__all__ = [
    "Metrics",
    "hausdorff_distance",
    "classification_metrics",
    "pseudo_r2",
    "free_parameters",
    "information_criterion",
    "hbic",
    "bic",
    "sgfl_ols_refit",
    "lambda1_max",
    "lambda2_ceiling",
    "build_grid",
    "evaluate_fit",
]


@dataclass
class Metrics:
    ncp: int
    hausdorff: float
    tpr: float
    ppv: float
    sparsity: float
    r2: float
    flags: list = field(default_factory=list)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("flags")
        return d


def hausdorff_distance(A: Iterable[int], B: Iterable[int], T: Optional[int] = None) -> float:
    """Hausdorff distance between two finite index sets.

    If exactly one set is empty the distance is ``T`` (the worst case);
    two empty sets are at distance 0.
    """
    A = np.unique(np.asarray(list(A), dtype=np.int64))
    B = np.unique(np.asarray(list(B), dtype=np.int64))
    if A.size == 0 and B.size == 0:
        return 0.0
    if A.size == 0 or B.size == 0:
        if T is None:
            raise ValueError("T is required when one change-point set is empty")
        return float(T)
    D = np.abs(A[:, None] - B[None, :])
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def classification_metrics(beta_hat, beta_true) -> dict:
    """Support recovery rates of an estimate.

    Nonzero means exactly nonzero.  If ``beta_hat`` is all zero, PPV is 1
    when ``beta_true`` is also all zero and 0 otherwise; if ``beta_true``
    has no nonzeros TPR is 1.  Both cases are flagged.

    Returns
    -------
    dict with keys ``tpr``, ``ppv``, ``sparsity`` and ``flags``.
    """
    bh = np.asarray(beta_hat, dtype=np.float64)
    bt = np.asarray(beta_true, dtype=np.float64)
    if bh.shape != bt.shape:
        raise ValueError("estimate and truth must have the same shape")
    nh, nt = bh != 0, bt != 0
    hits = int(np.sum(nh & nt))
    flags = []
    if nt.any():
        tpr = hits / int(nt.sum())
    else:
        tpr = 1.0
        flags.append("true coefficients all zero: TPR set to 1")
    if nh.any():
        ppv = hits / int(nh.sum())
    else:
        ppv = 1.0 if not nt.any() else 0.0
        flags.append(f"estimate all zero: PPV set to {ppv:g}")
    return {"tpr": tpr, "ppv": ppv, "sparsity": float(np.mean(~nh)), "flags": flags}


def pseudo_r2(dataset: Dataset, beta_hat) -> float:
    """``1 - RSS / sum_t ||y_t - ybar||^2`` with ``ybar`` the mean response vector."""
    if dataset.T * dataset.d < 2:
        raise ValueError("need at least two observations")
    y = dataset.y
    tss = float(np.sum((y - y.mean(axis=0)) ** 2))
    if tss == 0:
        raise ValueError("response has zero total variance")
    return 1.0 - dataset.rss(_as_dense(dataset, beta_hat)) / tss


def free_parameters(solution) -> int:
    """Nonzero entries of the increments ``beta_t - beta_{t-1}``, ``beta_0 = 0``."""
    if isinstance(solution, Solution):
        C = solution.coef
    else:
        C = Solution.from_dense(solution).coef
    inc = np.diff(np.vstack([np.zeros((1, C.shape[1])), C]), axis=0)
    return int(np.count_nonzero(inc))


def information_criterion(rss: float, n_obs: int, n_free: int, multiplier: float) -> float:
    """``n_obs log(RSS) + multiplier * n_free``; ``-inf`` (with a warning) at zero RSS."""
    if rss < 0:
        raise ValueError("RSS must be nonnegative")
    if rss == 0:
        warnings.warn("zero residual sum of squares: criterion is -inf", RuntimeWarning)
        return float("-inf")
    return n_obs * float(np.log(rss)) + multiplier * n_free


def hbic(dataset: Dataset, solution, gamma: float) -> float:
    """High-dimensional BIC, multiplier ``2 gamma log p``."""
    if gamma < 1:
        raise ValueError("gamma must be at least 1")
    rss = dataset.rss(_as_dense(dataset, solution))
    return information_criterion(rss, dataset.d * dataset.T, free_parameters(solution),
                                 2.0 * gamma * np.log(dataset.p))


def bic(dataset: Dataset, solution) -> float:
    """BIC, multiplier ``log(dT)``."""
    n = dataset.d * dataset.T
    rss = dataset.rss(_as_dense(dataset, solution))
    return information_criterion(rss, n, free_parameters(solution), np.log(n))


def _merge_short(coef, starts, lengths, min_len):
    coef = [np.asarray(c) for c in coef]
    starts, lengths = list(starts), list(lengths)
    while len(lengths) > 1:
        short = [k for k, n in enumerate(lengths) if n < min_len]
        if not short:
            break
        k = min(short, key=lambda j: (lengths[j], j))
        if k == 0:
            into = 1
        elif k == len(lengths) - 1:
            into = k - 1
        else:
            dl = np.linalg.norm(coef[k] - coef[k - 1])
            dr = np.linalg.norm(coef[k] - coef[k + 1])
            into = k - 1 if dl <= dr else k + 1
        lo = min(k, into)
        lengths[into] += lengths[k]
        starts[into] = starts[lo]
        del coef[k], starts[k], lengths[k]
    return coef, starts


def sgfl_ols_refit(dataset: Dataset, solution: Solution, min_segment_len: int = 1,
                   report: Optional[SolverReport] = None) -> Solution:
    """Least-squares refit on the estimated segments and supports.

    Segments shorter than ``min_segment_len`` are absorbed (shortest first)
    by the neighbour whose coefficients are closer, ties going left; the
    absorbing segment keeps its support.  Each segment is then refit by
    least squares on its support columns.  Rank-deficient systems get the
    minimum-norm solution and a flag (on ``report`` or as a warning).
    """
    if min_segment_len < 1:
        raise ValueError("min_segment_len must be at least 1")
    seg = solution.segmentation
    coef, starts = _merge_short(solution.coef, seg.starts, seg.lengths, min_segment_len)
    new_seg = Segmentation(starts, seg.T)
    X, y = dataset.X, dataset.y
    out = np.zeros((new_seg.K, dataset.p))
    for k, (a, b) in enumerate(zip(new_seg.starts, new_seg.ends)):
        S = np.flatnonzero(coef[k])
        if S.size == 0:
            continue
        A = X[a:b][:, :, S].reshape(-1, S.size)
        sol, _, rank, _ = np.linalg.lstsq(A, y[a:b].reshape(-1), rcond=None)
        if rank < S.size:
            msg = f"segment {k}: rank-deficient refit ({rank} < {S.size}), minimum-norm solution"
            if report is not None:
                report.flag(msg)
            else:
                warnings.warn(msg, RuntimeWarning)
        out[k, S] = sol
    return Solution(out, new_seg)


def lambda1_max(dataset: Dataset, alpha: float = 1.0) -> float:
    """Smallest ``lambda1`` at which the fully fused fit is zero.

    ``||sum_t X_t'y_t||_inf / T``, divided by ``alpha`` for the elastic net.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    return float(np.max(np.abs(dataset.xty.sum(axis=0)))) / dataset.T / alpha


def lambda2_ceiling(dataset: Dataset) -> float:
    """Data-scale ceiling ``max_t ||X_t'y_t||`` for the TV grid."""
    return float(np.max(np.linalg.norm(dataset.xty, axis=1)))


def _axis(top, n, scale, floor_ratio):
    if n == 1:
        return np.array([top])
    lo = floor_ratio * top
    if scale == "log":
        return np.geomspace(top, lo, n)
    return np.linspace(top, lo, n)


def build_grid(dataset: Dataset, n1: int, n2: int, scale: str = "log",
               floor_ratio: float = 0.01, alpha: float = 1.0,
               lambda2_range: Optional[tuple] = None) -> np.ndarray:
    """Product grid of ``(lambda1, lambda2)`` pairs.

    Each axis runs from its ceiling down to ``floor_ratio`` times the
    ceiling, equispaced on the chosen scale.  The ``lambda1`` ceiling is
    :func:`lambda1_max`; the ``lambda2`` range defaults to
    ``[floor_ratio * c, c]`` with ``c`` from :func:`lambda2_ceiling`.

    Returns
    -------
    ndarray, shape (n1 * n2, 2)
        Rows ordered by decreasing ``lambda2`` and, within each, by
        decreasing ``lambda1``.
    """
    if n1 < 1 or n2 < 1:
        raise ValueError("grid counts must be positive")
    if not 0 < floor_ratio < 1:
        raise ValueError("floor_ratio must lie in (0, 1)")
    if scale not in ("log", "linear"):
        raise ValueError("scale must be 'log' or 'linear'")
    top1 = lambda1_max(dataset, alpha)
    if not top1 > 0:
        raise ValueError("lambda1_max is zero: degenerate lambda1 range")
    g1 = _axis(top1, n1, scale, floor_ratio)
    if lambda2_range is None:
        top2 = lambda2_ceiling(dataset)
        if not top2 > 0:
            raise ValueError("lambda2 ceiling is zero: degenerate lambda2 range")
        g2 = _axis(top2, n2, scale, floor_ratio)
    else:
        lo, hi = (float(v) for v in lambda2_range)
        if not 0 < lo < hi:
            raise ValueError("lambda2_range must satisfy 0 < min < max")
        g2 = np.array([hi]) if n2 == 1 else _axis(hi, n2, scale, lo / hi)
    return np.array([(a, b) for b in g2 for a in g1])


def evaluate_fit(dataset: Dataset, estimate, beta_true, true_segmentation: Segmentation,
                 segmentation: Optional[Segmentation] = None) -> Metrics:
    """All table metrics for one fit.

    ``estimate`` may be a :class:`Solution` or dense coefficients; dense
    input needs ``segmentation`` or is segmented by exact equality.
    """
    B = _as_dense(dataset, estimate)
    if segmentation is None:
        segmentation = (estimate.segmentation if isinstance(estimate, Solution)
                        else Segmentation.from_coefficients(B))
    cls = classification_metrics(B, beta_true)
    return Metrics(ncp=segmentation.K - 1,
                   hausdorff=hausdorff_distance(segmentation.change_points(),
                                                true_segmentation.change_points(), dataset.T),
                   tpr=cls["tpr"], ppv=cls["ppv"], sparsity=cls["sparsity"],
                   r2=pseudo_r2(dataset, B), flags=cls["flags"])
