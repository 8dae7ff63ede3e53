"""Synthetic piecewise-constant regression data."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .problem import Dataset, Segmentation

__all__ = ["SimSpec", "simulate", "n_zeroed"]


def n_zeroed(s: float, p: int) -> int:
    """``round(s * p)`` with halves rounded up."""
    return int(np.floor(s * p + 0.5))


@dataclass(frozen=True)
class SimSpec:
    """Simulation design.

    ``change_points`` are 1-based first indices of new segments, each in
    ``(1, T]``.  ``sparsity`` is the fraction of zeroed coefficients per
    segment; ``rho`` the exchangeable correlation of design entries.
    """

    d: int
    p: int
    T: int
    change_points: Sequence[int] = ()
    sparsity: float = 0.9
    sigma: float = 0.0
    rho: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.d, self.p, self.T) < 1:
            raise ValueError("d, p and T must be positive")
        cps = tuple(int(c) for c in self.change_points)
        if any(c <= 1 or c > self.T for c in cps) or list(cps) != sorted(set(cps)):
            raise ValueError("change points must be distinct, sorted and in (1, T]")
        object.__setattr__(self, "change_points", cps)
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError("sparsity must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")


def simulate(spec: SimSpec):
    """Draw a dataset from the design.

    Returns
    -------
    dataset : Dataset
    beta : ndarray, shape (T, p)
        True coefficients.
    segmentation : Segmentation
        Planted segments.
    """
    rng = np.random.default_rng(spec.seed)
    T, d, p = spec.T, spec.d, spec.p
    z0 = rng.standard_normal()
    X = np.sqrt(spec.rho) * z0 + np.sqrt(1.0 - spec.rho) * rng.standard_normal((T, d, p))
    seg = Segmentation.from_change_points(spec.change_points, T)
    k0 = n_zeroed(spec.sparsity, p)
    coef = rng.standard_normal((seg.K, p))
    for row in coef:
        row[rng.choice(p, size=k0, replace=False)] = 0.0
    beta = coef[seg.labels()]
    y = np.einsum("tdp,tp->td", X, beta)
    if spec.sigma > 0:
        y = y + spec.sigma * rng.standard_normal((T, d))
    return Dataset(X, y), beta, seg
