"""Solves over a regularization grid with warm starts."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .hybrid import HybridConfig, SolverError, solve_sgfl
from .metrics import bic, hbic
from .problem import Dataset, PenaltyConfig, Solution, SolverReport

__all__ = ["PathPoint", "point_seed", "fit_path", "path_table", "select"]


@dataclass
class PathPoint:
    i: int
    j: int
    lambda1: float
    lambda2: float
    solution: Optional[Solution]
    report: SolverReport
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.solution is not None and not self.error


def point_seed(seed: int, i: int, j: int) -> int:
    """Seed of grid point ``(i, j)``, independent of evaluation order."""
    return int(np.random.SeedSequence([seed, i, j]).generate_state(1)[0])


def _rows(grid):
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[1] != 2 or grid.shape[0] == 0:
        raise ValueError("grid must be a nonempty (n, 2) array of (lambda1, lambda2)")
    l2 = list(dict.fromkeys(grid[:, 1].tolist()))
    rows = []
    for j, v in enumerate(l2):
        l1 = grid[grid[:, 1] == v, 0]
        rows.append((j, v, l1))
    return rows


def _run_row(dataset, row, alpha, weights, config, seed, warm_start):
    j, lam2, l1s = row
    out, start = [], None
    for i, lam1 in enumerate(l1s):
        pen = PenaltyConfig(float(lam1), float(lam2), alpha, weights)
        cfg = replace(config, seed=point_seed(seed, i, j))
        try:
            sol, rep = solve_sgfl(dataset, pen, cfg, start=start)
            out.append(PathPoint(i, j, float(lam1), float(lam2), sol, rep))
            if warm_start:
                start = sol
        except SolverError as e:
            out.append(PathPoint(i, j, float(lam1), float(lam2), e.solution, e.report, str(e)))
        except (ValueError, FloatingPointError, ArithmeticError) as e:
            rep = SolverReport()
            rep.flag(f"{type(e).__name__}: {e}")
            out.append(PathPoint(i, j, float(lam1), float(lam2), None, rep, str(e)))
    return out


def fit_path(dataset: Dataset, grid, alpha: float = 1.0,
             weights: Optional[Sequence[float]] = None,
             config: Optional[HybridConfig] = None, threads: int = 1,
             seed: int = 0, warm_start: bool = True) -> list:
    """Solve at every grid point.

    Points sharing a ``lambda2`` form a row solved in grid order, each
    warm-started from the previous one.  Rows are independent tasks, so the
    result does not depend on ``threads``.  Failures are recorded on the
    point and the run continues.

    Returns
    -------
    list of PathPoint, in grid order.
    """
    if threads < 1:
        raise ValueError("threads must be positive")
    config = config or HybridConfig()
    rows = _rows(grid)
    args = (alpha, weights, config, seed, warm_start)
    if threads == 1 or len(rows) == 1:
        results = [_run_row(dataset, r, *args) for r in rows]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda r: _run_row(dataset, r, *args), rows))
    return [pt for row in results for pt in row]


def path_table(dataset: Dataset, points: list, gammas: Sequence[float] = (1.0,)) -> list:
    """One record per grid point: objective, K, sparsity, HBIC per gamma, BIC."""
    table = []
    for pt in points:
        rec = {"i": pt.i, "j": pt.j, "lambda1": pt.lambda1, "lambda2": pt.lambda2,
               "status": "ok" if pt.ok else "failed"}
        if pt.solution is not None:
            sol = pt.solution
            rec["objective"] = sol.objective
            rec["K"] = sol.segmentation.K
            rec["sparsity"] = float(np.mean(sol.expand() == 0))
            for g in gammas:
                rec[f"hbic_{g:g}"] = hbic(dataset, sol, g)
            rec["bic"] = bic(dataset, sol)
        table.append(rec)
    return table


def select(table: list, column: str) -> int:
    """Index of the successful row minimizing ``column`` (first on ties)."""
    best, arg = np.inf, -1
    for k, rec in enumerate(table):
        v = rec.get(column)
        if rec["status"] == "ok" and v is not None and v < best:
            best, arg = v, k
    if arg < 0:
        raise ValueError(f"no successful grid point with a finite {column}")
    return arg
