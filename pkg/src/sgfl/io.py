"""On-disk formats: dataset container, coefficient CSV, segmentation JSON."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .problem import DimensionError, Dataset, Segmentation, Solution, lift_response

__all__ = [
    "save_dataset",
    "load_dataset",
    "read_response_csv",
    "write_coefficients",
    "read_coefficients",
    "write_segmentation",
    "read_segmentation",
    "read_weights",
    "write_json",
]

_LE = "<f8"


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_dataset(dataset: Dataset, directory) -> Path:
    """Write ``manifest.json``, ``X.bin`` and ``y.bin`` into ``directory``.

    ``X.bin`` always holds the full T x d x p design; lifted datasets are
    tagged ``mode: "response"`` and are re-lifted on load.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    man = {"T": dataset.T, "d": dataset.d, "p": dataset.p, "layout": "txy",
           "mode": "response" if dataset.lifted else "design"}
    np.ascontiguousarray(dataset.X, dtype=_LE).tofile(d / "X.bin")
    np.ascontiguousarray(dataset.y, dtype=_LE).tofile(d / "y.bin")
    write_json(man, d / "manifest.json")
    return d


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    try:
        man = json.loads((d / "manifest.json").read_text())
        T, dd, p = int(man["T"]), int(man["d"]), int(man["p"])
        mode = man.get("mode", "design")
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise DimensionError(f"unreadable manifest in {d}: {e}") from e
    if man.get("layout", "txy") != "txy" or mode not in ("design", "response"):
        raise DimensionError("unsupported container layout or mode")
    X = np.fromfile(d / "X.bin", dtype=_LE)
    y = np.fromfile(d / "y.bin", dtype=_LE)
    if y.size != T * dd:
        raise DimensionError(f"y.bin holds {y.size} values, expected {T * dd}")
    y = y.reshape(T, dd)
    if X.size != T * dd * p:
        raise DimensionError(f"X.bin holds {X.size} values, expected {T * dd * p}")
    X = X.reshape(T, dd, p)
    if mode == "response":
        if p % dd:
            raise DimensionError("response mode needs p to be a multiple of d")
        # X_t = x_t' kron I_d, so row 0 holds x_t at stride d
        x = X[:, 0, ::dd]
        ds = lift_response(x, y)
        if not np.array_equal(ds.X, X):
            raise DimensionError("response-mode X.bin is not a Kronecker lift")
        return ds
    return Dataset(X, y)


def read_response_csv(path) -> Dataset:
    """Read columns ``t, y_1..y_d, x_1..x_m`` (one row per time point)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DimensionError("CSV needs a header and at least one row")
    head = [h.strip() for h in rows[0]]
    yc = [i for i, h in enumerate(head) if h.startswith("y_")]
    xc = [i for i, h in enumerate(head) if h.startswith("x_")]
    if head[0] != "t" or not yc or not xc:
        raise DimensionError("CSV header must be t, y_1..y_d, x_1..x_m")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as e:
        raise DimensionError(f"non-numeric CSV entry: {e}") from e
    data = data[np.argsort(data[:, 0], kind="stable")]
    return lift_response(data[:, xc], data[:, yc])


def write_coefficients(solution: Solution, path, dense: bool = False):
    """Chain-wise CSV (``chain_start, chain_end`` 1-based inclusive, then the
    coefficients) or, with ``dense``, one row per time point."""
    p = solution.p
    cols = [f"b_{j + 1}" for j in range(p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if dense:
            w.writerow(["t"] + cols)
            for t, row in enumerate(solution.expand()):
                w.writerow([t + 1] + [repr(float(v) + 0.0) for v in row])
        else:
            w.writerow(["chain_start", "chain_end"] + cols)
            seg = solution.segmentation
            for a, b, row in zip(seg.starts, seg.ends, solution.coef):
                w.writerow([int(a) + 1, int(b)] + [repr(float(v) + 0.0) for v in row])


def read_coefficients(path) -> Solution:
    """Read either CSV layout back into a :class:`Solution`."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DimensionError(f"{path} is empty")
    head = rows[0]
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as e:
        raise DimensionError(f"non-numeric coefficient entry: {e}") from e
    if head[:2] == ["chain_start", "chain_end"]:
        starts = body[:, 0].astype(np.int64) - 1
        ends = body[:, 1].astype(np.int64)
        if np.any(starts[1:] != ends[:-1]) or np.any(ends <= starts):
            raise DimensionError("chain rows must tile 1..T")
        return Solution(body[:, 2:], Segmentation(starts, int(ends[-1])))
    if head[:1] == ["t"]:
        return Solution.from_dense(body[:, 1:])
    raise DimensionError("unrecognized coefficient CSV header")


def write_segmentation(seg: Segmentation, path):
    write_json({"T": seg.T, "K": seg.K, "change_points": seg.change_points(),
                "chain_starts": [int(s) + 1 for s in seg.starts]}, path)


def read_segmentation(path) -> Segmentation:
    d = json.loads(Path(path).read_text())
    return Segmentation.from_change_points(d["change_points"], int(d["T"]))


def read_weights(spec: Optional[str], T: int):
    """``None`` or ``"1"`` means unit weights; otherwise a whitespace or
    comma separated file of T-1 values."""
    if spec is None or spec == "1":
        return None
    w = np.array(Path(spec).read_text().replace(",", " ").split(), dtype=np.float64)
    if w.size != T - 1:
        raise DimensionError(f"weights file has {w.size} values, expected {T - 1}")
    return tuple(w.tolist())
