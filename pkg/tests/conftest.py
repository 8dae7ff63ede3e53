import numpy as np
import pytest

from sgfl import Dataset, PenaltyConfig, evaluate_objective


def random_dataset(d, p, T, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((T, d, p))
    y = scale * rng.standard_normal((T, d))
    return Dataset(X, y)


def cd_lasso(A, b, l1, ridge=0.0, iters=20000, tol=1e-15):
    """Coordinate descent for 0.5||Ax - b||^2 + l1 ||x||_1 + ridge/2 ||x||^2."""
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    p = A.shape[1]
    x = np.zeros(p)
    col = np.sum(A * A, axis=0) + ridge
    r = b.copy()
    for _ in range(iters):
        delta = 0.0
        for j in range(p):
            if col[j] == 0:
                continue
            rho = A[:, j] @ r + (col[j] - ridge) * x[j]
            new = np.sign(rho) * max(abs(rho) - l1, 0.0) / col[j]
            if new != x[j]:
                r -= A[:, j] * (new - x[j])
                delta = max(delta, abs(new - x[j]))
                x[j] = new
        if delta <= tol * (1 + np.max(np.abs(x))):
            break
    return x


def cvx_sgfl(dataset, penalty):
    """Reference minimizer from a conic solver."""
    cp = pytest.importorskip("cvxpy")
    T, p = dataset.T, dataset.p
    B = cp.Variable((T, p))
    X, y = dataset.X, dataset.y
    loss = sum(cp.sum_squares(y[t] - X[t] @ B[t]) for t in range(T)) / 2
    obj = loss + penalty.l1 * cp.sum(cp.abs(B)) + 0.5 * penalty.ridge * cp.sum_squares(B)
    if T > 1 and penalty.lambda2 > 0:
        w = penalty.tv_weights(T)
        obj = obj + penalty.lambda2 * cp.sum(cp.multiply(w, cp.norm(B[1:] - B[:-1], 2, axis=1)))
    prob = cp.Problem(cp.Minimize(obj))
    prob.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return B.value, evaluate_objective(dataset, penalty, B.value)


@pytest.fixture
def small_problem():
    ds = random_dataset(4, 6, 8, seed=3)
    return ds, PenaltyConfig(0.3, 1.5)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
