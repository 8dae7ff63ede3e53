import numpy as np
import pytest

from sgfl import (BaselineConfig, Dataset, PenaltyConfig, SimSpec, TuningError, admm_solve,
                  approximate_segmentation, evaluate_objective, group_soft_threshold,
                  ladmm_solve, linearized_x_update, pd_solve, simulate, smoothed_tv, solve_sgfl,
                  spg_solve, threshold_coefficients, two_step_solve)
from sgfl.baselines import _Ops, _pd_iter
from sgfl.prox import soft_threshold

from conftest import cd_lasso, random_dataset


def test_group_soft_threshold_example():
    np.testing.assert_allclose(group_soft_threshold([3.0, 4.0], 2.5), [1.5, 2.0])
    np.testing.assert_array_equal(group_soft_threshold([3.0, 4.0], 5.0), [0.0, 0.0])
    out = group_soft_threshold(np.array([[3.0, 4.0], [0.0, 0.0]]), [2.5, 1.0])
    np.testing.assert_allclose(out, [[1.5, 2.0], [0.0, 0.0]])


@pytest.mark.parametrize("mu", [1e-2, 1e-4, 1e-6])
def test_smoothing_gap_unit_weights(mu):
    pen = PenaltyConfig(0.0, 1.0)
    rng = np.random.default_rng(0)
    for _ in range(10):
        B = rng.standard_normal((6, 3))
        exact = np.sum(np.linalg.norm(np.diff(B, axis=0), axis=1))
        val, _ = smoothed_tv(B, pen, mu)
        assert 0.0 <= exact - val <= mu * 5 + 1e-12


def test_smoothing_gap_weighted_and_gradient():
    pen = PenaltyConfig(0.0, 2.0, weights=[0.5, 1.0, 2.0, 0.0])
    rng = np.random.default_rng(1)
    mu = 1e-2
    bound = 2.0 * mu * np.sum(np.array([0.5, 1.0, 2.0, 0.0]) ** 2)
    for _ in range(10):
        B = 0.01 * rng.standard_normal((5, 3))
        exact = 2.0 * np.array([0.5, 1.0, 2.0, 0.0]) @ np.linalg.norm(np.diff(B, axis=0), axis=1)
        val, grad = smoothed_tv(B, pen, mu)
        assert 0.0 <= exact - val <= bound + 1e-12
        E = rng.standard_normal(B.shape)
        h = 1e-6
        fd = (smoothed_tv(B + h * E, pen, mu)[0] - smoothed_tv(B - h * E, pen, mu)[0]) / (2 * h)
        assert fd == pytest.approx(np.sum(grad * E), rel=1e-5, abs=1e-9)


def _per_block_lasso(ds, l1):
    return np.stack([cd_lasso(ds.X[t], ds.y[t], l1) for t in range(ds.T)])


def test_spg_without_tv_is_lasso():
    ds = random_dataset(6, 4, 3, seed=2)
    B, tr = spg_solve(ds, PenaltyConfig(0.5, 0.0))
    np.testing.assert_allclose(B, _per_block_lasso(ds, 0.5), atol=1e-8)
    assert tr.best == min(tr.objective)


def test_pd_least_squares():
    ds = random_dataset(6, 3, 4, seed=3)
    B, tr = pd_solve(ds, PenaltyConfig(0.0, 0.0), BaselineConfig(iterations=5000))
    ref = np.stack([np.linalg.solve(ds.X[t].T @ ds.X[t], ds.X[t].T @ ds.y[t]) for t in range(4)])
    np.testing.assert_allclose(B, ref, atol=1e-8)
    assert tr.tuning["sigma"] > 0


def test_pd_dual_stays_in_balls():
    ds = random_dataset(3, 4, 6, seed=4)
    pen = PenaltyConfig(0.2, 0.7, weights=[1.0, 0.5, 2.0, 1.0, 0.1])
    ops = _Ops(ds, pen)
    tau = 0.5 / ops.beta_f
    gen = _pd_iter(ops, tau, 0.25 * (1 / tau - ops.beta_f), 1.9)
    radius = 0.7 * np.array([1.0, 0.5, 2.0, 1.0, 0.1])
    for _ in range(200):
        _, _, Vt = next(gen)
        assert np.all(np.linalg.norm(Vt, axis=1) <= radius * (1 + 1e-12))


def test_pd_infeasible_grid_raises():
    ds = random_dataset(4, 3, 4, seed=5)
    with pytest.raises(TuningError):
        pd_solve(ds, PenaltyConfig(0.1, 0.1), BaselineConfig(tau_grid=(1e3, 1e6)))


def test_tuning_is_reproducible():
    ds = random_dataset(3, 4, 6, seed=6)
    pen = PenaltyConfig(0.2, 0.5)
    cfg = BaselineConfig(iterations=50)
    a = pd_solve(ds, pen, cfg)[1].tuning
    b = pd_solve(ds, pen, cfg)[1].tuning
    assert a == b
    assert ladmm_solve(ds, pen, cfg)[1].tuning == ladmm_solve(ds, pen, cfg)[1].tuning


def test_admm_without_tv_is_lasso():
    ds = random_dataset(6, 4, 3, seed=7)
    B, _ = admm_solve(ds, PenaltyConfig(0.5, 0.0), BaselineConfig(iterations=50))
    np.testing.assert_allclose(B, _per_block_lasso(ds, 0.5), atol=1e-8)


def test_admm_residuals_vanish():
    ds = random_dataset(3, 2, 5, seed=8)
    B, tr = admm_solve(ds, PenaltyConfig(0.2, 0.5), BaselineConfig(iterations=3000))
    res = np.array(tr.residuals)
    assert np.any(np.all(res < 1e-8, axis=1))


def test_linearized_update_formula():
    X = np.array([[[1.0, 2.0], [0.5, -1.0]], [[0.0, 1.0], [2.0, 1.0]]])
    y = np.array([[1.0, 0.0], [-1.0, 2.0]])
    ds = Dataset(X, y)
    pen = PenaltyConfig(0.3, 0.4)
    B = np.array([[0.2, -0.1], [0.4, 0.3]])
    Zv = np.array([[0.1, 0.1]])
    U = np.array([[-0.05, 0.2]])
    rho, mu = 2.0, 20.0
    grad = np.stack([X[t].T @ (X[t] @ B[t] - y[t]) for t in range(2)])
    r = (B[1] - B[0]) - Zv[0] + U[0]
    grad[0] -= rho * r
    grad[1] += rho * r
    expect = soft_threshold(B - grad / mu, 0.3 / mu)
    np.testing.assert_allclose(linearized_x_update(ds, pen, B, Zv, U, rho, mu), expect)


def test_ladmm_agrees_with_admm():
    ds = random_dataset(3, 3, 5, seed=9)
    pen = PenaltyConfig(0.2, 0.5)
    _, ta = admm_solve(ds, pen, BaselineConfig(iterations=3000))
    _, tl = ladmm_solve(ds, pen, BaselineConfig(iterations=20000))
    assert tl.best == pytest.approx(ta.best, rel=1e-6)


def test_baselines_agree_with_hybrid():
    ds = random_dataset(4, 5, 8, seed=10)
    pen = PenaltyConfig(0.3, 1.0)
    sol, _ = solve_sgfl(ds, pen)
    scale = 1 + abs(sol.objective)
    finals = {
        "pd": pd_solve(ds, pen, BaselineConfig(iterations=20000))[1].best,
        "admm": admm_solve(ds, pen, BaselineConfig(iterations=3000))[1].best,
        "ladmm": ladmm_solve(ds, pen, BaselineConfig(iterations=20000))[1].best,
        "spg": spg_solve(ds, pen)[1].best,
    }
    for name, F in finals.items():
        assert F >= sol.objective - 1e-9 * scale, name
        assert F == pytest.approx(sol.objective, rel=1e-5), name


def test_two_step_single_segment_is_pooled_lasso():
    ds = random_dataset(3, 4, 5, seed=11)
    sol, _ = two_step_solve(ds, PenaltyConfig(0.0, 1e6), 0.2)
    assert sol.segmentation.K == 1
    ref = cd_lasso(ds.X.reshape(-1, 4), ds.y.ravel(), 0.2 * 5)
    np.testing.assert_allclose(sol.coef[0], ref, atol=1e-8)
    full = PenaltyConfig(0.2, 1e6)
    assert sol.objective == pytest.approx(evaluate_objective(ds, full, sol))


def test_two_step_recovers_planted_segmentation():
    ds, beta, seg = simulate(SimSpec(d=10, p=5, T=30, change_points=(11, 21),
                                     sparsity=0.4, seed=3))
    sol, _ = two_step_solve(ds, PenaltyConfig(0.0, 2.0), 0.01)
    assert sol.segmentation.change_points() == [11, 21]


def test_approximate_segmentation_and_threshold():
    B = np.array([[1.0, 0.0], [1.0 + 1e-9, 0.0], [2.0, 1e-12], [2.0, 0.0]])
    assert approximate_segmentation(B).change_points() == [3]
    out = threshold_coefficients(B)
    assert out[2, 1] == 0.0 and out[1, 0] == B[1, 0]


def test_trace_serializes():
    ds = random_dataset(3, 3, 4, seed=12)
    _, tr = ladmm_solve(ds, PenaltyConfig(0.1, 0.2), BaselineConfig(iterations=20))
    d = tr.to_dict()
    assert d["method"] == "LADMM" and d["iterations"] == 20
