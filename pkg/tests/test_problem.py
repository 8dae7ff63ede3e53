import numpy as np
import pytest

from sgfl import (Dataset, DimensionError, PenaltyConfig, Segmentation, Solution,
                  SolverReport, evaluate_objective, kronecker_lift, lift_response,
                  spectral_norm)

from conftest import random_dataset


def test_objective_single_point():
    ds = Dataset(np.ones((1, 1, 1)), np.ones((1, 1)))
    assert evaluate_objective(ds, PenaltyConfig(1.0, 0.0), np.array([[0.5]])) == pytest.approx(0.625)


def test_objective_two_points():
    ds = Dataset(np.ones((2, 1, 1)), np.ones((2, 1)))
    F = evaluate_objective(ds, PenaltyConfig(1.0, 2.0, weights=[1.0]), np.array([[0.5], [1.0]]))
    assert F == pytest.approx(2.625)


def test_objective_least_squares_is_half_rss():
    ds = random_dataset(6, 3, 4, seed=1)
    B = np.stack([np.linalg.solve(ds.X[t].T @ ds.X[t], ds.X[t].T @ ds.y[t]) for t in range(4)])
    rss = sum(np.sum((ds.y[t] - ds.X[t] @ B[t]) ** 2) for t in range(4))
    assert evaluate_objective(ds, PenaltyConfig(0, 0), B) == pytest.approx(0.5 * rss, rel=1e-12)


def test_objective_elastic_net_term():
    ds = Dataset(np.zeros((1, 1, 2)), np.zeros((1, 1)))
    F = evaluate_objective(ds, PenaltyConfig(2.0, 0.0, alpha=0.25), np.array([[1.0, -2.0]]))
    assert F == pytest.approx(2.0 * (0.25 * 3.0 + 0.75 / 2 * 5.0))


def test_objective_convex():
    ds = random_dataset(3, 4, 5, seed=2)
    pen = PenaltyConfig(0.4, 0.7, alpha=0.6)
    rng = np.random.default_rng(0)
    for _ in range(50):
        A, B = rng.standard_normal((2, 5, 4))
        th = rng.uniform()
        lhs = evaluate_objective(ds, pen, th * A + (1 - th) * B)
        rhs = th * evaluate_objective(ds, pen, A) + (1 - th) * evaluate_objective(ds, pen, B)
        assert lhs <= rhs + 1e-10


def test_objective_separable_without_tv():
    ds = random_dataset(3, 4, 5, seed=4)
    pen = PenaltyConfig(0.4, 0.0)
    B = np.random.default_rng(1).standard_normal((5, 4))
    parts = sum(evaluate_objective(Dataset(ds.X[t:t + 1], ds.y[t:t + 1]), pen, B[t:t + 1])
                for t in range(5))
    assert evaluate_objective(ds, pen, B) == pytest.approx(parts, rel=1e-13)


def test_objective_rejects_bad_input():
    ds = random_dataset(2, 3, 4)
    with pytest.raises(DimensionError):
        evaluate_objective(ds, PenaltyConfig(1, 1), np.zeros((4, 2)))
    with pytest.raises(DimensionError):
        evaluate_objective(ds, PenaltyConfig(1, 1), np.full((4, 3), np.nan))


def test_dataset_validation():
    with pytest.raises(DimensionError):
        Dataset(np.zeros((2, 3, 4)), np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        Dataset(np.full((1, 1, 1), np.inf), np.zeros((1, 1)))


def test_penalty_validation():
    with pytest.raises(ValueError):
        PenaltyConfig(-1, 0)
    with pytest.raises(ValueError):
        PenaltyConfig(1, 1, alpha=1.5)
    with pytest.raises(ValueError):
        PenaltyConfig(1, 1, weights=[1, -1])
    with pytest.raises(DimensionError):
        PenaltyConfig(1, 1, weights=[1, 1]).tv_weights(5)


def test_kronecker_scalar():
    ds = kronecker_lift(np.array([[3.0]]), 2)
    np.testing.assert_array_equal(ds.X[0], [[3, 0], [0, 3]])


def test_kronecker_identity_case():
    x = np.array([[1.0, -2.0, 0.5]])
    np.testing.assert_array_equal(kronecker_lift(x, 1).X[0], x)


def test_kronecker_two_by_two():
    a, b = 1.5, -0.7
    ds = kronecker_lift(np.array([[a, b]]), 2)
    np.testing.assert_array_equal(ds.X[0], [[a, 0, b, 0], [0, a, 0, b]])


def test_kronecker_consistency():
    rng = np.random.default_rng(5)
    T, d, m = 6, 3, 4
    x = rng.standard_normal((T, m))
    A = rng.standard_normal((T, d, m))
    y = np.einsum("tdm,tm->td", A, x)
    ds = lift_response(x, y)
    B = np.stack([A[t].reshape(-1, order="F") for t in range(T)])
    np.testing.assert_allclose(ds.predict(B), y, atol=1e-12)
    dense = Dataset(ds.X, y)
    np.testing.assert_allclose(ds.grams, dense.grams, atol=1e-12)
    np.testing.assert_allclose(ds.lipschitz, dense.lipschitz, rtol=1e-10)
    R = rng.standard_normal((T, d))
    np.testing.assert_allclose(ds.rmatvec(R), dense.rmatvec(R), atol=1e-12)


def test_kronecker_rejects_empty():
    with pytest.raises(DimensionError):
        kronecker_lift(np.zeros((0, 2)), 2)


def test_spectral_norm():
    assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, rel=1e-8)
    assert spectral_norm(np.zeros((3, 3))) == 0.0
    M = np.random.default_rng(0).standard_normal((5, 5))
    M = M @ M.T
    assert spectral_norm(M) == pytest.approx(np.linalg.eigvalsh(M)[-1], rel=1e-8)
    with pytest.raises(DimensionError):
        spectral_norm(np.zeros((2, 3)))


def test_segmentation_roundtrip():
    seg = Segmentation.from_change_points([3, 7], 10)
    assert list(seg.starts) == [0, 2, 6]
    assert seg.change_points() == [3, 7]
    assert list(seg.lengths) == [2, 4, 4]
    assert list(seg.labels()) == [0, 0, 1, 1, 1, 1, 2, 2, 2, 2]
    with pytest.raises(ValueError):
        Segmentation([1, 2], 5)


def test_solution_from_dense_is_canonical():
    B = np.array([[1.0, 0], [1, 0], [2, 0], [2, 0], [2, 0]])
    sol = Solution.from_dense(B)
    assert sol.segmentation.change_points() == [3]
    np.testing.assert_array_equal(sol.expand(), B)
    assert not sol.coef.flags.writeable


def test_report_monotone_and_roundtrip():
    rep = SolverReport()
    for v in (5.0, 4.0, 4.0 + 1e-13):
        rep.record("block", v)
    assert rep.is_monotone()
    rep.record("block", 4.1)
    assert not rep.is_monotone()
    back = SolverReport.from_dict(rep.to_dict())
    assert back.objective_trace == rep.objective_trace
