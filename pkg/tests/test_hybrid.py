import numpy as np
import pytest

from sgfl import (Dataset, HybridConfig, PenaltyConfig, SimSpec, Solution, all_chains_descent,
                  block_descent_pass, evaluate_objective, fusion_cycle_pass, lambda1_max,
                  min_norm_subgradient, simulate, solve_sgfl, subgradient_step)
from sgfl.hybrid import line_search, polish

from conftest import cd_lasso, cvx_sgfl, random_dataset

TIGHT = HybridConfig(local_rel_tol=1e-15, local_max_iter=50000)


def _repeat(step, sol, n=200):
    for _ in range(n):
        new = step(sol)
        if new.objective >= sol.objective:
            return new
        sol = new
    return sol


def test_block_pass_single_time_point_is_lasso():
    ds = random_dataset(6, 4, 1, seed=0)
    pen = PenaltyConfig(0.7, 1.0)
    sol = _repeat(lambda s: block_descent_pass(s, ds, pen, config=TIGHT), Solution.zeros(1, 4))
    np.testing.assert_allclose(sol.expand()[0], cd_lasso(ds.X[0], ds.y[0], 0.7), atol=1e-8)


def test_block_pass_snaps_to_equal_neighbors():
    ds = random_dataset(3, 4, 6, seed=1)
    pen = PenaltyConfig(0.1, 1e6)
    B = np.tile(np.array([0.5, 0.0, -1.0, 2.0]), (6, 1))
    B[2] += 0.3
    out = block_descent_pass(Solution.from_dense(B), ds, pen, config=TIGHT).expand()
    assert np.all(out == out[0])
    np.testing.assert_array_equal(out[0], B[0])


def test_block_pass_descent_and_local_optimality(small_problem):
    ds, pen = small_problem
    sol = Solution.zeros(ds.T, ds.p)
    F0 = evaluate_objective(ds, pen, sol)
    sol = _repeat(lambda s: block_descent_pass(s, ds, pen, config=TIGHT), sol)
    assert sol.objective <= F0
    B = sol.expand()
    rng = np.random.default_rng(0)
    for t in range(ds.T):
        for _ in range(20):
            u = rng.standard_normal(ds.p)
            Bp = B.copy()
            Bp[t] += 1e-4 * u / np.linalg.norm(u)
            assert evaluate_objective(ds, pen, Bp) >= sol.objective - 1e-10


def test_fusion_pass_single_chain_is_pooled_lasso():
    ds = random_dataset(3, 5, 6, seed=2)
    pen = PenaltyConfig(0.9, 0.5, alpha=0.7)
    sol = Solution.from_dense(np.full((6, 5), 0.1))
    sol = _repeat(lambda s: fusion_cycle_pass(s, ds, pen, config=TIGHT), sol)
    assert sol.segmentation.K == 1
    ref = cd_lasso(ds.X.reshape(-1, 5), ds.y.ravel(), 0.7 * 0.9 * 6, ridge=0.3 * 0.9 * 6)
    np.testing.assert_allclose(sol.coef[0], ref, atol=1e-8)


def test_fusion_pass_merges_identical_halves():
    rng = np.random.default_rng(3)
    beta = rng.standard_normal(3)
    X = rng.standard_normal((8, 4, 3))
    ds = Dataset(X, np.einsum("tdp,p->td", X, beta))
    pen = PenaltyConfig(0.01, 0.5)
    B = np.vstack([np.tile(beta + 0.2, (4, 1)), np.tile(beta - 0.2, (4, 1))])
    split = Solution.from_dense(B, evaluate_objective(ds, pen, B))
    out = fusion_cycle_pass(split, ds, pen, config=TIGHT)
    assert out.segmentation.K == 1
    assert out.objective < split.objective


def test_fusion_pass_snaps_chain_to_neighbors():
    ds = random_dataset(2, 3, 6, seed=4)
    pen = PenaltyConfig(0.1, 1e6)
    B = np.zeros((6, 3))
    B[2:4] = 1.0
    out = fusion_cycle_pass(Solution.from_dense(B), ds, pen, sweep=[2], config=TIGHT)
    assert out.segmentation.K == 1
    np.testing.assert_array_equal(out.expand(), 0.0)


def test_fusion_pass_never_splits(small_problem):
    ds, pen = small_problem
    sol = solve_sgfl(ds, pen)[0]
    out = fusion_cycle_pass(sol, ds, pen)
    assert out.segmentation.K <= sol.segmentation.K
    assert out.objective <= sol.objective + 1e-12 * (1 + sol.objective)


def test_all_chains_single_chain_matches_fusion_pass():
    ds = random_dataset(3, 4, 5, seed=5)
    pen = PenaltyConfig(0.5, 0.5)
    start = Solution.from_dense(np.full((5, 4), 0.2))
    a = _repeat(lambda s: fusion_cycle_pass(s, ds, pen, config=TIGHT), start)
    b = all_chains_descent(start, ds, pen)
    np.testing.assert_allclose(a.coef, b.coef, atol=1e-8)


def test_all_chains_without_fusion_is_per_block_lasso():
    ds = random_dataset(6, 4, 5, seed=6)
    pen = PenaltyConfig(0.4, 0.0)
    start = Solution.from_dense(np.arange(20, dtype=float).reshape(5, 4))
    out = all_chains_descent(start, ds, pen).expand()
    for t in range(5):
        ref = cd_lasso(ds.X[t], ds.y[t], 0.4)
        blk = Dataset(ds.X[t:t + 1], ds.y[t:t + 1])
        F, F_ref = (evaluate_objective(blk, pen, b[None]) for b in (out[t], ref))
        assert F == pytest.approx(F_ref, rel=1e-9)
        np.testing.assert_allclose(out[t], ref, atol=1e-4)


def test_all_chains_collision_merges():
    rng = np.random.default_rng(7)
    beta = rng.standard_normal(3)
    X = rng.standard_normal((6, 4, 3))
    ds = Dataset(X, np.einsum("tdp,p->td", X, beta))
    pen = PenaltyConfig(0.01, 5.0)
    B = np.vstack([np.tile(beta + 0.05, (3, 1)), np.tile(beta - 0.05, (3, 1))])
    out = all_chains_descent(Solution.from_dense(B), ds, pen)
    assert out.segmentation.K == 1
    direct = all_chains_descent(Solution.from_dense(np.tile(beta, (6, 1))), ds, pen)
    assert out.objective == pytest.approx(direct.objective, rel=1e-9)


def test_certificate_zero_at_least_squares():
    ds = random_dataset(5, 3, 4, seed=8)
    B = np.stack([np.linalg.lstsq(ds.X[t], ds.y[t], rcond=None)[0] for t in range(4)])
    cert = min_norm_subgradient(Solution.from_dense(B), ds, PenaltyConfig(0.0, 0.0))
    assert cert.norm <= 1e-10
    assert cert.passed


def test_certificate_passes_at_oracle_minimizer():
    ds = random_dataset(3, 2, 3, seed=9)
    pen = PenaltyConfig(0.4, 0.8)
    _, F_ref = cvx_sgfl(ds, pen)
    sol, rep = solve_sgfl(ds, pen)
    assert sol.objective <= F_ref + 1e-9
    cert = min_norm_subgradient(sol, ds, pen)
    Z = ds.rmatvec(ds.predict(sol.expand()) - ds.y)
    assert cert.norm <= 1e-5 * (1 + np.linalg.norm(Z))


def test_certificate_detects_perturbation(small_problem):
    ds, pen = small_problem
    sol, _ = solve_sgfl(ds, pen)
    B = sol.expand().copy()
    B[3, 2] += 1e-2
    cert = min_norm_subgradient(Solution.from_dense(B), ds, pen)
    assert cert.norm > cert.tol
    F0 = evaluate_objective(ds, pen, B)
    G = cert.as_blocks()
    assert min(evaluate_objective(ds, pen, B - s * G) for s in np.logspace(-8, 0, 40)) < F0


def test_certificate_multiplier_constraints(small_problem):
    ds, pen = small_problem
    sol, _ = solve_sgfl(ds, pen)
    B = sol.expand()
    cert = min_norm_subgradient(sol, ds, pen)
    U = cert.U.T
    assert np.all(np.abs(U) <= pen.l1 * (1 + 1e-12))
    np.testing.assert_allclose(U[B != 0], pen.l1 * np.sign(B[B != 0]))
    V = cert.V.T
    D = B[1:] - B[:-1]
    w = pen.tv_weights(ds.T)
    assert np.all(np.linalg.norm(V, axis=1) <= pen.lambda2 * w * (1 + 1e-12))
    cp = np.any(D != 0, axis=1)
    np.testing.assert_allclose(V[cp], pen.lambda2 * D[cp] / np.linalg.norm(D[cp], axis=1)[:, None])


def test_line_search_quadratic_closed_form():
    ds = random_dataset(5, 3, 4, seed=10)
    pen = PenaltyConfig(0.0, 0.0)
    rng = np.random.default_rng(0)
    B = rng.standard_normal((4, 3))
    G = ds.rmatvec(ds.predict(B) - ds.y)
    HG = np.einsum("tij,tj->ti", ds.grams, G)
    alpha_star = np.sum(G * G) / np.sum(G * HG)
    new, alpha = subgradient_step(Solution.from_dense(B), G.ravel(), ds, pen)
    assert alpha == pytest.approx(alpha_star, rel=1e-8)
    assert new.objective < evaluate_objective(ds, pen, B)


def test_line_search_matches_scan():
    ds = random_dataset(3, 4, 6, seed=11)
    pen = PenaltyConfig(0.3, 0.6)
    B = np.random.default_rng(1).standard_normal((6, 4))
    G = min_norm_subgradient(Solution.from_dense(B), ds, pen).as_blocks()
    phi = lambda s: evaluate_objective(ds, pen, B - s * G)
    a, fa = line_search(phi, 1.0)
    grid = np.linspace(0, 2 * a, 20001)
    vals = np.array([phi(s) for s in grid])
    assert fa <= vals.min() + 1e-10 * (1 + abs(fa))
    assert fa < phi(0.0)


def test_solve_above_lambda1_max_is_zero():
    ds = random_dataset(4, 5, 6, seed=12)
    lam = 1.01 * lambda1_max(ds)
    sol, rep = solve_sgfl(ds, PenaltyConfig(lam, 1e8))
    np.testing.assert_array_equal(sol.expand(), 0.0)
    assert sol.objective == pytest.approx(0.5 * np.sum(ds.y ** 2), rel=1e-14)


@pytest.mark.parametrize("seed", range(4))
def test_solve_matches_conic_oracle(seed):
    ds = random_dataset(3, 4, 7, seed=20 + seed)
    pen = PenaltyConfig(0.2 + 0.1 * seed, 0.5 + 0.4 * seed, alpha=1.0 if seed % 2 else 0.6)
    _, F_ref = cvx_sgfl(ds, pen)
    sol, rep = solve_sgfl(ds, pen)
    assert sol.objective <= F_ref + 1e-7 * (1 + F_ref)
    assert rep.is_monotone()


def test_weighted_tv_matches_oracle():
    ds = random_dataset(3, 3, 6, seed=30)
    pen = PenaltyConfig(0.3, 0.8, weights=[1.0, 0.2, 2.0, 0.0, 1.5])
    _, F_ref = cvx_sgfl(ds, pen)
    sol, _ = solve_sgfl(ds, pen)
    assert sol.objective <= F_ref + 1e-7 * (1 + F_ref)


def test_group_fused_lasso_special_case():
    ds = random_dataset(3, 3, 8, seed=31)
    pen = PenaltyConfig(0.0, 1.2)
    _, F_ref = cvx_sgfl(ds, pen)
    sol, _ = solve_sgfl(ds, pen)
    assert sol.objective <= F_ref + 1e-7 * (1 + F_ref)


def test_independent_elastic_net_special_case():
    ds = random_dataset(4, 5, 5, seed=32)
    pen = PenaltyConfig(0.8, 0.0, alpha=0.5)
    cfg = HybridConfig(epsilon=1e-12, local_rel_tol=1e-16, certificate_rtol=1e-10)
    B = solve_sgfl(ds, pen, cfg)[0].expand()
    for t in range(5):
        ref = cd_lasso(ds.X[t], ds.y[t], 0.4, ridge=0.4)
        np.testing.assert_allclose(B[t], ref, atol=1e-8)


def test_sweep_patterns_agree(small_problem):
    ds, pen = small_problem
    a = solve_sgfl(ds, pen, HybridConfig(sweep="cyclic"))[0].objective
    for seed in range(3):
        b = solve_sgfl(ds, pen, HybridConfig(sweep="random", seed=seed))[0].objective
        assert b == pytest.approx(a, rel=1e-6)


def test_random_sweep_is_reproducible(small_problem):
    ds, pen = small_problem
    cfg = HybridConfig(sweep="random", seed=5)
    a = solve_sgfl(ds, pen, cfg)[0].expand()
    b = solve_sgfl(ds, pen, cfg)[0].expand()
    np.testing.assert_array_equal(a, b)


def test_canonical_segmentation_at_exit(small_problem):
    ds, pen = small_problem
    sol, _ = solve_sgfl(ds, pen)
    assert np.all(np.any(sol.coef[1:] != sol.coef[:-1], axis=1))
    B = sol.expand()
    starts = [0] + [t for t in range(1, ds.T) if not np.array_equal(B[t], B[t - 1])]
    np.testing.assert_array_equal(sol.segmentation.starts, starts)


def test_certified_exit_is_locally_optimal():
    rng = np.random.default_rng(0)
    for seed in range(5):
        ds = random_dataset(3, 4, 8, seed=40 + seed)
        pen = PenaltyConfig(0.3, 0.8)
        sol, rep = solve_sgfl(ds, pen)
        if rep.exit_reason != "certificate":
            continue
        B = sol.expand()
        scale = 1 + abs(sol.objective)
        for _ in range(100):
            U = rng.standard_normal(B.shape)
            Fp = evaluate_objective(ds, pen, B + 1e-4 * scale * U / np.linalg.norm(U))
            assert Fp >= sol.objective - 1e-8 * scale


def test_planted_segmentation_recovered():
    ds, beta, seg = simulate(SimSpec(d=10, p=5, T=30, change_points=(11, 21),
                                     sparsity=0.4, sigma=0.0, seed=3))
    sol, _ = solve_sgfl(ds, PenaltyConfig(0.05, 2.0))
    assert sol.segmentation.change_points() == [11, 21]


def test_warm_start_accepted(small_problem):
    ds, pen = small_problem
    cold, _ = solve_sgfl(ds, pen)
    warm, rep = solve_sgfl(ds, pen, start=cold)
    assert warm.objective <= cold.objective + 1e-12 * (1 + cold.objective)
    assert rep.objective_trace[0][2] == pytest.approx(cold.objective)


def test_config_validation():
    with pytest.raises(ValueError):
        HybridConfig(epsilon=0)
    with pytest.raises(ValueError):
        HybridConfig(sweep="zigzag")
    with pytest.raises(ValueError):
        HybridConfig(certificate_gap=0.5)


def test_polish_recovers_lasso_to_working_precision():
    ds = random_dataset(8, 5, 3, seed=21)
    pen = PenaltyConfig(0.5, 0.0)
    ref = np.stack([cd_lasso(ds.X[t], ds.y[t], 0.5) for t in range(3)])
    rough = ref + 1e-4 * (ref != 0) * np.random.default_rng(0).standard_normal(ref.shape)
    out = polish(Solution.from_dense(rough), ds, pen)
    np.testing.assert_allclose(out.expand(), ref, atol=1e-12)
    assert min_norm_subgradient(out, ds, pen).norm < 1e-10


def test_polish_keeps_segmentation_and_lowers_certificate():
    ds, _, _ = simulate(SimSpec(6, 5, 12, (5, 9), 0.4, 0.2, 0.0, seed=2))
    pen = PenaltyConfig(0.05, 1.0)
    sol, _ = solve_sgfl(ds, pen)
    B = sol.expand()
    rough = Solution.from_dense(B + 1e-5 * (B != 0))
    out = polish(rough, ds, pen)
    assert out.segmentation == rough.segmentation
    assert np.array_equal(out.expand() != 0, B != 0)
    assert out.objective <= evaluate_objective(ds, pen, rough)
    assert min_norm_subgradient(out, ds, pen).norm < min_norm_subgradient(rough, ds, pen).norm


def test_polish_declines_empty_or_large_problems():
    ds = random_dataset(3, 4, 5, seed=22)
    pen = PenaltyConfig(0.1, 0.1)
    assert polish(Solution.zeros(5, 4), ds, pen) is None
    B = np.arange(1.0, 21.0).reshape(5, 4)
    assert polish(Solution.from_dense(B), ds, pen, HybridConfig(polish_max_vars=10)) is None


def test_tight_certificate_is_reached_through_polish():
    ds = random_dataset(8, 6, 5, seed=23)
    pen = PenaltyConfig(0.3, 0.0, alpha=0.5)
    sol, rep = solve_sgfl(ds, pen, HybridConfig(certificate_rtol=1e-12))
    assert rep.exit_reason == "certificate" and rep.stage_counts.get("polish", 0) >= 1
    ref = np.stack([cd_lasso(ds.X[t], ds.y[t], pen.l1, pen.ridge) for t in range(5)])
    np.testing.assert_allclose(sol.expand(), ref, atol=1e-12)
