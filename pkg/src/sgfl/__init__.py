"""Sparse group fused lasso: hybrid solver, baselines, simulation and model selection."""
from .problem import (Dataset, DimensionError, PenaltyConfig, Segmentation, Solution,
                      SolverReport, evaluate_objective, kronecker_lift, lift_response,
                      spectral_norm)
from .prox import (ProxNeighborhood, check_block_simple, check_chain_simple, ist_operator,
                   ist_prox, phi, prox_objective, soft_threshold)
from .fista import BacktrackingError, FistaConfig, backtrack_check, fista
from .hybrid import (HybridConfig, SolverError, SubgradientCertificate, all_chains_descent,
                     block_descent_pass, fusion_cycle_pass, min_norm_subgradient, polish,
                     solve_sgfl, subgradient_step)
from .baselines import (BaselineConfig, BaselineTrace, TuningError, admm_solve,
                        approximate_segmentation, group_soft_threshold, ladmm_solve,
                        linearized_x_update, pd_solve, smoothed_tv, spg_solve,
                        threshold_coefficients, two_step_solve)
from .simulate import SimSpec, simulate
from .metrics import (Metrics, bic, build_grid, classification_metrics, evaluate_fit,
                      hausdorff_distance, hbic, lambda1_max, pseudo_r2, sgfl_ols_refit)
from .path import fit_path, path_table

__version__ = "0.1.0"
