//! Discrete optimal transport with general convex regularization.
//!
//! The crate solves
//!
//! ```text
//! min { <c, gamma> + eps * sum_ij Phi(gamma_ij / (mu_i nu_j)) mu_i nu_j : gamma in Pi(mu, nu) }
//! ```
//!
//! for any normalized entropy function `Phi` (Shannon, quadratic, Tsallis) by a
//! generalized Sinkhorn iteration on the dual potentials. It also provides
//! duality certificates, the debiased divergence with weight gradients, an
//! N-marginal solver with barycenter extraction, and slow reference oracles.

pub mod cli;
pub mod error;
pub mod losses;
pub mod measures;
pub mod multimarginal;
pub mod oracles;
pub mod regularizers;
pub mod sinkhorn;
pub mod transforms;

pub use error::{Error, Result};
pub use losses::{
    divergence, divergence_report, dual_value, gradient, limit_probe, ot_loss, phi_entropy,
    primal_value, GradientPair, LimitRow, LossReport,
};
pub use measures::{
    build_cost, load_cost_matrix, load_measure, CostBuilder, CostKind, CostMatrix, DiscreteMeasure,
};
pub use multimarginal::{
    barycenter_extract, build_barycenter_cost, build_pairwise_cost, mm_dual_value, mm_primal_value,
    mm_recover_plan, mm_solve, mm_transform, CostTensor, MMCoupling, MMPotentials, MMProblem,
};
pub use oracles::{brute_force_primal, exact_ot_1d, OracleResult};
pub use regularizers::{make_regularizer, Regularizer, RegularizerKind};
pub use sinkhorn::{
    check_slackness, marginal_errors, recover_plan, solve, Coupling, Potentials, Problem,
    SlacknessReport, SolveReport, SolverConfig, StopReason,
};
pub use transforms::{cep_transform, solve_matching_equation, Direction, RootConfig};
