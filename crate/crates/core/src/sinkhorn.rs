//! Generalized Sinkhorn (IPFP) iteration for convex-regularized transport.
//!
//! Each half-sweep is an exact maximization of the dual functional in one
//! potential, computed by [`cep_transform`]. After every full sweep the pair is
//! translated by `(u + a, v - a)` with `a = (<v, nu> - <u, mu>) / 2`, which
//! leaves the dual value unchanged and fixes the translation freedom.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{dual_value, primal_value};
use crate::measures::{CostMatrix, DiscreteMeasure};
use crate::regularizers::Regularizer;
use crate::transforms::{cep_transform, check_eps, Direction, RootConfig};

/// Data of a two-marginal regularized transport problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub mu: DiscreteMeasure,
    pub nu: DiscreteMeasure,
    pub cost: CostMatrix,
    pub eps: f64,
    pub reg: Regularizer,
}

impl Problem {
    pub fn new(
        mu: DiscreteMeasure,
        nu: DiscreteMeasure,
        cost: CostMatrix,
        eps: f64,
        reg: Regularizer,
    ) -> Result<Self> {
        check_eps(eps)?;
        if cost.shape() != (mu.len(), nu.len()) {
            return Err(Error::DimensionMismatch(format!(
                "cost is {:?} but marginals have {} and {} atoms",
                cost.shape(),
                mu.len(),
                nu.len()
            )));
        }
        Ok(Self {
            mu,
            nu,
            cost,
            eps,
            reg,
        })
    }

    /// Argument `(u_i + v_j - c_ij) / eps` of `Psi` and `Psi'` at cell `(i, j)`.
    pub(crate) fn dual_arg(&self, u: f64, v: f64, i: usize, j: usize) -> f64 {
        (u + v - self.cost.get(i, j)) / self.eps
    }
}

/// Dual potentials `(u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Potentials {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Potentials {
    pub fn zeros(problem: &Problem) -> Self {
        Self {
            u: vec![0.0; problem.mu.len()],
            v: vec![0.0; problem.nu.len()],
        }
    }
}

/// Transport plan as densities against `mu x nu` and as cell masses.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub alpha: Array2<f64>,
    pub masses: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxIter,
}

/// Per-sweep history of a solve. Shared by the two- and multi-marginal solvers.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Dual objective after each sweep (after normalization).
    pub dual_values: Vec<f64>,
    /// Plan marginal L1 errors after each sweep, one entry per marginal.
    pub marginal_errors: Vec<Vec<f64>>,
    /// Translation applied to each potential after each sweep; sums to zero.
    pub shifts: Vec<Vec<f64>>,
    pub converged: bool,
    pub stop_reason: StopReason,
}

impl SolveReport {
    pub(crate) fn new() -> Self {
        Self {
            iterations: 0,
            dual_values: Vec::new(),
            marginal_errors: Vec::new(),
            shifts: Vec::new(),
            converged: false,
            stop_reason: StopReason::MaxIter,
        }
    }

    pub fn final_marginal_errors(&self) -> Vec<f64> {
        self.marginal_errors.last().cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop once every plan marginal is within this L1 distance.
    pub marginal_tol: f64,
    pub max_iter: usize,
    pub root: RootConfig,
    /// Whether callers should materialize the plan (the CLI writes it out).
    pub store_plan: bool,
    /// Largest dense cost tensor the multi-marginal solver accepts.
    pub tensor_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            marginal_tol: 1e-8,
            max_iter: 10_000,
            root: RootConfig::default(),
            store_plan: false,
            tensor_cap: 10_000_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.marginal_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "marginal tolerance must be positive, got {}",
                self.marginal_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
        }
        self.root.validate()
    }
}

/// Runs the generalized Sinkhorn iteration from `v = 0`.
pub fn solve(problem: &Problem, cfg: &SolverConfig) -> Result<(Potentials, SolveReport)> {
    solve_from(problem, vec![0.0; problem.nu.len()], cfg)
}

/// Runs the generalized Sinkhorn iteration from a given second potential.
pub fn solve_from(
    problem: &Problem,
    v0: Vec<f64>,
    cfg: &SolverConfig,
) -> Result<(Potentials, SolveReport)> {
    cfg.validate()?;
    if v0.len() != problem.nu.len() {
        return Err(Error::DimensionMismatch(format!(
            "initial potential has {} entries, expected {}",
            v0.len(),
            problem.nu.len()
        )));
    }
    let Problem {
        mu,
        nu,
        cost,
        eps,
        reg,
    } = problem;

    let mut pot = Potentials {
        u: vec![0.0; mu.len()],
        v: v0,
    };
    let mut report = SolveReport::new();
    for sweep in 1..=cfg.max_iter {
        pot.u = cep_transform(
            &pot.v,
            cost,
            *eps,
            reg,
            nu,
            Direction::ColsToRows,
            &cfg.root,
        )
        .map_err(|e| e.at_sweep(sweep))?;
        pot.v = cep_transform(
            &pot.u,
            cost,
            *eps,
            reg,
            mu,
            Direction::RowsToCols,
            &cfg.root,
        )
        .map_err(|e| e.at_sweep(sweep))?;

        let shift = 0.5 * (weighted_sum(&pot.v, nu) - weighted_sum(&pot.u, mu));
        pot.u.iter_mut().for_each(|x| *x += shift);
        pot.v.iter_mut().for_each(|x| *x -= shift);

        let (e1, e2) = plan_marginal_errors(&pot, problem);
        report.iterations = sweep;
        report.dual_values.push(dual_value(&pot, problem));
        report.marginal_errors.push(vec![e1, e2]);
        report.shifts.push(vec![shift, -shift]);
        if e1 <= cfg.marginal_tol && e2 <= cfg.marginal_tol {
            report.converged = true;
            report.stop_reason = StopReason::Tolerance;
            break;
        }
    }
    Ok((pot, report))
}

pub(crate) fn weighted_sum(values: &[f64], measure: &DiscreteMeasure) -> f64 {
    values
        .iter()
        .zip(measure.weights())
        .map(|(x, w)| x * w)
        .sum()
}

/// Marginal errors of the plan induced by `pot`, without materializing it.
fn plan_marginal_errors(pot: &Potentials, problem: &Problem) -> (f64, f64) {
    let (mu_w, nu_w) = (problem.mu.weights(), problem.nu.weights());
    let mut cols = vec![0.0; nu_w.len()];
    let mut e1 = 0.0;
    for (i, (ui, mi)) in pot.u.iter().zip(mu_w).enumerate() {
        let mut row = 0.0;
        for (j, (vj, nj)) in pot.v.iter().zip(nu_w).enumerate() {
            let mass = problem.reg.psi_prime(problem.dual_arg(*ui, *vj, i, j)) * mi * nj;
            row += mass;
            cols[j] += mass;
        }
        e1 += (row - mi).abs();
    }
    let e2 = cols.iter().zip(nu_w).map(|(c, n)| (c - n).abs()).sum();
    (e1, e2)
}

/// Plan `alpha_ij = Psi'((u_i + v_j - c_ij) / eps)` and its masses.
pub fn recover_plan(pot: &Potentials, problem: &Problem) -> Coupling {
    let (mu_w, nu_w) = (problem.mu.weights(), problem.nu.weights());
    let alpha = Array2::from_shape_fn((mu_w.len(), nu_w.len()), |(i, j)| {
        problem
            .reg
            .psi_prime(problem.dual_arg(pot.u[i], pot.v[j], i, j))
    });
    let masses = Array2::from_shape_fn(alpha.dim(), |(i, j)| alpha[[i, j]] * mu_w[i] * nu_w[j]);
    Coupling { alpha, masses }
}

/// L1 distances between the plan marginals and `(mu, nu)`.
pub fn marginal_errors(coupling: &Coupling, problem: &Problem) -> (f64, f64) {
    let rows = coupling.masses.sum_axis(ndarray::Axis(1));
    let cols = coupling.masses.sum_axis(ndarray::Axis(0));
    let e1 = rows
        .iter()
        .zip(problem.mu.weights())
        .map(|(r, m)| (r - m).abs())
        .sum();
    let e2 = cols
        .iter()
        .zip(problem.nu.weights())
        .map(|(c, n)| (c - n).abs())
        .sum();
    (e1, e2)
}

/// Numerical check of the equivalent optimality conditions for `(u, v)`.
#[derive(Debug, Clone, Serialize)]
pub struct SlacknessReport {
    /// All three certificates hold within tolerance.
    pub feasible: bool,
    /// Plan marginal L1 errors.
    pub marginal_errors: (f64, f64),
    /// `|u - T(v) - a|_inf` and `|v - T(u) + a|_inf` for the best shared `a`.
    pub transform_residuals: (f64, f64),
    /// `|C_eps(plan) - D_eps(u, v)|`.
    pub duality_gap: f64,
}

pub fn check_slackness(pot: &Potentials, problem: &Problem, tol: f64) -> SlacknessReport {
    let plan = recover_plan(pot, problem);
    let marginal = marginal_errors(&plan, problem);
    let duality_gap = (primal_value(&plan, problem) - dual_value(pot, problem)).abs();

    let cfg = RootConfig::default();
    let Problem {
        mu,
        nu,
        cost,
        eps,
        reg,
    } = problem;
    let tu = cep_transform(&pot.v, cost, *eps, reg, nu, Direction::ColsToRows, &cfg);
    let tv = cep_transform(&pot.u, cost, *eps, reg, mu, Direction::RowsToCols, &cfg);
    let transform_residuals = match (tu, tv) {
        (Ok(tu), Ok(tv)) => {
            let ru: Vec<f64> = pot.u.iter().zip(&tu).map(|(a, b)| a - b).collect();
            let rv: Vec<f64> = pot.v.iter().zip(&tv).map(|(a, b)| a - b).collect();
            let mid = |r: &[f64]| {
                let (lo, hi) = r
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                        (lo.min(*x), hi.max(*x))
                    });
                0.5 * (lo + hi)
            };
            let a = 0.5 * (mid(&ru) - mid(&rv));
            let norm = |r: &[f64], s: f64| r.iter().fold(0.0_f64, |m, x| m.max((x - s).abs()));
            (norm(&ru, a), norm(&rv, -a))
        }
        _ => (f64::INFINITY, f64::INFINITY),
    };

    let feasible = marginal.0 <= tol
        && marginal.1 <= tol
        && transform_residuals.0 <= tol
        && transform_residuals.1 <= tol
        && duality_gap <= tol;
    SlacknessReport {
        feasible,
        marginal_errors: marginal,
        transform_residuals,
        duality_gap,
    }
}
