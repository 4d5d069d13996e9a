//! Objectives built on the solver: primal and dual values, the regularized
//! transport loss, the debiased divergence, weight gradients and
//! `eps`-ladders.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{CostBuilder, CostMatrix, DiscreteMeasure};
use crate::regularizers::Regularizer;
use crate::sinkhorn::{
    recover_plan, solve, weighted_sum, Coupling, Potentials, Problem, SolveReport, SolverConfig,
};

/// `G = sum_ij Phi(alpha_ij) mu_i nu_j`.
pub fn phi_entropy(
    alpha: &Array2<f64>,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    reg: &Regularizer,
) -> f64 {
    let mut total = 0.0;
    for (i, mi) in mu.weights().iter().enumerate() {
        for (j, nj) in nu.weights().iter().enumerate() {
            total += reg.phi(alpha[[i, j]]) * mi * nj;
        }
    }
    total
}

/// `D_eps(u, v) = <u, mu> + <v, nu> - eps sum_ij Psi((u_i + v_j - c_ij) / eps) mu_i nu_j`.
pub fn dual_value(pot: &Potentials, problem: &Problem) -> f64 {
    let (mu_w, nu_w) = (problem.mu.weights(), problem.nu.weights());
    let mut penalty = 0.0;
    for (i, (ui, mi)) in pot.u.iter().zip(mu_w).enumerate() {
        for (j, (vj, nj)) in pot.v.iter().zip(nu_w).enumerate() {
            penalty += problem.reg.psi(problem.dual_arg(*ui, *vj, i, j)) * mi * nj;
        }
    }
    weighted_sum(&pot.u, &problem.mu) + weighted_sum(&pot.v, &problem.nu) - problem.eps * penalty
}

/// `C_eps(gamma) = <c, gamma> + eps G(alpha)`.
pub fn primal_value(coupling: &Coupling, problem: &Problem) -> f64 {
    let transport: f64 = coupling
        .masses
        .iter()
        .zip(problem.cost.entries().iter())
        .map(|(g, c)| g * c)
        .sum();
    transport + problem.eps * phi_entropy(&coupling.alpha, &problem.mu, &problem.nu, &problem.reg)
}

#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    /// Regularized transport loss, taken as the dual value at the solution.
    pub value: f64,
    pub dual_value: f64,
    pub primal_value: f64,
    pub gap: f64,
    pub potentials: Potentials,
    pub report: SolveReport,
    /// False when the solver hit its iteration cap; `value` is still reported.
    pub converged: bool,
}

pub fn ot_loss_problem(problem: &Problem, cfg: &SolverConfig) -> Result<LossReport> {
    let (potentials, report) = solve(problem, cfg)?;
    let plan = recover_plan(&potentials, problem);
    let dual = dual_value(&potentials, problem);
    let primal = primal_value(&plan, problem);
    Ok(LossReport {
        value: dual,
        dual_value: dual,
        primal_value: primal,
        gap: (primal - dual).abs(),
        converged: report.converged,
        potentials,
        report,
    })
}

pub fn ot_loss(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    eps: f64,
    reg: &Regularizer,
    cfg: &SolverConfig,
) -> Result<LossReport> {
    let problem = Problem::new(mu.clone(), nu.clone(), cost.clone(), eps, *reg)?;
    ot_loss_problem(&problem, cfg)
}

/// The three regularized losses behind a divergence value.
#[derive(Debug, Clone, Serialize)]
pub struct DivergenceReport {
    pub value: f64,
    pub cross: f64,
    pub self_mu: f64,
    pub self_nu: f64,
    pub converged: bool,
}

/// `OT(mu, nu) - (OT(mu, mu) + OT(nu, nu)) / 2`, with three independent solves.
///
/// The sign is whatever comes out; nothing forces it to be nonnegative.
pub fn divergence_report(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    costs: &(impl CostBuilder + Sync),
    eps: f64,
    reg: &Regularizer,
    cfg: &SolverConfig,
) -> Result<DivergenceReport> {
    let term = |a: &DiscreteMeasure, b: &DiscreteMeasure| -> Result<LossReport> {
        let cost = costs.build(a, b)?;
        ot_loss(a, b, &cost, eps, reg, cfg)
    };
    let (cross, (self_mu, self_nu)) = rayon::join(
        || term(mu, nu),
        || rayon::join(|| term(mu, mu), || term(nu, nu)),
    );
    let (cross, self_mu, self_nu) = (cross?, self_mu?, self_nu?);
    Ok(DivergenceReport {
        value: cross.value - 0.5 * (self_mu.value + self_nu.value),
        cross: cross.value,
        self_mu: self_mu.value,
        self_nu: self_nu.value,
        converged: cross.converged && self_mu.converged && self_nu.converged,
    })
}

pub fn divergence(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    costs: &(impl CostBuilder + Sync),
    eps: f64,
    reg: &Regularizer,
    cfg: &SolverConfig,
) -> Result<f64> {
    Ok(divergence_report(mu, nu, costs, eps, reg, cfg)?.value)
}

/// `-1/2 int c d((mu - nu) x (mu - nu))`, the large-`eps` limit of the divergence.
pub fn mmd_limit(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    costs: &impl CostBuilder,
) -> Result<f64> {
    let mean = |a: &DiscreteMeasure, b: &DiscreteMeasure| -> Result<f64> {
        let c = costs.build(a, b)?;
        let mut total = 0.0;
        for (i, wa) in a.weights().iter().enumerate() {
            for (j, wb) in b.weights().iter().enumerate() {
                total += c.get(i, j) * wa * wb;
            }
        }
        Ok(total)
    };
    Ok(-0.5 * (mean(mu, mu)? + mean(nu, nu)? - mean(mu, nu)? - mean(nu, mu)?))
}

/// First variation of the loss in the marginal weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientPair {
    pub g_mu: Vec<f64>,
    pub g_nu: Vec<f64>,
}

/// Gradient from optimal potentials, each side recentered to mean zero.
pub fn gradient_from_potentials(pot: &Potentials, problem: &Problem) -> GradientPair {
    let (mu_w, nu_w) = (problem.mu.weights(), problem.nu.weights());
    let eps = problem.eps;
    let mut g_mu: Vec<f64> = pot.u.clone();
    let mut g_nu: Vec<f64> = pot.v.clone();
    for (i, ui) in pot.u.iter().enumerate() {
        for (j, vj) in pot.v.iter().enumerate() {
            let psi = problem.reg.psi(problem.dual_arg(*ui, *vj, i, j));
            g_mu[i] -= eps * psi * nu_w[j];
            g_nu[j] -= eps * psi * mu_w[i];
        }
    }
    let center = |g: &mut Vec<f64>, m: &DiscreteMeasure| {
        let mean = weighted_sum(g, m);
        g.iter_mut().for_each(|x| *x -= mean);
    };
    center(&mut g_mu, &problem.mu);
    center(&mut g_nu, &problem.nu);
    GradientPair { g_mu, g_nu }
}

pub fn gradient(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    eps: f64,
    reg: &Regularizer,
    cfg: &SolverConfig,
) -> Result<GradientPair> {
    let problem = Problem::new(mu.clone(), nu.clone(), cost.clone(), eps, *reg)?;
    let (pot, _) = solve(&problem, cfg)?;
    Ok(gradient_from_potentials(&pot, &problem))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitRow {
    pub eps: f64,
    pub ot_loss: f64,
    pub divergence: f64,
    /// `sum_ij |gamma_ij - mu_i nu_j|`
    pub plan_product_l1: f64,
    /// Number of cells carrying positive mass.
    pub support_size: usize,
    pub converged: bool,
}

/// Loss, divergence and plan statistics along a sorted list of `eps` values.
pub fn limit_probe(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    costs: &(impl CostBuilder + Sync),
    reg: &Regularizer,
    eps_list: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<LimitRow>> {
    if eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidParameter(
            "eps values must be positive".into(),
        ));
    }
    let ascending = eps_list.windows(2).all(|w| w[0] <= w[1]);
    let descending = eps_list.windows(2).all(|w| w[0] >= w[1]);
    if !(ascending || descending) {
        return Err(Error::InvalidParameter("eps ladder must be sorted".into()));
    }
    let cost = costs.build(mu, nu)?;
    use rayon::prelude::*;
    eps_list
        .par_iter()
        .map(|&eps| {
            let problem = Problem::new(mu.clone(), nu.clone(), cost.clone(), eps, *reg)?;
            let loss = ot_loss_problem(&problem, cfg)?;
            let div = divergence_report(mu, nu, costs, eps, reg, cfg)?;
            let plan = recover_plan(&loss.potentials, &problem);
            let mut l1 = 0.0;
            for ((i, j), g) in plan.masses.indexed_iter() {
                l1 += (g - mu.weights()[i] * nu.weights()[j]).abs();
            }
            Ok(LimitRow {
                eps,
                ot_loss: loss.value,
                divergence: div.value,
                plan_product_l1: l1,
                support_size: plan.masses.iter().filter(|g| **g > 0.0).count(),
                converged: loss.converged && div.converged,
            })
        })
        .collect()
}

pub const LIMIT_CSV_HEADER: &str = "eps,ot_loss,divergence,plan_product_l1,support_size";

pub fn limit_rows_to_csv(rows: &[LimitRow]) -> String {
    let mut out = String::from(LIMIT_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
            r.eps, r.ot_loss, r.divergence, r.plan_product_l1, r.support_size
        ));
    }
    out
}
