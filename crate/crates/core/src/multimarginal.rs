//! N-marginal regularized transport and barycenters.
//!
//! The transform in coordinate `i` is the two-marginal transform with the
//! other coordinates merged into one product space: for each atom `x` of the
//! `i`-th marginal it solves
//!
//! ```text
//! sum_k w_k Psi'((s_k + t - c(x, k)) / eps) = 1,
//! ```
//!
//! where `k` runs over cells of the product of the other supports, `s_k` is
//! the sum of their potentials and `w_k` the product of their weights.

use ndarray::{ArrayD, ArrayView1, Axis, Dimension, IxDyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{CostKind, DiscreteMeasure};
use crate::regularizers::Regularizer;
use crate::sinkhorn::{weighted_sum, SolveReport, SolverConfig, StopReason};
use crate::transforms::{check_eps, transform_entry, RootConfig, PARALLEL_WORK};

/// Default mass below which barycenter cells are ignored.
pub const MASS_FLOOR: f64 = 1e-12;

/// Coordinates closer than this are merged into one barycenter atom.
const MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CostTensor {
    entries: ArrayD<f64>,
    sup_norm: f64,
}

impl CostTensor {
    pub fn new(entries: ArrayD<f64>) -> Result<Self> {
        if entries.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidCost("non-finite tensor entry".into()));
        }
        let sup_norm = entries.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        Ok(Self { entries, sup_norm })
    }

    pub fn entries(&self) -> &ArrayD<f64> {
        &self.entries
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn shape(&self) -> &[usize] {
        self.entries.shape()
    }
}

#[derive(Debug, Clone)]
pub struct MMProblem {
    pub marginals: Vec<DiscreteMeasure>,
    pub cost: CostTensor,
    pub eps: f64,
    pub reg: Regularizer,
}

impl MMProblem {
    pub fn new(
        marginals: Vec<DiscreteMeasure>,
        cost: CostTensor,
        eps: f64,
        reg: Regularizer,
    ) -> Result<Self> {
        check_eps(eps)?;
        if marginals.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least two marginals, got {}",
                marginals.len()
            )));
        }
        let sizes: Vec<usize> = marginals.iter().map(DiscreteMeasure::len).collect();
        if cost.shape() != sizes.as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "cost tensor {:?} vs marginal sizes {sizes:?}",
                cost.shape()
            )));
        }
        Ok(Self {
            marginals,
            cost,
            eps,
            reg,
        })
    }

    pub fn order(&self) -> usize {
        self.marginals.len()
    }

    /// Sum of potentials and product of weights at a tensor cell.
    fn cell(&self, pot: &MMPotentials, idx: &[usize]) -> (f64, f64) {
        let mut s = 0.0;
        let mut w = 1.0;
        for (k, &a) in idx.iter().enumerate() {
            s += pot.u[k][a];
            w *= self.marginals[k].weights()[a];
        }
        (s, w)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MMPotentials {
    pub u: Vec<Vec<f64>>,
}

impl MMPotentials {
    pub fn zeros(problem: &MMProblem) -> Self {
        Self {
            u: problem
                .marginals
                .iter()
                .map(|m| vec![0.0; m.len()])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MMCoupling {
    pub alpha: ArrayD<f64>,
    pub masses: ArrayD<f64>,
}

/// Potential sums and weight products over the product of all supports except
/// `skip`, in row-major order of the remaining axes.
fn others(problem: &MMProblem, pot: &MMPotentials, skip: usize) -> (Vec<f64>, Vec<f64>) {
    let shape: Vec<usize> = problem
        .marginals
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != skip)
        .map(|(_, m)| m.len())
        .collect();
    let total: usize = shape.iter().product();
    let mut sums = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut counter = vec![0usize; shape.len()];
    for _ in 0..total {
        let mut s = 0.0;
        let mut w = 1.0;
        let mut c = 0;
        for (k, m) in problem.marginals.iter().enumerate() {
            if k == skip {
                continue;
            }
            s += pot.u[k][counter[c]];
            w *= m.weights()[counter[c]];
            c += 1;
        }
        sums.push(s);
        weights.push(w);
        for d in (0..shape.len()).rev() {
            counter[d] += 1;
            if counter[d] < shape[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    (sums, weights)
}

/// Transform in coordinate `i`: the exact maximizer of the dual in `u_i`.
pub fn mm_transform(
    pot: &MMPotentials,
    i: usize,
    problem: &MMProblem,
    cfg: &RootConfig,
) -> Result<Vec<f64>> {
    if i >= problem.order() {
        return Err(Error::InvalidParameter(format!(
            "coordinate {i} out of range for {} marginals",
            problem.order()
        )));
    }
    let (sums, weights) = others(problem, pot, i);
    let n = problem.marginals[i].len();
    let entry = |a: usize| -> Result<f64> {
        let line: Vec<f64> = problem
            .cost
            .entries()
            .index_axis(Axis(i), a)
            .iter()
            .copied()
            .collect();
        transform_entry(
            &sums,
            ArrayView1::from(&line),
            problem.eps,
            &problem.reg,
            &weights,
            cfg,
            true,
        )
        .map_err(|e| e.at_atom(a))
    };
    if n * sums.len() >= PARALLEL_WORK {
        (0..n).into_par_iter().map(entry).collect()
    } else {
        (0..n).map(entry).collect()
    }
}

/// `sum_i <u_i, rho_i> - eps sum Psi((sum_i u_i - c) / eps) prod_i w_i`.
pub fn mm_dual_value(pot: &MMPotentials, problem: &MMProblem) -> f64 {
    let linear: f64 = pot
        .u
        .iter()
        .zip(&problem.marginals)
        .map(|(u, m)| weighted_sum(u, m))
        .sum();
    let mut penalty = 0.0;
    for (idx, c) in problem.cost.entries().indexed_iter() {
        let (s, w) = problem.cell(pot, idx.slice());
        penalty += problem.reg.psi((s - c) / problem.eps) * w;
    }
    linear - problem.eps * penalty
}

pub fn mm_recover_plan(pot: &MMPotentials, problem: &MMProblem) -> MMCoupling {
    let shape = problem.cost.shape().to_vec();
    let mut alpha = ArrayD::zeros(IxDyn(&shape));
    let mut masses = ArrayD::zeros(IxDyn(&shape));
    for (idx, c) in problem.cost.entries().indexed_iter() {
        let (s, w) = problem.cell(pot, idx.slice());
        let a = problem.reg.psi_prime((s - c) / problem.eps);
        alpha[&idx] = a;
        masses[&idx] = a * w;
    }
    MMCoupling { alpha, masses }
}

/// `<c, gamma> + eps sum Phi(alpha) prod_i w_i`.
pub fn mm_primal_value(coupling: &MMCoupling, problem: &MMProblem) -> f64 {
    let mut total = 0.0;
    for (idx, c) in problem.cost.entries().indexed_iter() {
        let w: f64 = idx
            .slice()
            .iter()
            .enumerate()
            .map(|(k, &a)| problem.marginals[k].weights()[a])
            .product();
        total +=
            c * coupling.masses[&idx] + problem.eps * problem.reg.phi(coupling.alpha[&idx]) * w;
    }
    total
}

/// L1 error of every plan marginal.
pub fn mm_marginal_errors(coupling: &MMCoupling, problem: &MMProblem) -> Vec<f64> {
    problem
        .marginals
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let mut sums = vec![0.0; m.len()];
            for (idx, g) in coupling.masses.indexed_iter() {
                sums[idx[k]] += g;
            }
            sums.iter()
                .zip(m.weights())
                .map(|(s, w)| (s - w).abs())
                .sum()
        })
        .collect()
}

fn plan_marginal_errors(pot: &MMPotentials, problem: &MMProblem) -> Vec<f64> {
    let mut sums: Vec<Vec<f64>> = problem
        .marginals
        .iter()
        .map(|m| vec![0.0; m.len()])
        .collect();
    for (idx, c) in problem.cost.entries().indexed_iter() {
        let (s, w) = problem.cell(pot, idx.slice());
        let mass = problem.reg.psi_prime((s - c) / problem.eps) * w;
        for (k, &a) in idx.slice().iter().enumerate() {
            sums[k][a] += mass;
        }
    }
    sums.iter()
        .zip(&problem.marginals)
        .map(|(s, m)| s.iter().zip(m.weights()).map(|(x, w)| (x - w).abs()).sum())
        .collect()
}

/// Gauss-Seidel sweeps over the coordinates, starting from zero potentials.
///
/// After each sweep `u_2..u_N` are shifted to mean zero and `u_1` absorbs the
/// opposite total, so the shifts sum to zero and the dual value is unchanged.
pub fn mm_solve(problem: &MMProblem, cfg: &SolverConfig) -> Result<(MMPotentials, SolveReport)> {
    cfg.validate()?;
    let entries = problem.cost.entries().len();
    if entries > cfg.tensor_cap {
        return Err(Error::SizeCapExceeded {
            entries,
            cap: cfg.tensor_cap,
        });
    }
    let mut pot = MMPotentials::zeros(problem);
    let mut report = SolveReport::new();
    for sweep in 1..=cfg.max_iter {
        for i in 0..problem.order() {
            pot.u[i] = mm_transform(&pot, i, problem, &cfg.root).map_err(|e| e.at_sweep(sweep))?;
        }
        let mut shifts: Vec<f64> = pot
            .u
            .iter()
            .zip(&problem.marginals)
            .map(|(u, m)| -weighted_sum(u, m))
            .collect();
        shifts[0] = -shifts[1..].iter().sum::<f64>();
        for (u, s) in pot.u.iter_mut().zip(&shifts) {
            u.iter_mut().for_each(|x| *x += s);
        }

        let errors = plan_marginal_errors(&pot, problem);
        let done = errors.iter().all(|e| *e <= cfg.marginal_tol);
        report.iterations = sweep;
        report.dual_values.push(mm_dual_value(&pot, problem));
        report.marginal_errors.push(errors);
        report.shifts.push(shifts);
        if done {
            report.converged = true;
            report.stop_reason = StopReason::Tolerance;
            break;
        }
    }
    Ok((pot, report))
}

fn check_common_dimension(marginals: &[DiscreteMeasure]) -> Result<usize> {
    let dim = marginals
        .first()
        .map(DiscreteMeasure::dim)
        .ok_or_else(|| Error::InvalidParameter("no marginals".into()))?;
    if marginals.iter().any(|m| m.dim() != dim) {
        return Err(Error::DimensionMismatch(
            "marginals live in different dimensions".into(),
        ));
    }
    Ok(dim)
}

fn check_simplex(lambdas: &[f64], n: usize) -> Result<()> {
    if lambdas.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} barycenter weights for {n} marginals",
            lambdas.len()
        )));
    }
    let total: f64 = lambdas.iter().sum();
    if lambdas.iter().any(|l| !(*l >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "barycenter weights must lie on the simplex, got {lambdas:?}"
        )));
    }
    Ok(())
}

fn tensor_from_fn(
    marginals: &[DiscreteMeasure],
    f: impl Fn(&[&[f64]]) -> f64,
) -> Result<CostTensor> {
    let shape: Vec<usize> = marginals.iter().map(DiscreteMeasure::len).collect();
    let entries = ArrayD::from_shape_fn(IxDyn(&shape), |idx| {
        let pts: Vec<&[f64]> = (0..shape.len())
            .map(|k| marginals[k].points()[idx[k]].as_slice())
            .collect();
        f(&pts)
    });
    CostTensor::new(entries)
}

/// `sum_{i<j} lambda_i lambda_j |x_i - x_j|^2`.
pub fn build_barycenter_cost(marginals: &[DiscreteMeasure], lambdas: &[f64]) -> Result<CostTensor> {
    check_common_dimension(marginals)?;
    check_simplex(lambdas, marginals.len())?;
    tensor_from_fn(marginals, |pts| {
        let mut total = 0.0;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                total += lambdas[i] * lambdas[j] * CostKind::SqEuclidean.eval(pts[i], pts[j]);
            }
        }
        total
    })
}

/// `sum_{i<j} c(x_i, x_j)` for a ground cost `kind`.
pub fn build_pairwise_cost(marginals: &[DiscreteMeasure], kind: CostKind) -> Result<CostTensor> {
    kind.validate()?;
    check_common_dimension(marginals)?;
    tensor_from_fn(marginals, |pts| {
        let mut total = 0.0;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                total += kind.eval(pts[i], pts[j]);
            }
        }
        total
    })
}

/// Pushes the plan forward under `(x_1, .., x_N) -> sum_i lambda_i x_i`.
///
/// Cells with mass at or below `mass_floor` are skipped; atoms closer than
/// `1e-9` in every coordinate are merged. The result is renormalized.
pub fn barycenter_extract(
    coupling: &MMCoupling,
    marginals: &[DiscreteMeasure],
    lambdas: &[f64],
    mass_floor: f64,
) -> Result<DiscreteMeasure> {
    let dim = check_common_dimension(marginals)?;
    check_simplex(lambdas, marginals.len())?;
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut masses: Vec<f64> = Vec::new();
    for (idx, &g) in coupling.masses.indexed_iter() {
        if g <= mass_floor {
            continue;
        }
        let mut x = vec![0.0; dim];
        for (k, &a) in idx.slice().iter().enumerate() {
            for (d, xd) in x.iter_mut().enumerate() {
                *xd += lambdas[k] * marginals[k].points()[a][d];
            }
        }
        match points
            .iter()
            .position(|p| p.iter().zip(&x).all(|(a, b)| (a - b).abs() <= MERGE_TOL))
        {
            Some(k) => masses[k] += g,
            None => {
                points.push(x);
                masses.push(g);
            }
        }
    }
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidMeasure(
            "plan carries no mass above the floor".into(),
        ));
    }
    DiscreteMeasure::new(points, masses.into_iter().map(|m| m / total).collect())
}
