//! The `(c, eps, Phi)`-transform.
//!
//! Given a potential `u` on one side, the transform assigns to every atom `y`
//! on the other side the unique `t` solving the marginal-matching equation
//!
//! ```text
//! beta(t) = sum_i w_i Psi'((u_i + t - c_iy) / eps) = 1.
//! ```
//!
//! `beta` is nondecreasing, and `Psi'(0) = 1` places the root inside
//! `[-|c|_inf - max u, |c|_inf - min u]`, so a bracketed Newton iteration always
//! applies. Shannon entropy has the closed form
//! `t = -eps log sum_i w_i exp((u_i - c_iy) / eps)`, evaluated with a
//! max-shifted log-sum-exp.

use ndarray::ArrayView1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{CostMatrix, DiscreteMeasure};
use crate::regularizers::Regularizer;

/// Work (output atoms x source atoms) below which transforms run sequentially.
pub(crate) const PARALLEL_WORK: usize = 1 << 14;

/// Newton steps whose derivative falls below this fall back to bisection.
const MIN_SLOPE: f64 = 1e-300;

/// Number of times the initial bracket may be doubled outward.
const BRACKET_DOUBLINGS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootConfig {
    /// Tolerance on `|beta(t) - 1|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RootConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100,
        }
    }
}

impl RootConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(format!(
                "root config needs tol > 0 and max_iter >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which side the input potential lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Potential over rows (the first marginal), output over columns.
    RowsToCols,
    /// Potential over columns (the second marginal), output over rows.
    ColsToRows,
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive and finite, got {eps}"
        )));
    }
    Ok(())
}

/// `(beta(t) - 1, beta'(t))` with a fixed left-to-right summation order.
fn residual_and_slope(
    u: &[f64],
    cost: ArrayView1<f64>,
    weights: &[f64],
    eps: f64,
    reg: &Regularizer,
    t: f64,
) -> (f64, f64) {
    let mut beta = 0.0;
    let mut slope = 0.0;
    for ((ui, ci), wi) in u.iter().zip(cost.iter()).zip(weights) {
        let y = (ui + t - ci) / eps;
        beta += wi * reg.psi_prime(y);
        slope += wi * reg.psi_second(y);
    }
    (beta - 1.0, slope / eps)
}

/// Solves `sum_i w_i Psi'((u_i + t - c_i) / eps) = 1` for `t` with a
/// safeguarded Newton iteration.
pub fn solve_matching_equation(
    u: &[f64],
    cost: ArrayView1<f64>,
    eps: f64,
    reg: &Regularizer,
    weights: &[f64],
    cfg: &RootConfig,
) -> Result<f64> {
    check_eps(eps)?;
    if u.len() != cost.len() || u.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "potential {}, cost {}, weights {}",
            u.len(),
            cost.len(),
            weights.len()
        )));
    }
    if u.is_empty() {
        return Err(Error::InvalidMeasure("empty source support".into()));
    }

    let eval = |t: f64| residual_and_slope(u, cost, weights, eps, reg, t);

    let c_sup = cost.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let u_max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let u_min = u.iter().copied().fold(f64::INFINITY, f64::min);
    let offset = eps * reg.unit_point();
    let mut lo = -c_sup - u_max - 1.0 + offset;
    let mut hi = c_sup - u_min + 1.0 + offset;

    let mut g_lo = eval(lo).0;
    let mut g_hi = eval(hi).0;
    let mut doublings = 0;
    while g_lo > 0.0 || g_hi < 0.0 {
        if doublings == BRACKET_DOUBLINGS {
            return Err(Error::RootSolveFailure {
                atom: None,
                sweep: None,
                residual: if g_lo > 0.0 { g_lo } else { g_hi },
            });
        }
        let width = hi - lo;
        if g_lo > 0.0 {
            lo -= width;
            g_lo = eval(lo).0;
        }
        if g_hi < 0.0 {
            hi += width;
            g_hi = eval(hi).0;
        }
        doublings += 1;
    }
    if g_lo.abs() <= cfg.tol {
        return Ok(lo);
    }
    if g_hi.abs() <= cfg.tol {
        return Ok(hi);
    }

    // The weighted mean of c - u sits right of the root whenever Psi' is
    // convex, where Newton is monotone.
    let mean: f64 = u
        .iter()
        .zip(cost.iter())
        .zip(weights)
        .map(|((ui, ci), wi)| wi * (ci - ui))
        .sum::<f64>()
        + offset;
    let mut t = mean.clamp(lo, hi);
    // Width of the step before last; a Newton step that fails to halve it is
    // replaced by bisection.
    let mut prev_step = hi - lo;
    let mut step = prev_step;
    let mut residual = f64::NAN;

    for _ in 0..cfg.max_iter {
        let (g, dg) = eval(t);
        residual = g;
        if g.abs() <= cfg.tol {
            return Ok(t);
        }
        if g < 0.0 {
            lo = t;
        } else {
            hi = t;
        }

        let newton = t - g / dg;
        let slow = (2.0 * g).abs() > (prev_step * dg).abs();
        prev_step = step;
        let next = if dg > MIN_SLOPE && !slow && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        step = (next - t).abs();
        if next == t {
            break;
        }
        t = next;
    }
    Err(Error::RootSolveFailure {
        atom: None,
        sweep: None,
        residual: residual.abs(),
    })
}

/// Shannon transform: `eps * a - eps * log sum_i w_i exp((u_i - c_i) / eps)`
/// where `a` is the linear-term coefficient of the regularizer.
pub fn softmin(u: &[f64], cost: ArrayView1<f64>, eps: f64, weights: &[f64], tilt: f64) -> f64 {
    let mut shift = f64::NEG_INFINITY;
    for ((ui, ci), wi) in u.iter().zip(cost.iter()).zip(weights) {
        shift = shift.max((ui - ci) / eps + wi.ln());
    }
    let mut acc = 0.0;
    for ((ui, ci), wi) in u.iter().zip(cost.iter()).zip(weights) {
        acc += ((ui - ci) / eps + wi.ln() - shift).exp();
    }
    eps * tilt - eps * (shift + acc.ln())
}

/// One transform entry, using the closed form when the regularizer has one.
pub(crate) fn transform_entry(
    u: &[f64],
    cost: ArrayView1<f64>,
    eps: f64,
    reg: &Regularizer,
    weights: &[f64],
    cfg: &RootConfig,
    closed_form: bool,
) -> Result<f64> {
    if closed_form && reg.has_closed_transform() {
        check_eps(eps)?;
        Ok(softmin(u, cost, eps, weights, reg.unit_point()))
    } else {
        solve_matching_equation(u, cost, eps, reg, weights, cfg)
    }
}

#[allow(clippy::too_many_arguments)]
fn transform_impl(
    u: &[f64],
    cost: &CostMatrix,
    eps: f64,
    reg: &Regularizer,
    source: &DiscreteMeasure,
    direction: Direction,
    cfg: &RootConfig,
    closed_form: bool,
) -> Result<Vec<f64>> {
    check_eps(eps)?;
    cfg.validate()?;
    let (rows, cols) = cost.shape();
    let (src_len, out_len) = match direction {
        Direction::RowsToCols => (rows, cols),
        Direction::ColsToRows => (cols, rows),
    };
    if u.len() != src_len || source.len() != src_len {
        return Err(Error::DimensionMismatch(format!(
            "potential has {} entries and source {} atoms, cost side has {src_len}",
            u.len(),
            source.len()
        )));
    }
    let weights = source.weights();
    let entries = cost.entries();
    let entry = |k: usize| {
        let line = match direction {
            Direction::RowsToCols => entries.column(k),
            Direction::ColsToRows => entries.row(k),
        };
        transform_entry(u, line, eps, reg, weights, cfg, closed_form).map_err(|e| e.at_atom(k))
    };
    if out_len * src_len >= PARALLEL_WORK {
        (0..out_len).into_par_iter().map(entry).collect()
    } else {
        (0..out_len).map(entry).collect()
    }
}

/// The `(c, eps, Phi)`-transform of `u`, taken over the `source` side.
pub fn cep_transform(
    u: &[f64],
    cost: &CostMatrix,
    eps: f64,
    reg: &Regularizer,
    source: &DiscreteMeasure,
    direction: Direction,
    cfg: &RootConfig,
) -> Result<Vec<f64>> {
    transform_impl(u, cost, eps, reg, source, direction, cfg, true)
}

/// Same as [`cep_transform`] but always through the root solver, even for
/// Shannon entropy.
pub fn cep_transform_generic(
    u: &[f64],
    cost: &CostMatrix,
    eps: f64,
    reg: &Regularizer,
    source: &DiscreteMeasure,
    direction: Direction,
    cfg: &RootConfig,
) -> Result<Vec<f64>> {
    transform_impl(u, cost, eps, reg, source, direction, cfg, false)
}
