//! Slow reference solutions used to check the solver.
//!
//! Neither oracle touches `Psi` or the transform: the 1-D oracle is the sorted
//! (north-west corner) coupling, and the brute-force oracle minimizes the primal
//! objective directly over a grid on the transportation polytope.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::sinkhorn::Problem;

/// Default grid step for [`brute_force_primal`].
pub const DEFAULT_RESOLUTION: f64 = 1e-2;

/// Rounds of local 10x grid refinement after the coarse search.
const REFINE_ROUNDS: usize = 3;

/// Largest number of free polytope coordinates the brute-force oracle accepts.
const MAX_FREE: usize = 4;

/// Dependent entries this far below zero are rounded up to zero.
const NEG_SLACK: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    /// Plan masses, indexed like the input measures.
    pub argmin: Option<Array2<f64>>,
    /// Final grid step, when a grid was used.
    pub resolution: Option<f64>,
}

/// Unregularized transport cost for `|x - y|^p` on the line, via the monotone
/// coupling of the sorted atoms.
pub fn exact_ot_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<OracleResult> {
    for m in [mu, nu] {
        if m.dim() != 1 {
            return Err(Error::DimensionError(m.dim()));
        }
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "exponent must be >= 1, got {p}"
        )));
    }
    let order = |m: &DiscreteMeasure| {
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&a, &b| m.points()[a][0].total_cmp(&m.points()[b][0]));
        idx
    };
    let (xs, ys) = (order(mu), order(nu));
    let mut plan = Array2::zeros((mu.len(), nu.len()));
    let mut left_x: Vec<f64> = mu.weights().to_vec();
    let mut left_y: Vec<f64> = nu.weights().to_vec();
    let (mut a, mut b) = (0, 0);
    let mut value = 0.0;
    while a < xs.len() && b < ys.len() {
        let (i, j) = (xs[a], ys[b]);
        let moved = left_x[i].min(left_y[j]);
        plan[[i, j]] += moved;
        value += moved * (mu.points()[i][0] - nu.points()[j][0]).abs().powf(p);
        left_x[i] -= moved;
        left_y[j] -= moved;
        // advance whichever side is exhausted; both on a tie
        let x_done = left_x[i] <= left_y[j];
        let y_done = left_y[j] <= left_x[i];
        if x_done {
            a += 1;
        }
        if y_done {
            b += 1;
        }
    }
    Ok(OracleResult {
        value,
        argmin: Some(plan),
        resolution: None,
    })
}

/// Parametrization of the transportation polytope by the top-left
/// `(I-1) x (J-1)` block.
struct Polytope<'a> {
    problem: &'a Problem,
    rows: usize,
    cols: usize,
    upper: Vec<f64>,
}

impl<'a> Polytope<'a> {
    fn new(problem: &'a Problem) -> Self {
        let (rows, cols) = problem.cost.shape();
        let (mu, nu) = (problem.mu.weights(), problem.nu.weights());
        let mut upper = Vec::new();
        for m in mu.iter().take(rows - 1) {
            for n in nu.iter().take(cols - 1) {
                upper.push(m.min(*n));
            }
        }
        Self {
            problem,
            rows,
            cols,
            upper,
        }
    }

    fn free(&self) -> usize {
        self.upper.len()
    }

    /// Full plan from the free block, or `None` when infeasible.
    fn plan(&self, free: &[f64]) -> Option<Array2<f64>> {
        let (rows, cols) = (self.rows, self.cols);
        let (mu, nu) = (self.problem.mu.weights(), self.problem.nu.weights());
        let mut g = Array2::zeros((rows, cols));
        for i in 0..rows - 1 {
            for j in 0..cols - 1 {
                g[[i, j]] = free[i * (cols - 1) + j];
            }
        }
        for i in 0..rows - 1 {
            let used: f64 = (0..cols - 1).map(|j| g[[i, j]]).sum();
            g[[i, cols - 1]] = mu[i] - used;
        }
        for j in 0..cols {
            let used: f64 = (0..rows - 1).map(|i| g[[i, j]]).sum();
            g[[rows - 1, j]] = nu[j] - used;
        }
        for x in g.iter_mut() {
            if *x < -NEG_SLACK {
                return None;
            }
            *x = x.max(0.0);
        }
        Some(g)
    }

    fn objective(&self, masses: &Array2<f64>) -> f64 {
        let p = self.problem;
        let (mu, nu) = (p.mu.weights(), p.nu.weights());
        let mut total = 0.0;
        for ((i, j), g) in masses.indexed_iter() {
            let prod = mu[i] * nu[j];
            total += p.cost.get(i, j) * g + p.eps * p.reg.phi(g / prod) * prod;
        }
        total
    }

    /// Exhaustive search over the tensor grid `axes`; strict improvement keeps
    /// the lexicographically first minimizer.
    fn search(&self, axes: &[Vec<f64>]) -> Option<(Vec<f64>, f64)> {
        let k = axes.len();
        let mut counter = vec![0usize; k];
        let mut point = vec![0.0; k];
        let mut best: Option<(Vec<f64>, f64)> = None;
        if axes.iter().any(Vec::is_empty) {
            return None;
        }
        loop {
            for d in 0..k {
                point[d] = axes[d][counter[d]];
            }
            if let Some(plan) = self.plan(&point) {
                let value = self.objective(&plan);
                if best.as_ref().is_none_or(|(_, b)| value < *b) {
                    best = Some((point.clone(), value));
                }
            }
            // odometer, last coordinate fastest
            let mut d = k;
            loop {
                if d == 0 {
                    return best;
                }
                d -= 1;
                counter[d] += 1;
                if counter[d] < axes[d].len() {
                    break;
                }
                counter[d] = 0;
            }
        }
    }
}

fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let mut pts = Vec::new();
    let mut k = 0usize;
    loop {
        let x = lo + k as f64 * step;
        if x >= hi - 1e-15 {
            break;
        }
        pts.push(x);
        k += 1;
    }
    pts.push(hi);
    pts
}

/// Minimizes the regularized primal objective over a grid on the polytope,
/// then refines three times around the best point with a 10x finer step.
pub fn brute_force_primal(problem: &Problem, resolution: f64) -> Result<OracleResult> {
    if !(resolution > 0.0 && resolution < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "resolution must lie in (0, 1), got {resolution}"
        )));
    }
    let poly = Polytope::new(problem);
    if poly.free() > MAX_FREE {
        return Err(Error::OracleTooLarge(format!(
            "{}x{} polytope has {} free coordinates, at most {MAX_FREE} supported",
            poly.rows,
            poly.cols,
            poly.free()
        )));
    }
    if poly.free() == 0 {
        let plan = poly
            .plan(&[])
            .ok_or_else(|| Error::InvalidMeasure("marginals admit no coupling".into()))?;
        return Ok(OracleResult {
            value: poly.objective(&plan),
            argmin: Some(plan),
            resolution: None,
        });
    }

    let coarse: Vec<Vec<f64>> = poly
        .upper
        .iter()
        .map(|ub| axis(0.0, *ub, resolution))
        .collect();
    let (mut best, mut value) = poly
        .search(&coarse)
        .ok_or_else(|| Error::InvalidMeasure("no feasible grid point".into()))?;
    let mut step = resolution;
    for _ in 0..REFINE_ROUNDS {
        let fine = step / 10.0;
        let axes: Vec<Vec<f64>> = best
            .iter()
            .zip(&poly.upper)
            .map(|(b, ub)| {
                let lo = (b - step).max(0.0);
                let hi = (b + step).min(*ub);
                let mut pts = axis(lo, hi, fine);
                // keep the incumbent on the grid
                pts.push(*b);
                pts.sort_by(f64::total_cmp);
                pts.dedup();
                pts
            })
            .collect();
        if let Some((b, v)) = poly.search(&axes) {
            if v <= value {
                best = b;
                value = v;
            }
        }
        step = fine;
    }
    let plan = poly.plan(&best).expect("incumbent is feasible");
    Ok(OracleResult {
        value,
        argmin: Some(plan),
        resolution: Some(step),
    })
}
