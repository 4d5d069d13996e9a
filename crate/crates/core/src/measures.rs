//! Finitely supported probability measures, cost matrices and their file formats.
//!
//! Measures are read from JSON documents of the form
//! `{"points": [[f64, ...], ...], "weights": [f64, ...]}` and costs from
//! header-less, comma-separated CSV with one row per source atom.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deviation of the weight sum from 1 that is silently renormalized away.
pub const RENORMALIZE_TOL: f64 = 1e-9;

/// A probability measure supported on finitely many atoms of `R^d`.
///
/// Every weight is strictly positive and the weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasureDoc {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validates and normalizes `(points, weights)`.
    ///
    /// Zero-weight atoms are dropped, and a weight sum within
    /// [`RENORMALIZE_TOL`] of one is rescaled to sum exactly to one.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::InvalidMeasure("empty support".into()));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidMeasure("ragged point dimensions".into()));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite coordinate".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > RENORMALIZE_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }

        let (points, weights): (Vec<_>, Vec<_>) = points
            .into_iter()
            .zip(weights)
            .filter(|(_, w)| *w > 0.0)
            .unzip();
        let kept: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / kept).collect();
        Ok(Self {
            points,
            weights,
            dim,
        })
    }

    /// Equal weights on the given atoms.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len().max(1);
        let weights = vec![1.0 / n as f64; points.len()];
        Self::new(points, weights)
    }

    /// Unit mass at a single point.
    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        Self::new(vec![point], vec![1.0])
    }

    /// One-dimensional atoms with the given weights.
    pub fn on_line(xs: &[f64], weights: Vec<f64>) -> Result<Self> {
        Self::new(xs.iter().map(|x| vec![*x]).collect(), weights)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same atoms, new weights (validated like [`DiscreteMeasure::new`]).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.points.clone(), weights)
    }

    pub fn from_json_str(doc: &str) -> Result<Self> {
        let doc: MeasureDoc = serde_json::from_str(doc)
            .map_err(|e| Error::InvalidMeasure(format!("malformed measure document: {e}")))?;
        Self::new(doc.points, doc.weights)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let doc = MeasureDoc {
            points: self.points.clone(),
            weights: self.weights.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Reads a measure JSON document.
pub fn load_measure(source: &str) -> Result<DiscreteMeasure> {
    DiscreteMeasure::from_json_str(source)
}

pub fn load_measure_file(path: impl AsRef<Path>) -> Result<DiscreteMeasure> {
    let text = std::fs::read_to_string(path)?;
    load_measure(&text)
}

/// Dense cost matrix with its sup-norm cached.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
    sup_norm: f64,
}

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidCost("non-finite entry".into()));
        }
        let sup_norm = entries.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        Ok(Self { entries, sup_norm })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::InvalidCost("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let entries = Array2::from_shape_vec((nrows, ncols), flat)
            .map_err(|e| Error::InvalidCost(e.to_string()))?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[[i, j]]
    }

    /// `c + s` entrywise.
    pub fn shifted(&self, s: f64) -> Result<Self> {
        Self::new(self.entries.mapv(|c| c + s))
    }

    pub fn transposed(&self) -> Self {
        Self {
            entries: self.entries.t().to_owned(),
            sup_norm: self.sup_norm,
        }
    }
}

/// Ground cost between atoms, as a power of the Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostKind {
    /// `|x - y|^2`
    SqEuclidean,
    /// `|x - y|`
    Euclidean,
    /// `|x - y|^p` with `p >= 1`
    PNorm(f64),
}

impl CostKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            CostKind::PNorm(p) if !(*p >= 1.0 && p.is_finite()) => Err(Error::InvalidParameter(
                format!("cost exponent p must be >= 1, got {p}"),
            )),
            _ => Ok(()),
        }
    }

    /// Exponent of the Euclidean distance.
    pub fn exponent(&self) -> f64 {
        match self {
            CostKind::SqEuclidean => 2.0,
            CostKind::Euclidean => 1.0,
            CostKind::PNorm(p) => *p,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        match self {
            CostKind::SqEuclidean => sq,
            CostKind::Euclidean => sq.sqrt(),
            CostKind::PNorm(p) => sq.sqrt().powf(*p),
        }
    }
}

/// Anything that can produce a cost matrix for an ordered pair of measures.
pub trait CostBuilder {
    fn build(&self, m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> Result<CostMatrix>;
}

impl CostBuilder for CostKind {
    fn build(&self, m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> Result<CostMatrix> {
        build_cost(m1, m2, *self)
    }
}

pub fn build_cost(
    m1: &DiscreteMeasure,
    m2: &DiscreteMeasure,
    kind: CostKind,
) -> Result<CostMatrix> {
    kind.validate()?;
    if m1.dim() != m2.dim() {
        return Err(Error::DimensionMismatch(format!(
            "measures live in dimensions {} and {}",
            m1.dim(),
            m2.dim()
        )));
    }
    let entries = Array2::from_shape_fn((m1.len(), m2.len()), |(i, j)| {
        kind.eval(&m1.points()[i], &m2.points()[j])
    });
    CostMatrix::new(entries)
}

/// Parses a header-less CSV cost matrix and checks it is `rows x cols`.
pub fn load_cost_matrix(source: &str, rows: usize, cols: usize) -> Result<CostMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source.as_bytes());
    let mut parsed = Vec::with_capacity(rows);
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::InvalidCost(e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidCost(format!("row {r}: cannot parse {field:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != cols {
            return Err(Error::InvalidCost(format!(
                "row {r} has {} columns, expected {cols}",
                row.len()
            )));
        }
        parsed.push(row);
    }
    if parsed.len() != rows {
        return Err(Error::InvalidCost(format!(
            "{} rows, expected {rows}",
            parsed.len()
        )));
    }
    CostMatrix::from_rows(&parsed)
}

pub fn load_cost_file(path: impl AsRef<Path>, rows: usize, cols: usize) -> Result<CostMatrix> {
    let text = std::fs::read_to_string(path)?;
    load_cost_matrix(&text, rows, cols)
}
