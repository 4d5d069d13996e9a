//! Entropy functions `Phi`, their Legendre conjugates `Psi = Phi^*`, and `Psi'`.
//!
//! Every built-in regularizer is normalized so that `Phi(1) = Phi'(1) = 0`,
//! equivalently `Psi(0) = 0` and `Psi'(0) = 1`. A linear term `a (z - 1)` can be
//! added back with [`Regularizer::with_linear_term`]; it changes neither the
//! feasible objective nor the minimizer, only the dual potentials.

use crate::error::{Error, Result};

/// Exponentials are evaluated at `min(y, EXP_CLAMP)`.
pub const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegularizerKind {
    /// `Phi(z) = z ln z - z + 1`
    Shannon,
    /// `Phi(z) = (z - 1)^2 / 2`
    Quadratic,
    /// `Phi(z) = (z^p - p (z - 1) - 1) / (p (p - 1))`, `p > 1`
    Tsallis { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer {
    kind: RegularizerKind,
    /// Coefficient `a` of the extra linear term `a (z - 1)`; zero when normalized.
    tilt: f64,
}

/// Builds a regularizer from its CLI name. `tsallis_p` is required for `tsallis`.
pub fn make_regularizer(name: &str, tsallis_p: Option<f64>) -> Result<Regularizer> {
    match name {
        "shannon" => Ok(Regularizer::shannon()),
        "quadratic" => Ok(Regularizer::quadratic()),
        "tsallis" => {
            let p = tsallis_p.ok_or_else(|| {
                Error::InvalidParameter("tsallis regularizer needs an exponent p".into())
            })?;
            Regularizer::tsallis(p)
        }
        other => Err(Error::InvalidParameter(format!(
            "unknown regularizer {other:?}"
        ))),
    }
}

impl Regularizer {
    pub fn shannon() -> Self {
        Self {
            kind: RegularizerKind::Shannon,
            tilt: 0.0,
        }
    }

    pub fn quadratic() -> Self {
        Self {
            kind: RegularizerKind::Quadratic,
            tilt: 0.0,
        }
    }

    pub fn tsallis(p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tsallis exponent must satisfy p > 1, got {p}"
            )));
        }
        let reg = Self {
            kind: RegularizerKind::Tsallis { p },
            tilt: 0.0,
        };
        reg.check_invariants()?;
        Ok(reg)
    }

    /// `Phi(z) + a (z - 1)`; the conjugate becomes `Psi(y - a) + a`.
    pub fn with_linear_term(&self, a: f64) -> Self {
        Self {
            kind: self.kind,
            tilt: self.tilt + a,
        }
    }

    /// Drops any linear term, restoring `Phi(1) = Phi'(1) = 0`.
    pub fn normalized(&self) -> Self {
        Self {
            kind: self.kind,
            tilt: 0.0,
        }
    }

    pub fn kind(&self) -> RegularizerKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            RegularizerKind::Shannon => "shannon",
            RegularizerKind::Quadratic => "quadratic",
            RegularizerKind::Tsallis { .. } => "tsallis",
        }
    }

    pub fn tilt(&self) -> f64 {
        self.tilt
    }

    /// Only the Shannon entropy admits the log-sum-exp transform.
    pub fn has_closed_transform(&self) -> bool {
        matches!(self.kind, RegularizerKind::Shannon)
    }

    /// The point where `Psi'` equals one (zero unless a linear term was added).
    pub fn unit_point(&self) -> f64 {
        self.tilt
    }

    /// `Phi(z)`, or `DomainError` for negative `z`.
    pub fn phi_eval(&self, z: f64) -> Result<f64> {
        if z < 0.0 || z.is_nan() {
            return Err(Error::DomainError {
                what: "Phi",
                value: z,
            });
        }
        Ok(self.phi(z))
    }

    /// `Phi(z)` for `z >= 0`; `+inf` below zero.
    pub fn phi(&self, z: f64) -> f64 {
        if z < 0.0 {
            return f64::INFINITY;
        }
        let base = match self.kind {
            RegularizerKind::Shannon => {
                if z == 0.0 {
                    1.0
                } else {
                    z * z.ln() - z + 1.0
                }
            }
            RegularizerKind::Quadratic => 0.5 * (z - 1.0) * (z - 1.0),
            RegularizerKind::Tsallis { p } => (z.powf(p) - p * (z - 1.0) - 1.0) / (p * (p - 1.0)),
        };
        base + self.tilt * (z - 1.0)
    }

    pub fn psi(&self, y: f64) -> f64 {
        let s = y - self.tilt;
        let base = match self.kind {
            RegularizerKind::Shannon => s.min(EXP_CLAMP).exp() - 1.0,
            RegularizerKind::Quadratic => {
                let pos = (s + 1.0).max(0.0);
                0.5 * (pos * pos - 1.0)
            }
            RegularizerKind::Tsallis { p } => {
                let r = p - 1.0;
                let pos = (1.0 + r * s).max(0.0);
                (pos.powf(p / r) - 1.0) / p
            }
        };
        base + self.tilt
    }

    /// `Psi'(y) = (Phi')^{-1}(y)`, the plan density produced by a dual argument.
    pub fn psi_prime(&self, y: f64) -> f64 {
        let s = y - self.tilt;
        match self.kind {
            RegularizerKind::Shannon => s.min(EXP_CLAMP).exp(),
            RegularizerKind::Quadratic => (s + 1.0).max(0.0),
            RegularizerKind::Tsallis { p } => {
                let r = p - 1.0;
                (1.0 + r * s).max(0.0).powf(1.0 / r)
            }
        }
    }

    /// `Psi''(y)`, right-continuous at kinks; only used for Newton steps.
    pub fn psi_second(&self, y: f64) -> f64 {
        let s = y - self.tilt;
        match self.kind {
            RegularizerKind::Shannon => s.min(EXP_CLAMP).exp(),
            RegularizerKind::Quadratic => {
                if s >= -1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            RegularizerKind::Tsallis { p } => {
                let r = p - 1.0;
                let base = 1.0 + r * s;
                if base > 0.0 {
                    base.powf(1.0 / r - 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// Numerical checks of the normalization, monotonicity, convexity and
    /// Fenchel-Young inequality on fixed sample points.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParameter(format!("{}: {msg}", self.name())));
        let h = 1e-6;
        if self.phi(1.0).abs() > 1e-12 {
            return fail(format!("Phi(1) = {}", self.phi(1.0)));
        }
        let dphi = (self.phi(1.0 + h) - self.phi(1.0 - h)) / (2.0 * h);
        if dphi.abs() > 1e-6 {
            return fail(format!("Phi'(1) = {dphi}"));
        }
        if self.psi(0.0).abs() > 1e-12 {
            return fail(format!("Psi(0) = {}", self.psi(0.0)));
        }
        if (self.psi_prime(0.0) - 1.0).abs() > 1e-12 {
            return fail(format!("Psi'(0) = {}", self.psi_prime(0.0)));
        }
        let grid: Vec<f64> = (0..101).map(|k| -5.0 + 0.1 * k as f64).collect();
        for w in grid.windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            if self.psi_prime(a) < 0.0 || self.psi_prime(a) > self.psi_prime(b) {
                return fail(format!("Psi' decreases near {a}"));
            }
            let second = self.psi(a) - 2.0 * self.psi(b) + self.psi(c);
            if second < -1e-12 {
                return fail(format!("Psi not convex near {b}"));
            }
        }
        for z in [0.1, 0.5, 1.0, 2.0, 5.0] {
            for y in [-2.0, -1.0, 0.0, 1.0, 2.0] {
                if self.phi(z) + self.psi(y) < z * y - 1e-10 {
                    return fail(format!("Fenchel-Young violated at z={z}, y={y}"));
                }
            }
        }
        Ok(())
    }
}
