//! Numerical tolerances shared by every check in the crate.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Max-norm bound on `EᵀE − I` for an orthonormal basis.
    pub orthonormality: f64,
    /// Relative eigenpair residual `‖Av − λv‖ / ‖A‖`.
    pub eigen_residual: f64,
    /// Singular values below `rank_relative · σ₁` count as zero.
    pub rank_relative: f64,
    /// Pass/fail threshold of the assumption report.
    pub assumption: f64,
    /// Relative slack allowed when checking contraction inequalities.
    pub lemma_slack: f64,
    /// Row-sum and sign slack for stochastic matrices and vectors.
    pub stochastic: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            orthonormality: 1e-10,
            eigen_residual: 1e-8,
            rank_relative: 1e-10,
            assumption: 1e-8,
            lemma_slack: 1e-9,
            stochastic: 1e-10,
        }
    }
}

impl Tolerances {
    pub const NAMES: [&'static str; 6] = [
        "orthonormality",
        "eigen_residual",
        "rank_relative",
        "assumption",
        "lemma_slack",
        "stochastic",
    ];

    /// Overrides one tolerance by name.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance {name} must be positive and finite, got {value}"
            )));
        }
        let slot = match name {
            "orthonormality" => &mut self.orthonormality,
            "eigen_residual" => &mut self.eigen_residual,
            "rank_relative" => &mut self.rank_relative,
            "assumption" => &mut self.assumption,
            "lemma_slack" => &mut self.lemma_slack,
            "stochastic" => &mut self.stochastic,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown tolerance {name:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        *slot = value;
        Ok(())
    }

    /// Parses a `name=value` override, as given on the command line.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (name, value) = spec.split_once('=').ok_or_else(|| {
            Error::InvalidParameter(format!("tolerance override {spec:?} is not name=value"))
        })?;
        let value: f64 = value.trim().parse().map_err(|_| {
            Error::InvalidParameter(format!("tolerance value {value:?} is not a number"))
        })?;
        self.set(name.trim(), value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_by_name() {
        let mut tol = Tolerances::default();
        tol.apply_override("lemma_slack=1e-6").unwrap();
        assert_eq!(tol.lemma_slack, 1e-6);
        assert!(tol.apply_override("nope=1").is_err());
        assert!(tol.apply_override("assumption=-1").is_err());
        assert!(tol.apply_override("assumption").is_err());
    }
}
