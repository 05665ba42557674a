//! The σ-norm: a smooth, everywhere-differentiable surrogate of the
//! Euclidean norm, `‖x‖_σ = (√(1 + ‖x‖²) − 1) / σ`.

use serde::{Deserialize, Serialize};

use crate::error::{PlatoonError, Result};
use crate::vector::{all_finite, norm_sq};

/// Scaling constant of the σ-norm. Always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SigmaParam(f64);

impl SigmaParam {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma.is_finite() && sigma > 0.0 {
            Ok(SigmaParam(sigma))
        } else {
            Err(PlatoonError::InvalidInput(format!(
                "sigma must be positive and finite, got {sigma}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SigmaParam {
    type Error = PlatoonError;

    fn try_from(v: f64) -> Result<Self> {
        SigmaParam::new(v)
    }
}

impl From<SigmaParam> for f64 {
    fn from(p: SigmaParam) -> f64 {
        p.0
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    if all_finite(x) {
        Ok(())
    } else {
        Err(PlatoonError::InvalidInput(
            "non-finite vector component".into(),
        ))
    }
}

pub fn sigma_norm(x: &[f64], p: SigmaParam) -> Result<f64> {
    check_finite(x)?;
    Ok(sigma_norm_of_sq(norm_sq(x), p))
}

/// σ-norm from a precomputed squared Euclidean norm.
pub(crate) fn sigma_norm_of_sq(r2: f64, p: SigmaParam) -> f64 {
    // √(1 + r²) − 1 written without the subtraction so tiny gaps keep full precision.
    r2 / ((1.0 + r2).sqrt() + 1.0) / p.0
}

/// Gradient `x / (σ √(1 + ‖x‖²))`; its Euclidean norm is below `1/σ`.
pub fn sigma_norm_grad(x: &[f64], p: SigmaParam) -> Result<Vec<f64>> {
    check_finite(x)?;
    let denom = p.0 * (1.0 + norm_sq(x)).sqrt();
    Ok(x.iter().map(|xi| xi / denom).collect())
}

/// Euclidean length whose σ-norm is `s`.
pub fn euclid_from_sigma(s: f64, p: SigmaParam) -> Result<f64> {
    if !s.is_finite() || s < 0.0 {
        return Err(PlatoonError::InvalidInput(format!(
            "sigma-norm value must be finite and nonnegative, got {s}"
        )));
    }
    // (σs + 1)² − 1 = σs(σs + 2) avoids cancellation for small s.
    let q = p.0 * s;
    Ok((q * (q + 2.0)).sqrt())
}
