//! Certification of logged trajectories against the stability, invariance
//! and collision-avoidance guarantees of the feedforward law.

mod checks;
mod study;

use std::collections::BTreeMap;

use serde::Serialize;

pub use checks::{
    certify, check_formation, check_concave_rate, check_order, check_rate_identity, check_stability,
    rate_along_flow, RateResiduals,
};
pub use study::{scalability_study, scalability_study_from_base, PrefixCheck, ScalabilityStudy, StudyRow, StudyRun};

use crate::apf::{apf_value, ApfParams};
use crate::dynamics::VehicleModel;
use crate::error::{PlatoonError, Result};
use crate::sigma::{sigma_norm_of_sq, SigmaParam};
use crate::simulator::TrajectoryLog;
use crate::vector::{all_finite, dot, norm_sq, sub};

/// Local Lyapunov function `L_k = ½ (V(‖z‖_σ) + ‖z_v‖²)`.
pub fn lyap_local(z: &[f64], z_v: &[f64], apf: &ApfParams, sp: SigmaParam) -> Result<f64> {
    if !(all_finite(z) && all_finite(z_v)) {
        return Err(PlatoonError::InvalidInput("non-finite error signal".into()));
    }
    let r2 = norm_sq(z);
    if r2 == 0.0 {
        return Err(PlatoonError::Collision {
            predecessor: 0,
            follower: 1,
        });
    }
    let v = apf_value(sigma_norm_of_sq(r2, sp), apf)?;
    Ok(0.5 * (v + norm_sq(z_v)))
}

/// Predicted `dL_k/dt = z_vᵀ (f(v_prev) − f(v_k)) − β ‖z_v‖²`. Contains no
/// potential term: the rate is the same for every admissible potential.
pub fn lyap_rate_rhs(z_v: &[f64], v_prev: &[f64], v_k: &[f64], beta: f64, m: &VehicleModel) -> f64 {
    let df = sub(&m.drag(v_prev), &m.drag(v_k));
    dot(z_v, &df) - beta * norm_sq(z_v)
}

/// `½ Σ_k L_k` per record, with the ½ prefactor applied on top of the ½
/// already inside each `L_k`.
pub fn lyap_formation(log: &TrajectoryLog) -> Vec<f64> {
    (0..log.len())
        .map(|r| 0.5 * (1..log.agents).map(|k| log.lyap(r, k)).sum::<f64>())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Location {
    pub t: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub verdict: Verdict,
    pub worst_residual: Option<f64>,
    pub threshold: Option<f64>,
    pub location: Option<Location>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckResult {
    pub fn not_applicable(name: &str, why: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            verdict: Verdict::NotApplicable,
            worst_residual: None,
            threshold: None,
            location: None,
            details: BTreeMap::new(),
            note: Some(why.into()),
        }
    }

    pub(crate) fn measured(name: &str, passed: bool, worst: f64, threshold: f64, location: Option<Location>) -> Self {
        CheckResult {
            name: name.into(),
            verdict: if passed { Verdict::Pass } else { Verdict::Fail },
            worst_residual: Some(worst),
            threshold: Some(threshold),
            location,
            details: BTreeMap::new(),
            note: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub scenario_hash: String,
    pub followers: usize,
    pub variant: String,
    pub termination: crate::simulator::TerminationStatus,
    pub checks: Vec<CheckResult>,
}

impl CertificationReport {
    /// True when no applicable check failed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict != Verdict::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}
