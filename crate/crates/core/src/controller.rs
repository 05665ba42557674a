//! Distributed control law: each follower adds a local potential-field term
//! to the control its predecessor broadcasts.
//!
//! The local term is `u^ℓ = β z_v − ½ ∇_{y_k} V(‖z‖_σ)` with
//! `z = y_{k−1} − y_k` and `z_v = v_{k−1} − v_k`. The ½ weight pairs the
//! gradient with `L_k = ½ (V + ‖z_v‖²)`, which makes
//! `dL_k/dt = z_vᵀ (f(v_{k−1}) − f(v_k)) − β ‖z_v‖²` hold exactly along the
//! closed loop. With `β > 0` a faster predecessor pulls the follower forward.

use serde::{Deserialize, Serialize};

use crate::apf::{apf_grad_follower, ApfParams};
use crate::dynamics::AgentState;
use crate::error::{PlatoonError, Result};
use crate::sigma::SigmaParam;
use crate::vector::{add, all_finite, along_axis0, sub};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlVariant {
    /// Predecessor control is received and added to the local term.
    Feedforward,
    /// Local term only; the relative-measurement baseline.
    LocalOnly,
}

impl std::str::FromStr for ControlVariant {
    type Err = PlatoonError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feedforward" => Ok(ControlVariant::Feedforward),
            "local-only" => Ok(ControlVariant::LocalOnly),
            other => Err(PlatoonError::Config(format!(
                "unknown variant '{other}' (expected feedforward or local-only)"
            ))),
        }
    }
}

impl std::fmt::Display for ControlVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ControlVariant::Feedforward => "feedforward",
            ControlVariant::LocalOnly => "local-only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub beta: f64,
    pub apf: ApfParams,
    pub sigma: SigmaParam,
    pub variant: ControlVariant,
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(PlatoonError::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        self.apf.validate().map_err(|e| PlatoonError::Config(e.to_string()))
    }
}

/// Exogenous leader input `u_0(t)`, applied along the first axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeaderProfile {
    Constant {
        input: f64,
    },
    /// Linear interpolation through `(t, u)` points, held flat outside them.
    PiecewiseLinear {
        breakpoints: Vec<(f64, f64)>,
    },
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Accelerate, hold, brake, then coast with zero input.
    StopAndGo {
        accel: f64,
        accel_time: f64,
        #[serde(default)]
        cruise_input: f64,
        cruise_time: f64,
        decel: f64,
        decel_time: f64,
    },
}

impl LeaderProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PlatoonError::Config(m));
        match self {
            LeaderProfile::Constant { input } if !input.is_finite() => bad("leader input must be finite".into()),
            LeaderProfile::PiecewiseLinear { breakpoints } => {
                if breakpoints.is_empty() {
                    return bad("piecewise profile needs at least one breakpoint".into());
                }
                if breakpoints.iter().any(|(t, u)| !t.is_finite() || !u.is_finite()) {
                    return bad("piecewise breakpoints must be finite".into());
                }
                if breakpoints.windows(2).any(|w| w[1].0 < w[0].0) {
                    return bad("piecewise breakpoints must be sorted by time".into());
                }
                Ok(())
            }
            LeaderProfile::Sinusoid { amplitude, frequency, phase } => {
                if !(amplitude.is_finite() && frequency.is_finite() && phase.is_finite()) || *frequency < 0.0 {
                    bad("sinusoid parameters must be finite with frequency >= 0".into())
                } else {
                    Ok(())
                }
            }
            LeaderProfile::StopAndGo { accel, accel_time, cruise_input, cruise_time, decel, decel_time } => {
                let all = [*accel, *accel_time, *cruise_input, *cruise_time, *decel, *decel_time];
                if all.iter().any(|x| !x.is_finite()) {
                    return bad("stop-and-go parameters must be finite".into());
                }
                if *accel_time < 0.0 || *cruise_time < 0.0 || *decel_time < 0.0 {
                    return bad("stop-and-go durations must be nonnegative".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Scalar input at time `t`; right-continuous at breakpoints.
    pub fn input(&self, t: f64) -> f64 {
        match self {
            LeaderProfile::Constant { input } => *input,
            LeaderProfile::PiecewiseLinear { breakpoints } => {
                let idx = breakpoints.partition_point(|(bt, _)| *bt <= t);
                if idx == 0 {
                    return breakpoints[0].1;
                }
                if idx == breakpoints.len() {
                    return breakpoints[idx - 1].1;
                }
                let (t0, u0) = breakpoints[idx - 1];
                let (t1, u1) = breakpoints[idx];
                u0 + (u1 - u0) * (t - t0) / (t1 - t0)
            }
            LeaderProfile::Sinusoid { amplitude, frequency, phase } => {
                amplitude * (2.0 * std::f64::consts::PI * frequency * t + phase).sin()
            }
            LeaderProfile::StopAndGo { accel, accel_time, cruise_input, cruise_time, decel, decel_time } => {
                let t1 = *accel_time;
                let t2 = t1 + cruise_time;
                let t3 = t2 + decel_time;
                if t < t1 {
                    *accel
                } else if t < t2 {
                    *cruise_input
                } else if t < t3 {
                    -decel
                } else {
                    0.0
                }
            }
        }
    }

    /// Whether `u_0` is constant on `[t0, t1]`.
    pub fn is_constant_on(&self, t0: f64, t1: f64) -> bool {
        match self {
            LeaderProfile::Constant { .. } => true,
            LeaderProfile::Sinusoid { amplitude, frequency, .. } => *amplitude == 0.0 || *frequency == 0.0,
            LeaderProfile::PiecewiseLinear { breakpoints } => {
                let u = self.input(t0);
                self.input(t1) == u
                    && breakpoints
                        .iter()
                        .filter(|(t, _)| *t > t0 && *t <= t1)
                        .all(|(_, v)| *v == u)
            }
            LeaderProfile::StopAndGo { accel_time, cruise_time, decel_time, .. } => {
                let edges = [*accel_time, accel_time + cruise_time, accel_time + cruise_time + decel_time];
                edges.iter().all(|e| *e <= t0 || *e > t1)
            }
        }
    }
}

/// Local component `β z_v − ½ ∇_{y_k} V`.
pub fn local_control(z: &[f64], z_v: &[f64], cfg: &ControllerConfig) -> Result<Vec<f64>> {
    if z.len() != z_v.len() {
        return Err(PlatoonError::InvalidInput("dimension mismatch".into()));
    }
    if !(all_finite(z) && all_finite(z_v)) {
        return Err(PlatoonError::InvalidInput("non-finite error signal".into()));
    }
    let origin = vec![0.0; z.len()];
    // With y_k at the origin, y_prev − y_k = z.
    let grad = apf_grad_follower(&origin, z, &cfg.apf, cfg.sigma)?;
    Ok(z_v
        .iter()
        .zip(&grad)
        .map(|(zv, g)| cfg.beta * zv - 0.5 * g)
        .collect())
}

pub fn compose_control(u_prev: &[f64], u_local: &[f64]) -> Vec<f64> {
    add(u_prev, u_local)
}

/// `u_0(t)` as a d-vector; `t` must lie in `[0, horizon]`.
pub fn leader_input(profile: &LeaderProfile, t: f64, horizon: f64, dim: usize) -> Result<Vec<f64>> {
    if !(t >= 0.0 && t <= horizon) {
        return Err(PlatoonError::InvalidInput(format!(
            "time {t} outside [0, {horizon}]"
        )));
    }
    Ok(along_axis0(profile.input(t), dim))
}

/// Controls of one evaluation pass, split into received and local parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPass {
    /// Applied input per agent, leader first.
    pub total: Vec<Vec<f64>>,
    /// Local component per follower; index 0 (the leader) is zero.
    pub local: Vec<Vec<f64>>,
}

/// One sequential pass down the string: `u_0` from the profile, then each
/// follower in order. Agent `k` uses `u_{k−1}` from this same pass.
pub fn control_pass(
    states: &[AgentState],
    t: f64,
    cfgs: &[ControllerConfig],
    profile: &LeaderProfile,
) -> Result<ControlPass> {
    let Some(leader) = states.first() else {
        return Err(PlatoonError::InvalidInput("empty platoon".into()));
    };
    if cfgs.len() + 1 < states.len() {
        return Err(PlatoonError::InvalidInput(format!(
            "{} controller configs for {} followers",
            cfgs.len(),
            states.len() - 1
        )));
    }
    let dim = leader.dim();
    let mut total = Vec::with_capacity(states.len());
    let mut local = Vec::with_capacity(states.len());
    total.push(along_axis0(profile.input(t), dim));
    local.push(vec![0.0; dim]);
    for k in 1..states.len() {
        let z = sub(&states[k - 1].position, &states[k].position);
        let zv = sub(&states[k - 1].velocity, &states[k].velocity);
        let cfg = &cfgs[k - 1];
        let ul = local_control(&z, &zv, cfg).map_err(|e| match e {
            PlatoonError::Collision { .. } => PlatoonError::Collision {
                predecessor: k - 1,
                follower: k,
            },
            other => other,
        })?;
        let u = match cfg.variant {
            ControlVariant::Feedforward => compose_control(&total[k - 1], &ul),
            ControlVariant::LocalOnly => ul.clone(),
        };
        total.push(u);
        local.push(ul);
    }
    Ok(ControlPass { total, local })
}

pub fn compute_all_controls(
    states: &[AgentState],
    t: f64,
    cfgs: &[ControllerConfig],
    profile: &LeaderProfile,
) -> Result<Vec<Vec<f64>>> {
    control_pass(states, t, cfgs, profile).map(|p| p.total)
}
