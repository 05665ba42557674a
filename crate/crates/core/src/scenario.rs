//! Full description of one experiment.

use sha2::{Digest, Sha256};

use crate::controller::{ControlVariant, ControllerConfig, LeaderProfile};
use crate::dynamics::{alpha_bound, alpha_estimate, InitialSpacing, VehicleModel, VelocityBox};
use crate::error::{PlatoonError, Result};

/// How initial distances are laid out for `n + 1` agents.
#[derive(Debug, Clone, PartialEq)]
pub enum SpacingPlan {
    /// Exactly `n + 1` entries `ℓ_0 … ℓ_n`.
    Explicit(Vec<f64>),
    /// `ℓ_j = pattern[j mod len]`, for any `n`.
    Cycle(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerPlan {
    Uniform(ControllerConfig),
    /// One entry per follower, agent 1 first.
    PerAgent(Vec<ControllerConfig>),
}

/// Step-halving guard for the potential barrier. A step is retried with half
/// the size when any follower's local control changes by more than
/// `max_control_jump` between the first and a later RK4 stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardSettings {
    pub max_control_jump: f64,
    pub max_halvings: u32,
}

impl Default for GuardSettings {
    fn default() -> Self {
        GuardSettings {
            max_control_jump: 50.0,
            max_halvings: 12,
        }
    }
}

impl GuardSettings {
    pub fn disabled() -> Self {
        GuardSettings {
            max_control_jump: f64::INFINITY,
            max_halvings: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub horizon: f64,
    pub dt: f64,
    pub collision_epsilon: f64,
    pub stride: usize,
    pub guard: GuardSettings,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            horizon: 60.0,
            dt: 0.01,
            collision_epsilon: 0.01,
            stride: 1,
            guard: GuardSettings::default(),
        }
    }
}

/// Tolerances of the trajectory checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifySettings {
    /// Refuse to simulate unless every `β_k` exceeds the model's α.
    pub enabled: bool,
    /// Relative slack on sub-level set invariance.
    pub tol_inv: f64,
    /// Absolute floor under which Lyapunov values count as zero.
    pub lyap_floor: f64,
    pub tol_match: f64,
    /// Length of the constant-input tail required for the matching check.
    pub matching_window: f64,
    /// Rate-identity residual must stay below `rate_c · h²`.
    pub rate_c: f64,
    /// Slack on the concave-case rate bound.
    pub concave_tol: f64,
    /// Slack on step-to-step increase of the formation Lyapunov function.
    pub formation_tol: f64,
    pub alpha_box: f64,
    pub alpha_samples: usize,
}

impl Default for CertifySettings {
    fn default() -> Self {
        CertifySettings {
            enabled: true,
            tol_inv: 1e-6,
            lyap_floor: 1e-12,
            tol_match: 1e-3,
            matching_window: 20.0,
            rate_c: 1.0,
            concave_tol: 1e-6,
            formation_tol: 1e-6,
            alpha_box: 50.0,
            alpha_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Followers, excluding the leader.
    pub n: usize,
    pub dim: usize,
    pub model: VehicleModel,
    pub spacing: SpacingPlan,
    pub controllers: ControllerPlan,
    pub profile: LeaderProfile,
    pub sim: SimSettings,
    pub certify: CertifySettings,
}

impl Scenario {
    pub fn spacings(&self) -> Result<InitialSpacing> {
        let lengths = match &self.spacing {
            SpacingPlan::Explicit(v) => {
                if v.len() != self.n + 1 {
                    return Err(PlatoonError::Config(format!(
                        "{} spacings given for {} agents",
                        v.len(),
                        self.n + 1
                    )));
                }
                v.clone()
            }
            SpacingPlan::Cycle(p) => {
                if p.is_empty() {
                    return Err(PlatoonError::Config("spacing pattern is empty".into()));
                }
                (0..=self.n).map(|j| p[j % p.len()]).collect()
            }
        };
        InitialSpacing::new(lengths)
    }

    pub fn controller_configs(&self) -> Result<Vec<ControllerConfig>> {
        match &self.controllers {
            ControllerPlan::Uniform(c) => Ok(vec![*c; self.n]),
            ControllerPlan::PerAgent(v) if v.len() == self.n => Ok(v.clone()),
            ControllerPlan::PerAgent(v) => Err(PlatoonError::Config(format!(
                "{} controller entries for {} followers",
                v.len(),
                self.n
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(PlatoonError::Config(m));
        if self.n == 0 {
            return cfg("need at least one follower".into());
        }
        if self.dim == 0 {
            return cfg("dimension must be at least 1".into());
        }
        self.model.validate().map_err(|e| PlatoonError::Config(e.to_string()))?;
        let spacing = self.spacings()?;
        if self.certify.enabled {
            self.gate()?;
        }
        for c in self.controller_configs()? {
            c.validate()?;
        }
        self.profile.validate()?;
        let s = &self.sim;
        if !(s.horizon.is_finite() && s.horizon > 0.0) {
            return cfg(format!("horizon must be positive, got {}", s.horizon));
        }
        if !(s.dt.is_finite() && s.dt > 0.0 && s.dt <= s.horizon) {
            return cfg(format!("dt must lie in (0, T], got {}", s.dt));
        }
        if s.stride == 0 {
            return cfg("record stride must be at least 1".into());
        }
        if s.guard.max_control_jump.is_nan() || s.guard.max_control_jump <= 0.0 {
            return cfg("guard ceiling must be positive".into());
        }
        let min_gap = spacing.lengths[1..].iter().cloned().fold(f64::INFINITY, f64::min);
        if !(s.collision_epsilon > 0.0 && s.collision_epsilon < min_gap) {
            return cfg(format!(
                "collision_epsilon {} must be positive and below the smallest initial gap {}",
                s.collision_epsilon, min_gap
            ));
        }
        Ok(())
    }

    /// Agent-wise check of `β_k > α` (and, for custom models, that sampling
    /// does not contradict the declared α). Part of [`Scenario::validate`]
    /// when certification is enabled.
    pub fn gate(&self) -> Result<()> {
        let alpha = alpha_bound(&self.model);
        if let VehicleModel::Custom(c) = &self.model {
            let bx = VelocityBox::cube(-self.certify.alpha_box, self.certify.alpha_box, self.dim);
            let sampled = alpha_estimate(&self.model, &bx, self.certify.alpha_samples)?;
            if sampled > c.alpha_hint + 1e-9 {
                return Err(PlatoonError::Config(format!(
                    "custom model '{}': sampled alpha {sampled} exceeds declared alpha_hint {}",
                    c.name, c.alpha_hint
                )));
            }
        }
        for (i, c) in self.controller_configs()?.iter().enumerate() {
            if c.beta <= alpha {
                return Err(PlatoonError::Config(format!(
                    "agent {}: beta {} does not exceed alpha {alpha}; stability and collision \
                     avoidance are only guaranteed for beta > alpha",
                    i + 1,
                    c.beta
                )));
            }
        }
        Ok(())
    }

    /// `β_k > α` for every follower under the feedforward law.
    pub fn is_certifiable(&self) -> bool {
        let alpha = alpha_bound(&self.model);
        self.controller_configs()
            .map(|cs| {
                cs.iter()
                    .all(|c| c.beta > alpha && c.variant == ControlVariant::Feedforward)
            })
            .unwrap_or(false)
    }

    pub fn variant(&self) -> ControlVariant {
        match &self.controllers {
            ControllerPlan::Uniform(c) => c.variant,
            ControllerPlan::PerAgent(v) => v.first().map(|c| c.variant).unwrap_or(ControlVariant::Feedforward),
        }
    }

    pub fn with_variant(&self, variant: ControlVariant) -> Scenario {
        let mut s = self.clone();
        match &mut s.controllers {
            ControllerPlan::Uniform(c) => c.variant = variant,
            ControllerPlan::PerAgent(v) => v.iter_mut().for_each(|c| c.variant = variant),
        }
        s
    }

    /// The same platoon with `n` followers. Per-agent data is truncated; it
    /// cannot be invented, so growing an explicit list is an error.
    pub fn with_agents(&self, n: usize) -> Result<Scenario> {
        let mut s = self.clone();
        s.n = n;
        if let SpacingPlan::Explicit(v) = &mut s.spacing {
            if v.len() < n + 1 {
                return Err(PlatoonError::InvalidInput(format!(
                    "explicit spacings cover {} followers, {n} requested",
                    v.len().saturating_sub(1)
                )));
            }
            v.truncate(n + 1);
        }
        if let ControllerPlan::PerAgent(v) = &mut s.controllers {
            if v.len() < n {
                return Err(PlatoonError::InvalidInput(format!(
                    "per-agent controllers cover {} followers, {n} requested",
                    v.len()
                )));
            }
            v.truncate(n);
        }
        Ok(s)
    }

    /// Stable hash of everything that influences the trajectory.
    pub fn fingerprint(&self) -> String {
        let canon = format!(
            "{}|{}|{:?}|{:?}|{:?}|{:?}|{:?}",
            self.n, self.dim, self.model, self.spacing, self.controllers, self.profile, self.sim
        );
        hex::encode(Sha256::digest(canon.as_bytes()))
    }
}
