//! TOML scenario files.
//!
//! Every section is optional except `[platoon]`, and every key outside it has
//! a default (see the README for the full table). Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::apf::ApfParams;
use crate::controller::{ControlVariant, ControllerConfig, LeaderProfile};
use crate::dynamics::VehicleModel;
use crate::error::{PlatoonError, Result};
use crate::scenario::{
    CertifySettings, ControllerPlan, GuardSettings, Scenario, SimSettings, SpacingPlan,
};
use crate::sigma::SigmaParam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub platoon: PlatoonSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default = "default_leader")]
    pub leader: LeaderProfile,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub certify: CertifySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatoonSection {
    pub n: usize,
    #[serde(default = "one")]
    pub dim: usize,
    /// `ℓ_0 … ℓ_n`, exactly `n + 1` entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacings: Option<Vec<f64>>,
    /// Repeating pattern, used when `spacings` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_cycle: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    LinearDrag,
    SignedQuadraticDrag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub family: ModelFamily,
    pub c1: f64,
    pub c2: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            family: ModelFamily::LinearDrag,
            c1: 0.5,
            c2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub variant: ControlVariant,
    /// A scalar for every follower, or one value per follower.
    pub beta: OneOrMany,
    pub apf_amplitude: f64,
    /// Potential minimum in σ-units. Takes precedence over the gap form.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub apf_delta_sigma: Option<f64>,
    /// Potential minimum given as a Euclidean distance in meters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub apf_equilibrium_gap: Option<f64>,
    pub sigma: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        ControllerSection {
            variant: ControlVariant::Feedforward,
            beta: OneOrMany::One(1.0),
            apf_amplitude: 1.0,
            apf_delta_sigma: None,
            apf_equilibrium_gap: None,
            sigma: 1.0,
        }
    }
}

const DEFAULT_EQUILIBRIUM_GAP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub collision_epsilon: f64,
    pub stride: usize,
    pub guard: GuardSection,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimSettings::default();
        SimSection {
            horizon: s.horizon,
            dt: s.dt,
            collision_epsilon: s.collision_epsilon,
            stride: s.stride,
            guard: GuardSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuardSection {
    /// `inf` disables the guard.
    pub max_control_jump: f64,
    pub max_halvings: u32,
}

impl Default for GuardSection {
    fn default() -> Self {
        let g = GuardSettings::default();
        GuardSection {
            max_control_jump: g.max_control_jump,
            max_halvings: g.max_halvings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySection {
    pub enabled: bool,
    pub tol_inv: f64,
    pub lyap_floor: f64,
    pub tol_match: f64,
    pub matching_window: f64,
    pub rate_c: f64,
    pub concave_tol: f64,
    pub formation_tol: f64,
    pub alpha_box: f64,
    pub alpha_samples: usize,
}

impl Default for CertifySection {
    fn default() -> Self {
        CertifySection::from(CertifySettings::default())
    }
}

impl From<CertifySettings> for CertifySection {
    fn from(c: CertifySettings) -> Self {
        CertifySection {
            enabled: c.enabled,
            tol_inv: c.tol_inv,
            lyap_floor: c.lyap_floor,
            tol_match: c.tol_match,
            matching_window: c.matching_window,
            rate_c: c.rate_c,
            concave_tol: c.concave_tol,
            formation_tol: c.formation_tol,
            alpha_box: c.alpha_box,
            alpha_samples: c.alpha_samples,
        }
    }
}

impl From<&CertifySection> for CertifySettings {
    fn from(c: &CertifySection) -> Self {
        CertifySettings {
            enabled: c.enabled,
            tol_inv: c.tol_inv,
            lyap_floor: c.lyap_floor,
            tol_match: c.tol_match,
            matching_window: c.matching_window,
            rate_c: c.rate_c,
            concave_tol: c.concave_tol,
            formation_tol: c.formation_tol,
            alpha_box: c.alpha_box,
            alpha_samples: c.alpha_samples,
        }
    }
}

fn one() -> usize {
    1
}

fn default_leader() -> LeaderProfile {
    LeaderProfile::Constant { input: 0.0 }
}

fn config_err(e: impl std::fmt::Display) -> PlatoonError {
    PlatoonError::Config(e.to_string())
}

impl ScenarioFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(config_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PlatoonError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(config_err)
    }

    /// Builds and validates the scenario described by the file.
    pub fn resolve(&self) -> Result<Scenario> {
        let p = &self.platoon;
        let spacing = match (&p.spacings, &p.spacing_cycle) {
            (Some(_), Some(_)) => {
                return Err(config_err("give either platoon.spacings or platoon.spacing_cycle, not both"))
            }
            (Some(v), None) => SpacingPlan::Explicit(v.clone()),
            (None, Some(c)) => SpacingPlan::Cycle(c.clone()),
            (None, None) => SpacingPlan::Cycle(vec![DEFAULT_EQUILIBRIUM_GAP]),
        };

        let model = match self.model.family {
            ModelFamily::LinearDrag if self.model.c2 != 0.0 => {
                return Err(config_err("model.c2 only applies to signed_quadratic_drag"))
            }
            ModelFamily::LinearDrag => VehicleModel::LinearDrag { c1: self.model.c1 },
            ModelFamily::SignedQuadraticDrag => VehicleModel::SignedQuadraticDrag {
                c1: self.model.c1,
                c2: self.model.c2,
            },
        };

        let c = &self.controller;
        let sigma = SigmaParam::new(c.sigma).map_err(config_err)?;
        let apf = match (c.apf_delta_sigma, c.apf_equilibrium_gap) {
            (Some(_), Some(_)) => {
                return Err(config_err(
                    "give either controller.apf_delta_sigma or controller.apf_equilibrium_gap, not both",
                ))
            }
            (Some(d), None) => ApfParams::new(c.apf_amplitude, d),
            (None, gap) => ApfParams::with_equilibrium_gap(
                c.apf_amplitude,
                gap.unwrap_or(DEFAULT_EQUILIBRIUM_GAP),
                sigma,
            ),
        }
        .map_err(config_err)?;
        let with_beta = |beta| ControllerConfig { beta, apf, sigma, variant: c.variant };
        let controllers = match &c.beta {
            OneOrMany::One(b) => ControllerPlan::Uniform(with_beta(*b)),
            OneOrMany::Many(bs) => ControllerPlan::PerAgent(bs.iter().map(|b| with_beta(*b)).collect()),
        };

        let s = &self.sim;
        let scenario = Scenario {
            n: p.n,
            dim: p.dim,
            model,
            spacing,
            controllers,
            profile: self.leader.clone(),
            sim: SimSettings {
                horizon: s.horizon,
                dt: s.dt,
                collision_epsilon: s.collision_epsilon,
                stride: s.stride,
                guard: GuardSettings {
                    max_control_jump: s.guard.max_control_jump,
                    max_halvings: s.guard.max_halvings,
                },
            },
            certify: (&self.certify).into(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Fully explicit file for a scenario. Custom models and controllers
    /// that differ in anything but β cannot be written.
    pub fn from_scenario(sc: &Scenario) -> Result<Self> {
        let model = match &sc.model {
            VehicleModel::LinearDrag { c1 } => ModelSection {
                family: ModelFamily::LinearDrag,
                c1: *c1,
                c2: 0.0,
            },
            VehicleModel::SignedQuadraticDrag { c1, c2 } => ModelSection {
                family: ModelFamily::SignedQuadraticDrag,
                c1: *c1,
                c2: *c2,
            },
            VehicleModel::Custom(m) => {
                return Err(config_err(format!("custom model '{}' has no file form", m.name)))
            }
        };
        let (first, beta) = match &sc.controllers {
            ControllerPlan::Uniform(c) => (*c, OneOrMany::One(c.beta)),
            ControllerPlan::PerAgent(v) => {
                let Some(first) = v.first() else {
                    return Err(config_err("no controllers"));
                };
                if v.iter().any(|c| c.apf != first.apf || c.sigma != first.sigma || c.variant != first.variant) {
                    return Err(config_err("per-agent controllers differ beyond beta"));
                }
                (*first, OneOrMany::Many(v.iter().map(|c| c.beta).collect()))
            }
        };
        let (spacings, spacing_cycle) = match &sc.spacing {
            SpacingPlan::Explicit(v) => (Some(v.clone()), None),
            SpacingPlan::Cycle(v) => (None, Some(v.clone())),
        };
        Ok(ScenarioFile {
            platoon: PlatoonSection {
                n: sc.n,
                dim: sc.dim,
                spacings,
                spacing_cycle,
            },
            model,
            controller: ControllerSection {
                variant: first.variant,
                beta,
                apf_amplitude: first.apf.amplitude,
                apf_delta_sigma: Some(first.apf.delta_sigma),
                apf_equilibrium_gap: None,
                sigma: first.sigma.value(),
            },
            leader: sc.profile.clone(),
            sim: SimSection {
                horizon: sc.sim.horizon,
                dt: sc.sim.dt,
                collision_epsilon: sc.sim.collision_epsilon,
                stride: sc.sim.stride,
                guard: GuardSection {
                    max_control_jump: sc.sim.guard.max_control_jump,
                    max_halvings: sc.sim.guard.max_halvings,
                },
            },
            certify: sc.certify.into(),
        })
    }
}

/// Reads and resolves a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    ScenarioFile::load(path)?.resolve()
}

/// TOML text that reloads to `sc`.
pub fn echo_scenario(sc: &Scenario) -> Result<String> {
    ScenarioFile::from_scenario(sc)?.to_toml_string()
}
