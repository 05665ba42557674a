//! Agent model `ẏ = v`, `v̇ = f(v) + u` and the platoon's initial condition.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PlatoonError, Result};
use crate::vector::{all_finite, along_axis0, dot, norm, norm_sq, sub};

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl AgentState {
    pub fn new(position: Vec<f64>, velocity: Vec<f64>) -> Result<Self> {
        if position.len() != velocity.len() || position.is_empty() {
            return Err(PlatoonError::InvalidInput(
                "position and velocity must share a nonzero dimension".into(),
            ));
        }
        let s = AgentState { position, velocity };
        if !s.is_finite() {
            return Err(PlatoonError::InvalidInput("non-finite agent state".into()));
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.position) && all_finite(&self.velocity)
    }
}

pub type DragFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// User-supplied drag map with a declared one-sided Lipschitz constant.
#[derive(Clone)]
pub struct CustomModel {
    pub name: String,
    pub f: Arc<DragFn>,
    pub alpha_hint: f64,
    /// Upper bound on `f′` when `f` is known to be concave and differentiable.
    pub gamma_hint: Option<f64>,
}

impl fmt::Debug for CustomModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomModel")
            .field("name", &self.name)
            .field("alpha_hint", &self.alpha_hint)
            .field("gamma_hint", &self.gamma_hint)
            .finish()
    }
}

impl PartialEq for CustomModel {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.alpha_hint == other.alpha_hint
            && self.gamma_hint == other.gamma_hint
            && Arc::ptr_eq(&self.f, &other.f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VehicleModel {
    /// `f(v) = −c1 v`
    LinearDrag { c1: f64 },
    /// `f(v) = −c1 v − c2 v ‖v‖`
    SignedQuadraticDrag { c1: f64, c2: f64 },
    Custom(CustomModel),
}

impl VehicleModel {
    pub fn validate(&self) -> Result<()> {
        let ok = |c: f64| c.is_finite() && c >= 0.0;
        match self {
            VehicleModel::LinearDrag { c1 } if !ok(*c1) => Err(PlatoonError::InvalidInput(
                format!("drag coefficient must be nonnegative, got {c1}"),
            )),
            VehicleModel::SignedQuadraticDrag { c1, c2 } if !(ok(*c1) && ok(*c2)) => {
                Err(PlatoonError::InvalidInput(format!(
                    "drag coefficients must be nonnegative, got ({c1}, {c2})"
                )))
            }
            VehicleModel::Custom(m) if !m.alpha_hint.is_finite() => Err(
                PlatoonError::InvalidInput("custom model needs a finite alpha_hint".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn drag(&self, v: &[f64]) -> Vec<f64> {
        match self {
            VehicleModel::LinearDrag { c1 } => v.iter().map(|x| -c1 * x).collect(),
            VehicleModel::SignedQuadraticDrag { c1, c2 } => {
                let speed = norm(v);
                v.iter().map(|x| -c1 * x - c2 * x * speed).collect()
            }
            VehicleModel::Custom(m) => (m.f)(v),
        }
    }
}

/// `f(v) + u`
pub fn accel(m: &VehicleModel, v: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if v.len() != u.len() {
        return Err(PlatoonError::InvalidInput("dimension mismatch".into()));
    }
    if !(all_finite(v) && all_finite(u)) {
        return Err(PlatoonError::InvalidInput("non-finite input".into()));
    }
    Ok(m.drag(v).iter().zip(u).map(|(f, u)| f + u).collect())
}

/// Tightest analytic α with `(v₂−v₁)ᵀ(f(v₂)−f(v₁)) ≤ α‖v₂−v₁‖²`.
pub fn alpha_bound(m: &VehicleModel) -> f64 {
    match m {
        // v ↦ −c2 v‖v‖ is the gradient of a concave function, so only −c1 remains.
        VehicleModel::LinearDrag { c1 } | VehicleModel::SignedQuadraticDrag { c1, .. } => -c1,
        VehicleModel::Custom(c) => c.alpha_hint,
    }
}

/// Axis-aligned velocity box used for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl VelocityBox {
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Self {
        VelocityBox {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }
}

/// Sampled maximum of the secant ratio `(v₂−v₁)ᵀ(f(v₂)−f(v₁)) / ‖v₂−v₁‖²`
/// over `samples` uniformly drawn pairs. The generator is seeded, so the
/// estimate is reproducible.
pub fn alpha_estimate(m: &VehicleModel, bx: &VelocityBox, samples: usize) -> Result<f64> {
    if samples < 2 {
        return Err(PlatoonError::InvalidInput("need at least two samples".into()));
    }
    if bx.lo.len() != bx.hi.len() || bx.lo.is_empty() {
        return Err(PlatoonError::InvalidInput("malformed velocity box".into()));
    }
    if bx.lo.iter().zip(&bx.hi).any(|(l, h)| h.partial_cmp(l) != Some(std::cmp::Ordering::Greater) || !l.is_finite() || !h.is_finite()) {
        return Err(PlatoonError::InvalidInput("velocity box has zero volume".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_a1fa);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        bx.lo.iter().zip(&bx.hi).map(|(l, h)| rng.gen_range(*l..*h)).collect()
    };
    let mut best = f64::NEG_INFINITY;
    for _ in 0..samples {
        let v1 = draw(&mut rng);
        let v2 = draw(&mut rng);
        let dv = sub(&v2, &v1);
        let d2 = norm_sq(&dv);
        if d2 == 0.0 {
            continue;
        }
        let df = sub(&m.drag(&v2), &m.drag(&v1));
        best = best.max(dot(&dv, &df) / d2);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub enum GammaBound {
    Bound(f64),
    NotApplicable(String),
}

/// Upper bound on `f′` for concave differentiable models.
pub fn gamma_bound(m: &VehicleModel) -> GammaBound {
    match m {
        VehicleModel::LinearDrag { c1 } => GammaBound::Bound(-c1),
        VehicleModel::SignedQuadraticDrag { c2, .. } if *c2 == 0.0 => {
            GammaBound::NotApplicable("quadratic drag with c2 = 0; use LinearDrag".into())
        }
        VehicleModel::SignedQuadraticDrag { .. } => GammaBound::NotApplicable(
            "signed quadratic drag is not globally concave (f'' changes sign at v = 0)".into(),
        ),
        VehicleModel::Custom(c) => match c.gamma_hint {
            Some(g) => GammaBound::Bound(g),
            None => GammaBound::NotApplicable(format!("custom model '{}' declares no concavity bound", c.name)),
        },
    }
}

/// Initial distances `ℓ_0 … ℓ_n`: `ℓ_0` offsets the leader from the origin,
/// `ℓ_k` for `k ≥ 1` is the starting gap between agents `k − 1` and `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialSpacing {
    pub lengths: Vec<f64>,
}

impl InitialSpacing {
    pub fn new(lengths: Vec<f64>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(PlatoonError::Config("spacing list is empty".into()));
        }
        if let Some((j, l)) = lengths.iter().enumerate().find(|(_, l)| !(l.is_finite() && **l > 0.0)) {
            return Err(PlatoonError::Config(format!("spacing l_{j} = {l} must be positive")));
        }
        Ok(InitialSpacing { lengths })
    }
}

/// Agent `k` starts at rest at `−(ℓ_0 + … + ℓ_k)` along the first axis.
pub fn initial_platoon(spacings: &InitialSpacing, dim: usize) -> Result<Vec<AgentState>> {
    if dim == 0 {
        return Err(PlatoonError::Config("dimension must be at least 1".into()));
    }
    InitialSpacing::new(spacings.lengths.clone())?;
    let mut offset = 0.0;
    Ok(spacings
        .lengths
        .iter()
        .map(|l| {
            offset += l;
            AgentState {
                position: along_axis0(-offset, dim),
                velocity: vec![0.0; dim],
            }
        })
        .collect())
}
