//! Artificial potential functions of the σ-norm gap between a follower and
//! its predecessor.
//!
//! A potential must be nonnegative, diverge as the gap shrinks to zero, grow
//! without bound for large gaps and have a single zero minimum at `δ`. The
//! built-in family is the rational barrier `V(s) = a (s − δ)² / s`, which
//! satisfies all of these with a closed-form derivative.

use serde::{Deserialize, Serialize};

use crate::error::{PlatoonError, Result};
use crate::sigma::{euclid_from_sigma, sigma_norm_of_sq, SigmaParam};
use crate::vector::{all_finite, norm_sq, sub};

/// A potential of the σ-norm gap `s > 0`.
pub trait Potential {
    fn value(&self, s: f64) -> Result<f64>;
    fn deriv(&self, s: f64) -> Result<f64>;
    /// Location of the unique minimum, in σ-norm units.
    fn delta(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApfParams {
    pub amplitude: f64,
    pub delta_sigma: f64,
}

impl ApfParams {
    pub fn new(amplitude: f64, delta_sigma: f64) -> Result<Self> {
        let p = ApfParams {
            amplitude,
            delta_sigma,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters whose minimum sits at the Euclidean gap `gap`.
    pub fn with_equilibrium_gap(amplitude: f64, gap: f64, sigma: SigmaParam) -> Result<Self> {
        if !(gap.is_finite() && gap > 0.0) {
            return Err(PlatoonError::InvalidInput(format!(
                "equilibrium gap must be positive, got {gap}"
            )));
        }
        Self::new(amplitude, sigma_norm_of_sq(gap * gap, sigma))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(PlatoonError::InvalidInput(format!(
                "apf amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        if !(self.delta_sigma.is_finite() && self.delta_sigma > 0.0) {
            return Err(PlatoonError::InvalidInput(format!(
                "apf delta_sigma must be positive, got {}",
                self.delta_sigma
            )));
        }
        Ok(())
    }

    /// Same minimum, amplitude multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        ApfParams {
            amplitude: self.amplitude * k,
            delta_sigma: self.delta_sigma,
        }
    }
}

fn check_gap(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(PlatoonError::Domain(format!(
            "potential evaluated at non-positive gap {s}"
        )))
    }
}

impl Potential for ApfParams {
    fn value(&self, s: f64) -> Result<f64> {
        apf_value(s, self)
    }

    fn deriv(&self, s: f64) -> Result<f64> {
        apf_deriv(s, self)
    }

    fn delta(&self) -> f64 {
        self.delta_sigma
    }
}

pub fn apf_value(s: f64, p: &ApfParams) -> Result<f64> {
    check_gap(s)?;
    let d = s - p.delta_sigma;
    Ok(p.amplitude * d * d / s)
}

/// `a (s − δ)(s + δ) / s²`
pub fn apf_deriv(s: f64, p: &ApfParams) -> Result<f64> {
    check_gap(s)?;
    Ok(p.amplitude * (s - p.delta_sigma) * (s + p.delta_sigma) / (s * s))
}

fn gap_geometry(y_k: &[f64], y_prev: &[f64], sp: SigmaParam) -> Result<(Vec<f64>, f64, f64)> {
    if y_k.len() != y_prev.len() {
        return Err(PlatoonError::InvalidInput("dimension mismatch".into()));
    }
    if !(all_finite(y_k) && all_finite(y_prev)) {
        return Err(PlatoonError::InvalidInput("non-finite position".into()));
    }
    let z = sub(y_prev, y_k);
    let r2 = norm_sq(&z);
    if r2 == 0.0 {
        return Err(PlatoonError::Collision {
            predecessor: 0,
            follower: 1,
        });
    }
    let s = sigma_norm_of_sq(r2, sp);
    let denom = sp.value() * (1.0 + r2).sqrt();
    Ok((z, s, denom))
}

/// `∇_{y_k} V(‖y_prev − y_k‖_σ)`, the potential gradient seen by the follower.
pub fn apf_grad_follower<P: Potential + ?Sized>(
    y_k: &[f64],
    y_prev: &[f64],
    p: &P,
    sp: SigmaParam,
) -> Result<Vec<f64>> {
    let (z, s, denom) = gap_geometry(y_k, y_prev, sp)?;
    let dv = p.deriv(s)?;
    Ok(z.iter().map(|zi| dv * (-zi / denom)).collect())
}

/// `∇_{y_prev} V(‖y_prev − y_k‖_σ)`; the exact negative of [`apf_grad_follower`].
pub fn apf_grad_predecessor<P: Potential + ?Sized>(
    y_k: &[f64],
    y_prev: &[f64],
    p: &P,
    sp: SigmaParam,
) -> Result<Vec<f64>> {
    let (z, s, denom) = gap_geometry(y_k, y_prev, sp)?;
    let dv = p.deriv(s)?;
    Ok(z.iter().map(|zi| dv * (zi / denom)).collect())
}

/// Guaranteed minimum Euclidean gap for a potential level `c`: every gap whose
/// potential stays below `c` is longer than the returned value.
///
/// Bisects the decreasing branch on `(0, δ]`, keeping the lower end so that
/// `V(η_c) ≥ c` holds for the returned value.
pub fn eta_c<P: Potential + ?Sized>(c: f64, p: &P, sp: SigmaParam) -> Result<f64> {
    if !(c.is_finite() && c > 0.0) {
        return Err(PlatoonError::InvalidInput(format!(
            "potential level must be positive, got {c}"
        )));
    }
    let delta = p.delta();
    let mut lo = 1e-14_f64.min(0.5 * delta);
    while p.value(lo)? <= c {
        lo *= 1e-3;
        if lo < f64::MIN_POSITIVE {
            return Err(PlatoonError::InvalidInput(format!(
                "potential level {c} exceeds the representable barrier"
            )));
        }
    }
    let mut hi = delta;
    loop {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if p.value(mid)? > c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    euclid_from_sigma(lo, sp)
}

/// Numerical self-test of the potential axioms, run when a family is registered.
pub fn check_axioms<P: Potential + ?Sized>(p: &P) -> Result<()> {
    let delta = p.delta();
    let fail = |what: &str| Err(PlatoonError::InvalidInput(format!("potential axiom violated: {what}")));

    let at_min = p.value(delta)?;
    if at_min.abs() > 1e-12 {
        return fail("value at the minimum is not zero");
    }
    if p.deriv(delta)?.abs() > 1e-9 {
        return fail("derivative does not vanish at the minimum");
    }
    // Geometric grid from 1e-9 δ to 1e4 δ.
    for i in 0..=260 {
        let s = delta * 10f64.powf(-9.0 + 13.0 * i as f64 / 260.0);
        if (s - delta).abs() <= 1e-9 * delta {
            continue;
        }
        let v = p.value(s)?;
        let d = p.deriv(s)?;
        if !(v.is_finite() && d.is_finite()) || v < 0.0 {
            return fail("negative or non-finite value");
        }
        let sign = if s < delta { -1.0 } else { 1.0 };
        if d * sign <= 0.0 {
            return fail("derivative sign does not change exactly once at the minimum");
        }
    }
    let near = p.value(delta * 1e-12)?;
    if near <= 1e6 * p.value(0.5 * delta)? {
        return fail("no barrier at zero gap");
    }
    if p.value(1e4 * delta)? <= p.value(10.0 * delta)? {
        return fail("not radially unbounded");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ap(a: f64, d: f64) -> ApfParams {
        ApfParams::new(a, d).unwrap()
    }

    fn sp1() -> SigmaParam {
        SigmaParam::new(1.0).unwrap()
    }

    #[test]
    fn value_examples() {
        assert_eq!(apf_value(2.0, &ap(3.0, 2.0)).unwrap(), 0.0);
        assert_eq!(apf_value(1.0, &ap(1.0, 2.0)).unwrap(), 1.0);
        assert_eq!(apf_value(4.0, &ap(1.0, 2.0)).unwrap(), 1.0);
    }

    #[test]
    fn deriv_examples() {
        assert_eq!(apf_deriv(2.0, &ap(1.0, 2.0)).unwrap(), 0.0);
        assert_eq!(apf_deriv(1.0, &ap(1.0, 2.0)).unwrap(), -3.0);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(apf_value(0.0, &ap(1.0, 1.0)), Err(PlatoonError::Domain(_))));
        assert!(matches!(apf_deriv(-1.0, &ap(1.0, 1.0)), Err(PlatoonError::Domain(_))));
        assert!(ApfParams::new(0.0, 1.0).is_err());
        assert!(ApfParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn follower_gradient_example() {
        let g = apf_grad_follower(&[0.0], &[3f64.sqrt()], &ap(1.0, 2.0), sp1()).unwrap();
        assert!((g[0] - 3.0 * 3f64.sqrt() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_vanishes_at_equilibrium() {
        let sp = sp1();
        let p = ApfParams::with_equilibrium_gap(1.0, 10.0, sp).unwrap();
        let g = apf_grad_follower(&[0.0], &[10.0], &p, sp).unwrap();
        assert!(g[0].abs() < 1e-15);
    }

    #[test]
    fn coincident_positions_collide() {
        let r = apf_grad_follower(&[1.0, 2.0], &[1.0, 2.0], &ap(1.0, 1.0), sp1());
        assert!(matches!(r, Err(PlatoonError::Collision { .. })));
    }

    #[test]
    fn eta_c_root_of_rational_family() {
        // (s − 2)²/s = 1  ⇔  s² − 5s + 4 = 0, smaller root s = 1.
        let eta = eta_c(1.0, &ap(1.0, 2.0), sp1()).unwrap();
        assert!((eta - 3f64.sqrt()).abs() < 1e-9);
        let s = sigma_norm_of_sq(eta * eta, sp1());
        assert!((apf_value(s, &ap(1.0, 2.0)).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn eta_c_rejects_nonpositive_level() {
        assert!(eta_c(0.0, &ap(1.0, 2.0), sp1()).is_err());
        assert!(eta_c(-1.0, &ap(1.0, 2.0), sp1()).is_err());
    }

    #[test]
    fn eta_c_decreasing_and_below_equilibrium() {
        let p = ap(1.0, 2.0);
        let eq = euclid_from_sigma(2.0, sp1()).unwrap();
        let mut last = eq;
        for c in [1e-6, 1e-3, 0.1, 1.0, 10.0, 1e3, 1e6, 1e9] {
            let e = eta_c(c, &p, sp1()).unwrap();
            assert!(e < last, "c = {c}: {e} !< {last}");
            last = e;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn builtin_family_passes_axioms() {
        for (a, d) in [(1.0, 1.0), (1e-8, 9.0), (50.0, 0.01), (1.0, 1e3)] {
            check_axioms(&ap(a, d)).unwrap();
        }
    }

    struct Flat;
    impl Potential for Flat {
        fn value(&self, _s: f64) -> Result<f64> {
            Ok(0.0)
        }
        fn deriv(&self, _s: f64) -> Result<f64> {
            Ok(0.0)
        }
        fn delta(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn flat_potential_fails_axioms() {
        assert!(check_axioms(&Flat).is_err());
    }

    proptest! {
        #[test]
        fn anti_symmetry_is_exact(
            yk in prop::collection::vec(-100.0f64..100.0, 1..4),
            off in prop::collection::vec(-20.0f64..20.0, 3),
            a in 0.01f64..10.0, d in 0.1f64..20.0,
        ) {
            let yp: Vec<f64> = yk.iter().zip(&off).map(|(y, o)| y + o).collect();
            prop_assume!(yp != yk);
            let p = ap(a, d);
            let f = apf_grad_follower(&yk, &yp, &p, sp1()).unwrap();
            let g = apf_grad_predecessor(&yk, &yp, &p, sp1()).unwrap();
            for (x, y) in f.iter().zip(&g) {
                prop_assert_eq!(x + y, 0.0);
            }
        }

        #[test]
        fn deriv_sign_matches_side(s in 1e-6f64..1e3, d in 0.1f64..20.0) {
            let v = apf_deriv(s, &ap(1.0, d)).unwrap();
            if s < d { prop_assert!(v < 0.0) } else if s > d { prop_assert!(v > 0.0) }
        }
    }
}
