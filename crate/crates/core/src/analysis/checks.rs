use std::collections::BTreeMap;

use super::{lyap_formation, lyap_local, lyap_rate_rhs, CertificationReport, CheckResult, Location};
use crate::apf::eta_c;
use crate::dynamics::{gamma_bound, AgentState, GammaBound};
use crate::error::{PlatoonError, Result};
use crate::scenario::Scenario;
use crate::simulator::{closed_loop_rhs, TrajectoryLog};
use crate::vector::{norm, norm_sq, sub};

/// Worst mismatch between a finite-difference rate and its prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct RateResiduals {
    /// Largest absolute residual per follower (index 0 is agent 1).
    pub per_agent: Vec<f64>,
    pub worst: f64,
    pub location: Option<Location>,
    /// Record spacing used by the central differences.
    pub spacing: f64,
}

/// Interior records whose two neighbours are equally spaced.
fn central_points(log: &TrajectoryLog) -> Result<(Vec<usize>, f64)> {
    if log.len() < 3 {
        return Err(PlatoonError::InvalidInput(format!(
            "log has {} records; central differences need at least 3",
            log.len()
        )));
    }
    let h = log.times[1] - log.times[0];
    let pts = (1..log.len() - 1)
        .filter(|&r| {
            let a = log.times[r] - log.times[r - 1];
            let b = log.times[r + 1] - log.times[r];
            (a - h).abs() <= 1e-9 * h && (b - h).abs() <= 1e-9 * h
        })
        .collect();
    Ok((pts, h))
}

fn fd_rate(series: impl Fn(usize) -> f64, r: usize, h: f64) -> f64 {
    (series(r + 1) - series(r - 1)) / (2.0 * h)
}

fn residual_scan(
    log: &TrajectoryLog,
    signed: bool,
    residual: impl Fn(usize, usize, f64) -> f64,
) -> Result<RateResiduals> {
    let (pts, h) = central_points(log)?;
    let mut per_agent = vec![if signed { f64::NEG_INFINITY } else { 0.0 }; log.followers()];
    let mut worst = if signed { f64::NEG_INFINITY } else { 0.0 };
    let mut location = None;
    for k in 1..log.agents {
        for &r in &pts {
            let fd = fd_rate(|i| log.lyap(i, k), r, h);
            let mut res = residual(r, k, fd);
            if !signed {
                res = res.abs();
            }
            if res > per_agent[k - 1] {
                per_agent[k - 1] = res;
            }
            if res > worst || location.is_none() {
                worst = res;
                location = Some(Location { t: log.times[r], k });
            }
        }
    }
    Ok(RateResiduals {
        per_agent,
        worst,
        location,
        spacing: h,
    })
}

/// Central difference of logged `L_k` against the predicted rate
/// `z_vᵀ(f(v_{k−1}) − f(v_k)) − β‖z_v‖²`, evaluated from logged velocities.
pub fn check_rate_identity(log: &TrajectoryLog, scenario: &Scenario) -> Result<RateResiduals> {
    let cfgs = scenario.controller_configs()?;
    residual_scan(log, false, |r, k, fd| {
        let rhs = lyap_rate_rhs(log.zv(r, k), log.v(r, k - 1), log.v(r, k), cfgs[k - 1].beta, &scenario.model);
        fd - rhs
    })
}

/// Signed excess of the logged rate over `(γ − β)‖z_v‖²`.
pub fn check_concave_rate(log: &TrajectoryLog, scenario: &Scenario, gamma: f64) -> Result<RateResiduals> {
    let cfgs = scenario.controller_configs()?;
    residual_scan(log, true, |r, k, fd| fd - (gamma - cfgs[k - 1].beta) * norm_sq(log.zv(r, k)))
}

/// `dL_k/dt` at a state, taken along the closed-loop vector field of
/// `scenario` with a five-point stencil of step `h`.
pub fn rate_along_flow(scenario: &Scenario, states: &[AgentState], t: f64, k: usize, h: f64) -> Result<f64> {
    let cfgs = scenario.controller_configs()?;
    let deriv = closed_loop_rhs(states, t, scenario)?;
    let cfg = &cfgs[k - 1];
    let lyap_at = |eps: f64| -> Result<f64> {
        let moved = |j: usize| -> (Vec<f64>, Vec<f64>) {
            let y = states[j].position.iter().zip(&deriv[j].position).map(|(a, b)| a + eps * b).collect();
            let v = states[j].velocity.iter().zip(&deriv[j].velocity).map(|(a, b)| a + eps * b).collect();
            (y, v)
        };
        let (yp, vp) = moved(k - 1);
        let (yk, vk) = moved(k);
        lyap_local(&sub(&yp, &yk), &sub(&vp, &vk), &cfg.apf, cfg.sigma)
    };
    Ok((lyap_at(-2.0 * h)? - 8.0 * lyap_at(-h)? + 8.0 * lyap_at(h)? - lyap_at(2.0 * h)?) / (12.0 * h))
}

fn uncertifiable_reason(log: &TrajectoryLog, scenario: &Scenario) -> Option<String> {
    if !log.status.is_completed() {
        return Some("run did not complete".into());
    }
    if scenario.variant() != crate::controller::ControlVariant::Feedforward {
        return Some("guarantees assume the feedforward law".into());
    }
    if !scenario.is_certifiable() {
        return Some("beta does not exceed alpha; no claim is made".into());
    }
    None
}

/// Sub-level set invariance, minimum-gap bound and velocity matching.
pub fn check_stability(log: &TrajectoryLog, scenario: &Scenario) -> Result<[CheckResult; 3]> {
    const NAMES: [&str; 3] = ["invariance", "gap_bound", "velocity_matching"];
    if let Some(why) = uncertifiable_reason(log, scenario) {
        return Ok(NAMES.map(|n| CheckResult::not_applicable(n, why.clone())));
    }
    let cs = &scenario.certify;
    let cfgs = scenario.controller_configs()?;

    // Invariance: L_k(t) ≤ L_k(0)(1 + tol) + floor.
    let mut worst_inv = f64::NEG_INFINITY;
    let mut loc_inv = None;
    for k in 1..log.agents {
        let bound = log.lyap(0, k) * (1.0 + cs.tol_inv) + cs.lyap_floor;
        for r in 0..log.len() {
            let excess = log.lyap(r, k) - bound;
            if excess > worst_inv {
                worst_inv = excess;
                loc_inv = Some(Location { t: log.times[r], k });
            }
        }
    }
    let invariance = CheckResult::measured(NAMES[0], worst_inv <= 0.0, worst_inv, 0.0, loc_inv);

    // Gap bound: min_t ‖z_k‖ ≥ η_c with c = 2 L_k(0). Equality is reached
    // when the run starts on the compressed side with z_v = 0.
    let mut worst_margin = f64::INFINITY;
    let mut loc_gap = None;
    let mut details = BTreeMap::new();
    for k in 1..log.agents {
        let cfg = &cfgs[k - 1];
        let c = (2.0 * log.lyap(0, k)).max(cs.lyap_floor);
        let eta = eta_c(c, &cfg.apf, cfg.sigma)?;
        let (r_min, gap_min) = (0..log.len())
            .map(|r| (r, norm(log.z(r, k))))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        details.insert(format!("eta_c_{k}"), eta);
        details.insert(format!("min_gap_{k}"), gap_min);
        let margin = gap_min - eta;
        if margin < worst_margin {
            worst_margin = margin;
            loc_gap = Some(Location { t: log.times[r_min], k });
        }
    }
    let mut gap_bound = CheckResult::measured(NAMES[1], worst_margin >= 0.0, worst_margin, 0.0, loc_gap);
    gap_bound.details = details;

    // Velocity matching over a constant-input tail.
    let last = log.len() - 1;
    let t_end = log.times[last];
    let window_start = (t_end - cs.matching_window).max(0.0);
    let matching = if scenario.profile.is_constant_on(window_start, t_end) {
        let (k_worst, worst) = (1..log.agents)
            .map(|k| (k, norm(log.zv(last, k))))
            .fold((1, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        CheckResult::measured(
            NAMES[2],
            worst <= cs.tol_match,
            worst,
            cs.tol_match,
            Some(Location { t: t_end, k: k_worst }),
        )
    } else {
        CheckResult::not_applicable(NAMES[2], "leader input is not constant over the final window")
    };
    Ok([invariance, gap_bound, matching])
}

/// Formation-level function `½ Σ L_k`: step-to-step increase and rate
/// residuals, both against the rate implied by the local identity and
/// against `Σ z_vᵀ(f(v_k) − f(v_{k−1})) − Σ β‖z_v‖²` with no prefactor.
pub fn check_formation(log: &TrajectoryLog, scenario: &Scenario) -> Result<CheckResult> {
    const NAME: &str = "formation_monotone";
    if let Some(why) = uncertifiable_reason(log, scenario) {
        return Ok(CheckResult::not_applicable(NAME, why));
    }
    let series = lyap_formation(log);
    let (r_worst, worst) = (1..series.len())
        .map(|r| (r, series[r] - series[r - 1]))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let tol = scenario.certify.formation_tol;
    let mut res = CheckResult::measured(
        NAME,
        worst <= tol,
        worst,
        tol,
        Some(Location { t: log.times[r_worst], k: 0 }),
    );
    if let Ok((pts, h)) = central_points(log) {
        let cfgs = scenario.controller_configs()?;
        let m = &scenario.model;
        let (mut consistent, mut printed) = (0.0f64, 0.0f64);
        for &r in &pts {
            let fd = fd_rate(|i| series[i], r, h);
            let mut local_sum = 0.0;
            let mut printed_sum = 0.0;
            for k in 1..log.agents {
                let zv = log.zv(r, k);
                let beta = cfgs[k - 1].beta;
                local_sum += lyap_rate_rhs(zv, log.v(r, k - 1), log.v(r, k), beta, m);
                let swapped = sub(&m.drag(log.v(r, k)), &m.drag(log.v(r, k - 1)));
                printed_sum += crate::vector::dot(zv, &swapped) - beta * norm_sq(zv);
            }
            consistent = consistent.max((fd - 0.5 * local_sum).abs());
            printed = printed.max((fd - printed_sum).abs());
        }
        res.details.insert("rate_residual_half_sum".into(), consistent);
        res.details.insert("rate_residual_unscaled_swapped".into(), printed);
    }
    Ok(res)
}

/// In one dimension, every certified run keeps `y_{k−1} > y_k`.
pub fn check_order(log: &TrajectoryLog, scenario: &Scenario) -> CheckResult {
    const NAME: &str = "order_preserved";
    if log.dim != 1 {
        return CheckResult::not_applicable(NAME, "ordering is only defined on a line");
    }
    if !scenario.is_certifiable() {
        return CheckResult::not_applicable(NAME, "beta does not exceed alpha; no claim is made");
    }
    let mut worst = f64::INFINITY;
    let mut loc = None;
    for r in 0..log.len() {
        for k in 1..log.agents {
            let z = log.z(r, k)[0];
            if z < worst {
                worst = z;
                loc = Some(Location { t: log.times[r], k });
            }
        }
    }
    CheckResult::measured(NAME, worst > 0.0, worst, 0.0, loc)
}

/// Runs every check on a log and collects the verdicts.
pub fn certify(log: &TrajectoryLog, scenario: &Scenario) -> Result<CertificationReport> {
    let mut checks = Vec::new();
    let cs = &scenario.certify;

    match uncertifiable_reason(log, scenario) {
        Some(why) => checks.push(CheckResult::not_applicable("rate_identity", why)),
        None => {
            let res = check_rate_identity(log, scenario)?;
            let bound = cs.rate_c * res.spacing * res.spacing;
            let mut c = CheckResult::measured("rate_identity", res.worst <= bound, res.worst, bound, res.location);
            c.details.insert("spacing".into(), res.spacing);
            checks.push(c);
        }
    }

    let gamma = gamma_bound(&scenario.model);
    match (uncertifiable_reason(log, scenario), gamma) {
        (Some(why), _) => checks.push(CheckResult::not_applicable("concave_rate", why)),
        (None, GammaBound::NotApplicable(why)) => checks.push(CheckResult::not_applicable("concave_rate", why)),
        (None, GammaBound::Bound(g)) => {
            if scenario.controller_configs()?.iter().any(|c| c.beta <= g) {
                checks.push(CheckResult::not_applicable("concave_rate", "beta does not exceed gamma"));
            } else {
                let res = check_concave_rate(log, scenario, g)?;
                let mut c = CheckResult::measured(
                    "concave_rate",
                    res.worst <= cs.concave_tol,
                    res.worst,
                    cs.concave_tol,
                    res.location,
                );
                c.details.insert("gamma".into(), g);
                checks.push(c);
            }
        }
    }

    checks.extend(check_stability(log, scenario)?);
    checks.push(check_formation(log, scenario)?);
    checks.push(check_order(log, scenario));

    Ok(CertificationReport {
        scenario_hash: log.scenario_hash.clone(),
        followers: log.followers(),
        variant: scenario.variant().to_string(),
        termination: log.status.clone(),
        checks,
    })
}
