use rayon::prelude::*;
use serde::Serialize;

use crate::controller::ControlVariant;
use crate::error::{PlatoonError, Result};
use crate::scenario::{Scenario, SpacingPlan};
use crate::simulator::{run, TrajectoryLog};
use crate::vector::norm;

/// Relative speed below which a follower counts as settled.
pub const SETTLE_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub variant: String,
    pub n: usize,
    pub k: usize,
    pub lyap_initial: f64,
    pub lyap_max: f64,
    pub peak_rel_speed: f64,
    /// Time after which `‖z_v‖` stays below the threshold; `None` if it never does.
    pub settling_time: Option<f64>,
    pub min_gap: f64,
}

#[derive(Debug, Clone)]
pub struct StudyRun {
    pub n: usize,
    pub variant: ControlVariant,
    pub scenario: Scenario,
    pub log: TrajectoryLog,
    /// `max_k max_t L_k ≤ max_k L_k(0)(1 + tol) + floor`
    pub invariance_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefixCheck {
    pub variant: String,
    pub reference_n: usize,
    pub compared_n: usize,
    pub agents_compared: usize,
    pub max_abs_diff: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ScalabilityStudy {
    pub runs: Vec<StudyRun>,
    pub rows: Vec<StudyRow>,
    pub prefix: Vec<PrefixCheck>,
}

/// Prefix tolerance for agent trajectories shared between two runs.
pub const PREFIX_TOL: f64 = 1e-9;

impl ScalabilityStudy {
    /// All runs completed, and every feedforward run kept its Lyapunov bound
    /// and matched the shorter platoons on the shared prefix.
    pub fn passed(&self) -> bool {
        self.runs.iter().all(|r| r.log.status.is_completed())
            && self
                .runs
                .iter()
                .filter(|r| r.variant == ControlVariant::Feedforward)
                .all(|r| r.invariance_holds)
            && self
                .prefix
                .iter()
                .filter(|p| p.variant == ControlVariant::Feedforward.to_string())
                .all(|p| p.passed)
    }
}

fn per_position_rows(run: &StudyRun) -> Vec<StudyRow> {
    let log = &run.log;
    (1..log.agents)
        .map(|k| {
            let mut lyap_max = f64::NEG_INFINITY;
            let mut peak = 0.0f64;
            let mut min_gap = f64::INFINITY;
            let mut last_above = None;
            for r in 0..log.len() {
                lyap_max = lyap_max.max(log.lyap(r, k));
                let s = norm(log.zv(r, k));
                peak = peak.max(s);
                min_gap = min_gap.min(norm(log.z(r, k)));
                if s >= SETTLE_THRESHOLD {
                    last_above = Some(r);
                }
            }
            let settling_time = match last_above {
                None => Some(0.0),
                Some(r) if r + 1 < log.len() => Some(log.times[r + 1]),
                Some(_) => None,
            };
            StudyRow {
                variant: run.variant.to_string(),
                n: run.n,
                k,
                lyap_initial: log.lyap(0, k),
                lyap_max,
                peak_rel_speed: peak,
                settling_time,
                min_gap,
            }
        })
        .collect()
}

fn invariance_holds(log: &TrajectoryLog, scenario: &Scenario) -> bool {
    let cs = &scenario.certify;
    let followers = 1..log.agents;
    let l0 = followers.clone().map(|k| log.lyap(0, k)).fold(f64::NEG_INFINITY, f64::max);
    let lmax = followers
        .flat_map(|k| (0..log.len()).map(move |r| log.lyap(r, k)))
        .fold(f64::NEG_INFINITY, f64::max);
    lmax <= l0 * (1.0 + cs.tol_inv) + cs.lyap_floor
}

fn max_prefix_diff(a: &TrajectoryLog, b: &TrajectoryLog, agents: usize) -> f64 {
    let records = a.len().min(b.len());
    let mut worst = 0.0f64;
    for r in 0..records {
        if a.times[r] != b.times[r] {
            return f64::INFINITY;
        }
        for k in 0..agents {
            for (x, y) in a.y(r, k).iter().zip(b.y(r, k)).chain(a.v(r, k).iter().zip(b.v(r, k))) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    worst
}

/// Per-agent parameters must agree on every agent two scenarios share.
fn check_compatible(a: &Scenario, b: &Scenario) -> Result<()> {
    let mismatch = |what: &str| {
        Err(PlatoonError::InvalidInput(format!(
            "scenarios with n = {} and n = {} differ in {what}",
            a.n, b.n
        )))
    };
    if a.dim != b.dim || a.model != b.model || a.profile != b.profile || a.sim != b.sim {
        return mismatch("shared settings");
    }
    let shared = a.n.min(b.n);
    let (sa, sb) = (a.spacings()?, b.spacings()?);
    if sa.lengths[..=shared] != sb.lengths[..=shared] {
        return mismatch("initial spacings");
    }
    let (ca, cb) = (a.controller_configs()?, b.controller_configs()?);
    if ca[..shared] != cb[..shared] {
        return mismatch("controller parameters");
    }
    Ok(())
}

/// Runs every scenario (in parallel, on up to `workers` threads) and
/// tabulates per-position metrics. Scenarios of one variant must agree on
/// every shared agent.
pub fn scalability_study(scenarios: &[Scenario], workers: usize) -> Result<ScalabilityStudy> {
    if scenarios.is_empty() {
        return Err(PlatoonError::InvalidInput("no scenarios to study".into()));
    }
    for (i, a) in scenarios.iter().enumerate() {
        for b in &scenarios[i + 1..] {
            if a.variant() == b.variant() {
                check_compatible(a, b)?;
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PlatoonError::InvalidInput(e.to_string()))?;
    let logs: Vec<Result<TrajectoryLog>> = pool.install(|| scenarios.par_iter().map(run).collect());

    let mut runs = Vec::with_capacity(scenarios.len());
    for (s, log) in scenarios.iter().zip(logs) {
        let log = log?;
        runs.push(StudyRun {
            n: s.n,
            variant: s.variant(),
            scenario: s.clone(),
            invariance_holds: invariance_holds(&log, s),
            log,
        });
    }
    let rows = runs.iter().flat_map(per_position_rows).collect();

    let mut prefix = Vec::new();
    for variant in [ControlVariant::Feedforward, ControlVariant::LocalOnly] {
        let mut of_variant: Vec<&StudyRun> = runs.iter().filter(|r| r.variant == variant).collect();
        of_variant.sort_by_key(|r| r.n);
        if let Some((first, rest)) = of_variant.split_first() {
            for other in rest {
                let agents = first.n + 1;
                let diff = max_prefix_diff(&first.log, &other.log, agents);
                prefix.push(PrefixCheck {
                    variant: variant.to_string(),
                    reference_n: first.n,
                    compared_n: other.n,
                    agents_compared: agents,
                    max_abs_diff: diff,
                    passed: diff <= PREFIX_TOL,
                });
            }
        }
    }
    Ok(ScalabilityStudy { runs, rows, prefix })
}

/// Study of `base` resized to each `n`, for each requested variant.
pub fn scalability_study_from_base(
    base: &Scenario,
    n_list: &[usize],
    variants: &[ControlVariant],
    workers: usize,
) -> Result<ScalabilityStudy> {
    if n_list.is_empty() || variants.is_empty() {
        return Err(PlatoonError::InvalidInput("empty n list or variant list".into()));
    }
    if let SpacingPlan::Explicit(v) = &base.spacing {
        let need = n_list.iter().max().copied().unwrap_or(0) + 1;
        if v.len() < need {
            return Err(PlatoonError::InvalidInput(format!(
                "explicit spacings have {} entries; the sweep needs {need} (use a spacing cycle)",
                v.len()
            )));
        }
    }
    let mut scenarios = Vec::new();
    for &variant in variants {
        for &n in n_list {
            scenarios.push(base.with_agents(n)?.with_variant(variant));
        }
    }
    scalability_study(&scenarios, workers)
}
