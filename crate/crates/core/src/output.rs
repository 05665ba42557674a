//! Files written for a run: trajectory CSV, run summary, report and
//! comparison tables.
//!
//! Floats are printed with `Display`, the shortest text that parses back to
//! the same value, so equal logs give equal bytes.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::analysis::{ScalabilityStudy, StudyRow};
use crate::controller::ControlVariant;
use crate::error::Result;
use crate::simulator::{TerminationStatus, TrajectoryLog};
use crate::vector::norm;

fn header(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "k".to_string()];
    for name in ["y", "v", "u", "z", "zv"] {
        if dim == 1 {
            h.push(name.to_string());
        } else {
            h.extend((0..dim).map(|i| format!("{name}_{i}")));
        }
    }
    h.push("L_k".to_string());
    h
}

/// One row per recorded step and agent. Follower-only columns are empty for
/// the leader.
pub fn write_trajectory_csv<W: Write>(log: &TrajectoryLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(log.dim))?;
    let mut row: Vec<String> = Vec::new();
    for r in 0..log.len() {
        for k in 0..log.agents {
            row.clear();
            row.push(log.times[r].to_string());
            row.push(k.to_string());
            for x in log.y(r, k).iter().chain(log.v(r, k)).chain(log.u(r, k)) {
                row.push(x.to_string());
            }
            if k == 0 {
                row.extend(std::iter::repeat_n(String::new(), 2 * log.dim + 1));
            } else {
                for x in log.z(r, k).iter().chain(log.zv(r, k)) {
                    row.push(x.to_string());
                }
                row.push(log.lyap(r, k).to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn trajectory_csv_bytes(log: &TrajectoryLog) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_trajectory_csv(log, &mut buf)?;
    Ok(buf)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FollowerSummary {
    pub k: usize,
    pub initial_gap: f64,
    pub min_gap: f64,
    pub final_gap: f64,
    pub final_rel_speed: f64,
    pub max_lyap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario_hash: String,
    pub termination: TerminationStatus,
    pub followers: usize,
    pub records: usize,
    pub final_time: f64,
    /// Smallest gap over all followers and records.
    pub min_gap: f64,
    pub max_final_rel_speed: f64,
    pub guarded_steps: usize,
    pub min_dt_used: f64,
    pub per_follower: Vec<FollowerSummary>,
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn from_log(log: &TrajectoryLog, wall_time_s: f64) -> Self {
        let last = log.len().saturating_sub(1);
        let per_follower: Vec<FollowerSummary> = if log.is_empty() {
            Vec::new()
        } else {
            (1..log.agents)
                .map(|k| {
                    let gaps = (0..log.len()).map(|r| norm(log.z(r, k)));
                    FollowerSummary {
                        k,
                        initial_gap: norm(log.z(0, k)),
                        min_gap: gaps.fold(f64::INFINITY, f64::min),
                        final_gap: norm(log.z(last, k)),
                        final_rel_speed: norm(log.zv(last, k)),
                        max_lyap: (0..log.len()).map(|r| log.lyap(r, k)).fold(f64::NEG_INFINITY, f64::max),
                    }
                })
                .collect()
        };
        RunSummary {
            scenario_hash: log.scenario_hash.clone(),
            termination: log.status.clone(),
            followers: log.followers(),
            records: log.len(),
            final_time: log.times.last().copied().unwrap_or(0.0),
            min_gap: per_follower.iter().map(|f| f.min_gap).fold(f64::INFINITY, f64::min),
            max_final_rel_speed: per_follower.iter().map(|f| f.final_rel_speed).fold(0.0, f64::max),
            guarded_steps: log.guarded_steps,
            min_dt_used: log.dt_used.iter().skip(1).copied().fold(f64::INFINITY, f64::min),
            per_follower,
            wall_time_s,
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Long-format per-position table: one row per (variant, n, k).
pub fn write_comparison_csv<W: Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "variant",
        "n",
        "k",
        "lyap_initial",
        "lyap_max",
        "peak_rel_speed",
        "settling_time",
        "min_gap",
    ])?;
    for r in rows {
        w.write_record([
            r.variant.clone(),
            r.n.to_string(),
            r.k.to_string(),
            r.lyap_initial.to_string(),
            r.lyap_max.to_string(),
            r.peak_rel_speed.to_string(),
            r.settling_time.map(|t| t.to_string()).unwrap_or_default(),
            r.min_gap.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Peak relative speed per position with both variants side by side, one
/// row per (n, k) present in both.
pub fn write_paired_profile_csv<W: Write>(study: &ScalabilityStudy, out: W) -> Result<()> {
    let ff = ControlVariant::Feedforward.to_string();
    let lo = ControlVariant::LocalOnly.to_string();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "k", "peak_rel_speed_feedforward", "peak_rel_speed_local_only"])?;
    for a in study.rows.iter().filter(|r| r.variant == ff) {
        if let Some(b) = study.rows.iter().find(|r| r.variant == lo && r.n == a.n && r.k == a.k) {
            w.write_record([
                a.n.to_string(),
                a.k.to_string(),
                a.peak_rel_speed.to_string(),
                b.peak_rel_speed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
