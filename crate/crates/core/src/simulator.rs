//! Fixed-step RK4 integration of the closed-loop platoon.
//!
//! Controls are re-evaluated at every stage. A halving guard shortens a step
//! when the potential barrier makes the local controls change sharply inside
//! it; the recorded time grid stays on multiples of `dt`.

use serde::Serialize;

use crate::analysis::lyap_local;
use crate::controller::{control_pass, ControlPass, ControllerConfig};
use crate::dynamics::{initial_platoon, AgentState, VehicleModel};
use crate::error::{PlatoonError, Result};
use crate::scenario::Scenario;
use crate::vector::{norm, sub};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TerminationStatus {
    Completed,
    Collision {
        predecessor: usize,
        follower: usize,
        t: f64,
        gap: f64,
    },
    Diverged {
        agent: usize,
        t: f64,
        reason: String,
    },
}

impl TerminationStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, TerminationStatus::Completed)
    }
}

/// Columnar record of a run. Agent `k` of record `r` lives at
/// `(r * agents + k) * dim`; follower quantities use `k − 1` in place of `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub agents: usize,
    pub dim: usize,
    pub times: Vec<f64>,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    controls: Vec<f64>,
    gaps: Vec<f64>,
    rel_velocities: Vec<f64>,
    lyap: Vec<f64>,
    /// Smallest substep used to reach each record.
    pub dt_used: Vec<f64>,
    pub guarded_steps: usize,
    pub status: TerminationStatus,
    pub scenario_hash: String,
}

impl TrajectoryLog {
    fn new(agents: usize, dim: usize, scenario_hash: String) -> Self {
        TrajectoryLog {
            agents,
            dim,
            times: Vec::new(),
            positions: Vec::new(),
            velocities: Vec::new(),
            controls: Vec::new(),
            gaps: Vec::new(),
            rel_velocities: Vec::new(),
            lyap: Vec::new(),
            dt_used: Vec::new(),
            guarded_steps: 0,
            status: TerminationStatus::Completed,
            scenario_hash,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn followers(&self) -> usize {
        self.agents - 1
    }

    fn agent_slice<'a>(&self, buf: &'a [f64], r: usize, k: usize) -> &'a [f64] {
        let i = (r * self.agents + k) * self.dim;
        &buf[i..i + self.dim]
    }

    fn follower_slice<'a>(&self, buf: &'a [f64], r: usize, k: usize) -> &'a [f64] {
        assert!(k >= 1, "follower index starts at 1");
        let i = (r * (self.agents - 1) + k - 1) * self.dim;
        &buf[i..i + self.dim]
    }

    pub fn y(&self, r: usize, k: usize) -> &[f64] {
        self.agent_slice(&self.positions, r, k)
    }

    pub fn v(&self, r: usize, k: usize) -> &[f64] {
        self.agent_slice(&self.velocities, r, k)
    }

    pub fn u(&self, r: usize, k: usize) -> &[f64] {
        self.agent_slice(&self.controls, r, k)
    }

    /// `z_k = y_{k−1} − y_k`, for `k ≥ 1`.
    pub fn z(&self, r: usize, k: usize) -> &[f64] {
        self.follower_slice(&self.gaps, r, k)
    }

    /// `z_k^v = v_{k−1} − v_k`, for `k ≥ 1`.
    pub fn zv(&self, r: usize, k: usize) -> &[f64] {
        self.follower_slice(&self.rel_velocities, r, k)
    }

    pub fn lyap(&self, r: usize, k: usize) -> f64 {
        assert!(k >= 1);
        self.lyap[r * (self.agents - 1) + k - 1]
    }

    pub fn states(&self, r: usize) -> Vec<AgentState> {
        (0..self.agents)
            .map(|k| AgentState {
                position: self.y(r, k).to_vec(),
                velocity: self.v(r, k).to_vec(),
            })
            .collect()
    }

    fn push(&mut self, t: f64, states: &[AgentState], controls: Option<&ControlPass>, cfgs: &[ControllerConfig], dt_used: f64) {
        self.times.push(t);
        self.dt_used.push(dt_used);
        for (k, s) in states.iter().enumerate() {
            self.positions.extend_from_slice(&s.position);
            self.velocities.extend_from_slice(&s.velocity);
            match controls {
                Some(c) => self.controls.extend_from_slice(&c.total[k]),
                None => self.controls.extend(std::iter::repeat_n(f64::NAN, self.dim)),
            }
        }
        for k in 1..states.len() {
            let z = sub(&states[k - 1].position, &states[k].position);
            let zv = sub(&states[k - 1].velocity, &states[k].velocity);
            let cfg = &cfgs[k - 1];
            let l = lyap_local(&z, &zv, &cfg.apf, cfg.sigma).unwrap_or(f64::NAN);
            self.gaps.extend_from_slice(&z);
            self.rel_velocities.extend_from_slice(&zv);
            self.lyap.push(l);
        }
    }
}

/// Everything the right-hand side needs, resolved once per run.
struct Plant<'a> {
    model: &'a VehicleModel,
    cfgs: Vec<ControllerConfig>,
    scenario: &'a Scenario,
}

impl<'a> Plant<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self> {
        Ok(Plant {
            model: &scenario.model,
            cfgs: scenario.controller_configs()?,
            scenario,
        })
    }

    /// Derivative `(ẏ, v̇)` per agent plus the local controls of this stage.
    fn rhs(&self, states: &[AgentState], t: f64) -> Result<(Vec<AgentState>, Vec<Vec<f64>>)> {
        if let Some(k) = states.iter().position(|s| !s.is_finite()) {
            return Err(PlatoonError::Divergence { agent: k, t });
        }
        let pass = control_pass(states, t, &self.cfgs, &self.scenario.profile)?;
        let deriv = states
            .iter()
            .zip(&pass.total)
            .map(|(s, u)| {
                let f = self.model.drag(&s.velocity);
                AgentState {
                    position: s.velocity.clone(),
                    velocity: f.iter().zip(u).map(|(f, u)| f + u).collect(),
                }
            })
            .collect();
        Ok((deriv, pass.local))
    }
}

fn offset(states: &[AgentState], deriv: &[AgentState], h: f64) -> Vec<AgentState> {
    states
        .iter()
        .zip(deriv)
        .map(|(s, d)| AgentState {
            position: s.position.iter().zip(&d.position).map(|(y, dy)| y + h * dy).collect(),
            velocity: s.velocity.iter().zip(&d.velocity).map(|(v, dv)| v + h * dv).collect(),
        })
        .collect()
}

/// One classical RK4 step; also returns, per agent, the largest change of
/// the local control between the first and any later stage.
fn rk4_with_jumps(plant: &Plant, states: &[AgentState], t: f64, h: f64) -> Result<(Vec<AgentState>, Vec<f64>)> {
    let (k1, l1) = plant.rhs(states, t)?;
    let (k2, l2) = plant.rhs(&offset(states, &k1, 0.5 * h), t + 0.5 * h)?;
    let (k3, l3) = plant.rhs(&offset(states, &k2, 0.5 * h), t + 0.5 * h)?;
    let (k4, l4) = plant.rhs(&offset(states, &k3, h), t + h)?;
    let jumps = (0..states.len())
        .map(|k| {
            [&l2, &l3, &l4]
                .iter()
                .map(|l| norm(&sub(&l[k], &l1[k])))
                .fold(0.0, f64::max)
        })
        .collect();
    let next: Vec<AgentState> = (0..states.len())
        .map(|k| {
            let comb = |a: f64, b: f64, c: f64, d: f64| (a + 2.0 * b + 2.0 * c + d) * h / 6.0;
            let s = &states[k];
            AgentState {
                position: (0..s.position.len())
                    .map(|i| {
                        s.position[i]
                            + comb(k1[k].position[i], k2[k].position[i], k3[k].position[i], k4[k].position[i])
                    })
                    .collect(),
                velocity: (0..s.velocity.len())
                    .map(|i| {
                        s.velocity[i]
                            + comb(k1[k].velocity[i], k2[k].velocity[i], k3[k].velocity[i], k4[k].velocity[i])
                    })
                    .collect(),
            }
        })
        .collect();
    if let Some(k) = next.iter().position(|s| !s.is_finite()) {
        return Err(PlatoonError::Divergence { agent: k, t: t + h });
    }
    Ok((next, jumps))
}

/// Closed-loop vector field `(ẏ_k, v̇_k)` for every agent.
pub fn closed_loop_rhs(states: &[AgentState], t: f64, scenario: &Scenario) -> Result<Vec<AgentState>> {
    Plant::new(scenario)?.rhs(states, t).map(|(d, _)| d)
}

/// Classical RK4 step of the closed loop. `states` may hold any prefix of the
/// scenario's platoon, leader first.
pub fn rk4_step(states: &[AgentState], t: f64, dt: f64, scenario: &Scenario) -> Result<Vec<AgentState>> {
    let plant = Plant::new(scenario)?;
    rk4_with_jumps(&plant, states, t, dt).map(|(s, _)| s)
}

fn guarded(plant: &Plant, states: &[AgentState], t: f64, h: f64, depth: u32) -> Result<(Vec<AgentState>, f64)> {
    let guard = plant.scenario.sim.guard;
    let (next, jumps) = rk4_with_jumps(plant, states, t, h)?;
    let (worst, jump) = jumps
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (k, j)| if *j > acc.1 { (k, *j) } else { acc });
    if jump <= guard.max_control_jump {
        return Ok((next, h));
    }
    if depth >= guard.max_halvings {
        let gap = if worst >= 1 {
            norm(&sub(&states[worst - 1].position, &states[worst].position))
        } else {
            f64::NAN
        };
        return Err(PlatoonError::Stiffness { agent: worst, t, gap });
    }
    let half = 0.5 * h;
    let (mid, h1) = guarded(plant, states, t, half, depth + 1)?;
    let (end, h2) = guarded(plant, &mid, t + half, half, depth + 1)?;
    Ok((end, h1.min(h2)))
}

/// RK4 step with the halving guard. Returns the new states and the smallest
/// substep taken; with an infinite ceiling this is exactly [`rk4_step`].
pub fn guard_step(states: &[AgentState], t: f64, dt: f64, scenario: &Scenario) -> Result<(Vec<AgentState>, f64)> {
    let plant = Plant::new(scenario)?;
    guarded(&plant, states, t, dt, 0)
}

/// Signed gap along the road in one dimension, Euclidean distance otherwise.
fn gap_measure(z: &[f64]) -> f64 {
    if z.len() == 1 {
        z[0]
    } else {
        norm(z)
    }
}

/// Integrates the scenario over `[0, T]`. Configuration problems are errors;
/// collisions and numerical blow-ups end the run early and are reported in
/// [`TrajectoryLog::status`].
pub fn run(scenario: &Scenario) -> Result<TrajectoryLog> {
    scenario.validate()?;
    let plant = Plant::new(scenario)?;
    let sim = &scenario.sim;
    let mut states = initial_platoon(&scenario.spacings()?, scenario.dim)?;
    let mut log = TrajectoryLog::new(states.len(), scenario.dim, scenario.fingerprint());
    let pass0 = control_pass(&states, 0.0, &plant.cfgs, &scenario.profile)?;
    log.push(0.0, &states, Some(&pass0), &plant.cfgs, 0.0);

    let steps = ((sim.horizon / sim.dt) - 1e-9).ceil().max(1.0) as usize;
    // A short final step only when T is not a whole number of steps.
    let last_h = sim.horizon - (steps - 1) as f64 * sim.dt;
    let last_h = if (last_h - sim.dt).abs() <= 1e-9 * sim.dt { sim.dt } else { last_h };
    let mut min_used = f64::INFINITY;
    for i in 1..=steps {
        let t_prev = (i - 1) as f64 * sim.dt;
        let t = if i == steps { sim.horizon } else { i as f64 * sim.dt };
        let h = if i == steps { last_h } else { sim.dt };
        let (next, used) = match guarded(&plant, &states, t_prev, h, 0) {
            Ok(x) => x,
            Err(e) => {
                log.status = match e {
                    PlatoonError::Collision { predecessor, follower } => TerminationStatus::Collision {
                        predecessor,
                        follower,
                        t: t_prev,
                        gap: 0.0,
                    },
                    PlatoonError::Divergence { agent, t } => TerminationStatus::Diverged {
                        agent,
                        t,
                        reason: "non-finite state".into(),
                    },
                    PlatoonError::Stiffness { agent, t, gap } => TerminationStatus::Diverged {
                        agent,
                        t,
                        reason: format!("step halving exhausted near gap {gap}"),
                    },
                    other => return Err(other),
                };
                return Ok(log);
            }
        };
        if used < h {
            log.guarded_steps += 1;
        }
        min_used = min_used.min(used);
        states = next;
        let collision = (1..states.len()).find_map(|k| {
            let g = gap_measure(&sub(&states[k - 1].position, &states[k].position));
            (g <= sim.collision_epsilon).then_some((k, g))
        });
        if let Some((k, gap)) = collision {
            let pass = control_pass(&states, t, &plant.cfgs, &scenario.profile).ok();
            log.push(t, &states, pass.as_ref(), &plant.cfgs, min_used);
            log.status = TerminationStatus::Collision {
                predecessor: k - 1,
                follower: k,
                t,
                gap,
            };
            return Ok(log);
        }
        if i % sim.stride == 0 || i == steps {
            let pass = control_pass(&states, t, &plant.cfgs, &scenario.profile)?;
            log.push(t, &states, Some(&pass), &plant.cfgs, min_used);
            min_used = f64::INFINITY;
        }
    }
    Ok(log)
}
