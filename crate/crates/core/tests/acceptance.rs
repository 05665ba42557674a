//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Every tolerance is a named constant.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use platoon_core::analysis::{
    certify, check_concave_rate, check_rate_identity, lyap_formation, lyap_rate_rhs, rate_along_flow,
    scalability_study_from_base, Verdict,
};
use platoon_core::apf::{apf_deriv, apf_grad_follower, apf_grad_predecessor, apf_value, ApfParams};
use platoon_core::config::load_scenario;
use platoon_core::controller::{ControlVariant, LeaderProfile};
use platoon_core::dynamics::{gamma_bound, AgentState, GammaBound, VehicleModel};
use platoon_core::output::{trajectory_csv_bytes, write_comparison_csv, write_paired_profile_csv};
use platoon_core::scenario::{ControllerPlan, Scenario, SpacingPlan};
use platoon_core::sigma::{sigma_norm, sigma_norm_grad, SigmaParam};
use platoon_core::simulator::{rk4_step, run, TerminationStatus, TrajectoryLog};
use platoon_core::vector::{norm, norm_sq};

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-6;
const RANDOM_CASES: usize = 1000;

const BARRIER_PROBE: f64 = 1e-12;
const BARRIER_FLOOR: f64 = 1e10;
const MIN_LOCATION_TOL: f64 = 1e-10;

const DECAY_REL_TOL: f64 = 1e-8;
const ORDER_RATIO: (f64, f64) = (12.0, 20.0);

const RATE_C: f64 = 1.0;
const FD_RATIO: (f64, f64) = (3.0, 5.0);
const AMPLITUDE_SCALE: f64 = 10.0;
const AMPLITUDE_TOL: f64 = 1e-9;
const FLOW_STENCIL: f64 = 1e-3;

const TOL_INV: f64 = 1e-6;
const TOL_MATCH: f64 = 1e-3;
const MATCH_WINDOW: f64 = 20.0;
const CONCAVE_TOL: f64 = 1e-6;
const FORMATION_TOL: f64 = 1e-6;
const PREFIX_TOL: f64 = 1e-9;
const SWEEP: [usize; 3] = [5, 25, 100];
const PREFIX_AGENTS: usize = 6;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn flagship() -> Scenario {
    load_scenario(&scenario_path("flagship.toml")).expect("flagship scenario")
}

fn rel_err(fd: &[f64], exact: &[f64]) -> f64 {
    let diff: Vec<f64> = fd.iter().zip(exact).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(exact).max(f64::MIN_POSITIVE)
}

fn central_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += FD_STEP;
            m[i] -= FD_STEP;
            (f(&p) - f(&m)) / (2.0 * FD_STEP)
        })
        .collect()
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Random direction scaled to length `len`.
fn random_offset(rng: &mut ChaCha8Rng, dim: usize, len: f64) -> Vec<f64> {
    loop {
        let d = random_vec(rng, dim, -1.0, 1.0);
        let n = norm(&d);
        if n > 0.1 {
            return d.iter().map(|x| x * len / n).collect();
        }
    }
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut w_sigma, mut w_deriv, mut w_follow) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..RANDOM_CASES {
        let dim = 1 + i % 3;
        let sp = SigmaParam::new(rng.gen_range(0.2..3.0)).unwrap();

        let len = rng.gen_range(0.05..20.0);
        let x = random_offset(&mut rng, dim, len);
        let fd = central_grad(|y| sigma_norm(y, sp).unwrap(), &x);
        w_sigma = w_sigma.max(rel_err(&fd, &sigma_norm_grad(&x, sp).unwrap()));

        let apf = ApfParams::new(rng.gen_range(0.1..5.0), rng.gen_range(0.5..10.0)).unwrap();
        // Stay clear of the minimum, where the derivative itself vanishes.
        let s = if rng.gen_bool(0.5) {
            apf.delta_sigma * rng.gen_range(0.2..0.9)
        } else {
            apf.delta_sigma * rng.gen_range(1.1..5.0)
        };
        let fd = (apf_value(s + FD_STEP, &apf).unwrap() - apf_value(s - FD_STEP, &apf).unwrap()) / (2.0 * FD_STEP);
        let exact = apf_deriv(s, &apf).unwrap();
        w_deriv = w_deriv.max((fd - exact).abs() / exact.abs());

        let y_prev = random_vec(&mut rng, dim, -50.0, 50.0);
        let target = crate_euclid(apf.delta_sigma, sp) * if rng.gen_bool(0.5) { rng.gen_range(0.3..0.9) } else { rng.gen_range(1.1..3.0) };
        let off = random_offset(&mut rng, dim, target);
        let y_k: Vec<f64> = y_prev.iter().zip(&off).map(|(p, o)| p - o).collect();
        let pot = |y: &[f64]| {
            let z: Vec<f64> = y_prev.iter().zip(y).map(|(p, q)| p - q).collect();
            apf_value(sigma_norm(&z, sp).unwrap(), &apf).unwrap()
        };
        let fd = central_grad(pot, &y_k);
        w_follow = w_follow.max(rel_err(&fd, &apf_grad_follower(&y_k, &y_prev, &apf, sp).unwrap()));
    }
    let worst = w_sigma.max(w_deriv).max(w_follow);
    outcome(
        worst < FD_REL_TOL,
        format!("worst relative error: sigma grad {w_sigma:.2e}, potential deriv {w_deriv:.2e}, follower grad {w_follow:.2e} (< {FD_REL_TOL:.0e})"),
    )
}

fn crate_euclid(s: f64, sp: SigmaParam) -> f64 {
    platoon_core::sigma::euclid_from_sigma(s, sp).unwrap()
}

fn potential_axioms() -> Outcome {
    let unit = ApfParams::new(1.0, 1.0).unwrap();
    let barrier = apf_value(BARRIER_PROBE, &unit).unwrap();

    // Sign change of the derivative, located by bisection on [0.5, 2].
    let (mut lo, mut hi) = (0.5f64, 2.0f64);
    let mut sign_ok = apf_deriv(lo, &unit).unwrap() < 0.0 && apf_deriv(hi, &unit).unwrap() > 0.0;
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if apf_deriv(mid, &unit).unwrap() < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    // Single minimum: negative slope below, positive above, on a fine grid.
    for i in 1..2000 {
        let s = i as f64 * 5e-3;
        let d = apf_deriv(s, &unit).unwrap();
        if (s < 1.0 && d >= 0.0) || (s > 1.0 && d <= 0.0) {
            sign_ok = false;
        }
    }
    let min_value = apf_value(1.0, &unit).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut antisym = true;
    for i in 0..RANDOM_CASES {
        let dim = 1 + i % 3;
        let sp = SigmaParam::new(rng.gen_range(0.2..3.0)).unwrap();
        let apf = ApfParams::new(rng.gen_range(0.1..5.0), rng.gen_range(0.5..10.0)).unwrap();
        let a = random_vec(&mut rng, dim, -30.0, 30.0);
        let b = random_vec(&mut rng, dim, -30.0, 30.0);
        let gf = apf_grad_follower(&a, &b, &apf, sp).unwrap();
        let gp = apf_grad_predecessor(&a, &b, &apf, sp).unwrap();
        antisym &= gf.iter().zip(&gp).all(|(x, y)| *x == -*y);
    }
    let passed = barrier > BARRIER_FLOOR
        && (root - 1.0).abs() < MIN_LOCATION_TOL
        && min_value == 0.0
        && sign_ok
        && antisym;
    outcome(
        passed,
        format!(
            "V(1e-12) = {barrier:.3e}, minimum at {root:.15} (|err| {:.1e}), V(δ) = {min_value}, exact antisymmetry {antisym}",
            (root - 1.0).abs()
        ),
    )
}

/// Single uncontrolled agent with linear drag against the closed form.
fn free_decay_error(dt: f64) -> f64 {
    let (v0, c1, horizon) = (3.0, 0.5, 10.0);
    let mut sc = flagship();
    sc.model = VehicleModel::LinearDrag { c1 };
    sc.profile = LeaderProfile::Constant { input: 0.0 };
    sc.sim.horizon = horizon;
    let mut state = vec![AgentState { position: vec![0.0], velocity: vec![v0] }];
    let steps = (horizon / dt).round() as usize;
    for i in 0..steps {
        state = rk4_step(&state, i as f64 * dt, dt, &sc).unwrap();
    }
    let decay = (-c1 * horizon).exp();
    let v_exact = v0 * decay;
    let y_exact = v0 * (1.0 - decay) / c1;
    let ev = (state[0].velocity[0] - v_exact).abs() / v_exact;
    let ey = (state[0].position[0] - y_exact).abs() / y_exact;
    ev.max(ey)
}

fn integrator_order() -> Outcome {
    let err = free_decay_error(0.01);
    let ratio = err / free_decay_error(0.005);
    outcome(
        err < DECAY_REL_TOL && ratio >= ORDER_RATIO.0 && ratio <= ORDER_RATIO.1,
        format!("relative end-state error {err:.2e} (< {DECAY_REL_TOL:.0e}); halving ratio {ratio:.2} in [{}, {}]", ORDER_RATIO.0, ORDER_RATIO.1),
    )
}

fn with_amplitude(sc: &Scenario, scale: f64) -> Scenario {
    let mut s = sc.clone();
    match &mut s.controllers {
        ControllerPlan::Uniform(c) => c.apf = c.apf.scaled(scale),
        ControllerPlan::PerAgent(v) => v.iter_mut().for_each(|c| c.apf = c.apf.scaled(scale)),
    }
    s
}

fn rate_identity(sc: &Scenario, log: &TrajectoryLog) -> Outcome {
    let coarse = check_rate_identity(log, sc).unwrap();
    let mut fine_sc = sc.clone();
    fine_sc.sim.dt = 0.5 * sc.sim.dt;
    let fine = check_rate_identity(&run(&fine_sc).unwrap(), &fine_sc).unwrap();
    let ratio = coarse.worst / fine.worst;
    let bound = RATE_C * sc.sim.dt * sc.sim.dt;

    // Matched states: the rate along the closed-loop flow minus the predicted
    // rate, with the potential amplitude at 1x and 10x.
    let scaled = with_amplitude(sc, AMPLITUDE_SCALE);
    let cfgs = sc.controller_configs().unwrap();
    let mut worst_shift = 0.0f64;
    for r in (0..log.len()).step_by(250) {
        let states = log.states(r);
        let t = log.times[r];
        for k in 1..log.agents {
            let rhs = lyap_rate_rhs(log.zv(r, k), log.v(r, k - 1), log.v(r, k), cfgs[k - 1].beta, &sc.model);
            let base = rate_along_flow(sc, &states, t, k, FLOW_STENCIL).unwrap() - rhs;
            let big = rate_along_flow(&scaled, &states, t, k, FLOW_STENCIL).unwrap() - rhs;
            worst_shift = worst_shift.max((base - big).abs());
        }
    }
    outcome(
        coarse.worst <= bound && ratio >= FD_RATIO.0 && ratio <= FD_RATIO.1 && worst_shift < AMPLITUDE_TOL,
        format!(
            "max residual {:.3e} <= {RATE_C}·dt² = {bound:.0e}; dt/2 ratio {ratio:.2} in [{}, {}]; amplitude x{AMPLITUDE_SCALE} shift {worst_shift:.2e} (< {AMPLITUDE_TOL:.0e})",
            coarse.worst, FD_RATIO.0, FD_RATIO.1
        ),
    )
}

/// Smaller root of `a (s − δ)² / s = c`, mapped back to a Euclidean gap.
fn eta_closed_form(c: f64, apf: &ApfParams, sp: SigmaParam) -> f64 {
    let (a, d) = (apf.amplitude, apf.delta_sigma);
    let b = 2.0 * a * d + c;
    let s = (b - (b * b - 4.0 * a * a * d * d).sqrt()) / (2.0 * a);
    let q = sp.value() * s;
    (q * (q + 2.0)).sqrt()
}

fn invariance_and_gap(sc: &Scenario, log: &TrajectoryLog) -> Outcome {
    let cfgs = sc.controller_configs().unwrap();
    let mut inv_ok = true;
    let mut worst_inv = f64::NEG_INFINITY;
    let mut gap_ok = true;
    let mut worst_margin = f64::INFINITY;
    for k in 1..log.agents {
        let l0 = log.lyap(0, k);
        let lmax = (0..log.len()).map(|r| log.lyap(r, k)).fold(f64::NEG_INFINITY, f64::max);
        inv_ok &= lmax <= l0 * (1.0 + TOL_INV);
        worst_inv = worst_inv.max(lmax / l0 - 1.0);
        let eta = eta_closed_form(2.0 * l0, &cfgs[k - 1].apf, cfgs[k - 1].sigma);
        let min_gap = (0..log.len()).map(|r| norm(log.z(r, k))).fold(f64::INFINITY, f64::min);
        gap_ok &= min_gap > eta;
        worst_margin = worst_margin.min(min_gap - eta);
    }
    let last = log.len() - 1;
    let final_speed = (1..log.agents).map(|k| norm(log.zv(last, k))).fold(0.0, f64::max);
    let tail = sc.profile.is_constant_on(sc.sim.horizon - MATCH_WINDOW, sc.sim.horizon);
    let report = certify(log, sc).unwrap();
    let report_ok = ["invariance", "gap_bound", "velocity_matching"]
        .iter()
        .all(|n| report.check(n).map(|c| c.verdict == Verdict::Pass).unwrap_or(false));
    outcome(
        log.status.is_completed() && inv_ok && gap_ok && tail && final_speed < TOL_MATCH && report_ok,
        format!(
            "max L_k/L_k(0) − 1 = {worst_inv:.2e} (<= {TOL_INV:.0e}); min gap − η_c = {worst_margin:.4} > 0; ‖z_v(T)‖ = {final_speed:.2e} (< {TOL_MATCH:.0e}), constant tail {tail}"
        ),
    )
}

fn concave_rate(sc: &Scenario, log: &TrajectoryLog) -> Outcome {
    let GammaBound::Bound(gamma) = gamma_bound(&sc.model) else {
        return outcome(false, "model has no concave bound".into());
    };
    let beta = sc.controller_configs().unwrap()[0].beta;
    let res = check_concave_rate(log, sc, gamma).unwrap();
    outcome(
        gamma == -0.5 && beta > gamma && res.worst <= CONCAVE_TOL,
        format!("γ = {gamma}, β = {beta}; max excess of dL/dt over (γ − β)‖z_v‖² = {:.2e} (<= {CONCAVE_TOL:.0e})", res.worst),
    )
}

fn formation(log: &TrajectoryLog) -> Outcome {
    let series = lyap_formation(log);
    let mut exact = true;
    for (r, value) in series.iter().enumerate() {
        let by_hand = 0.5 * (1..log.agents).map(|k| log.lyap(r, k)).sum::<f64>();
        exact &= *value == by_hand;
    }
    let worst = series.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let decreased = series.last().unwrap() < &series[0];
    outcome(
        exact && worst <= FORMATION_TOL && decreased,
        format!("largest step increase {worst:.2e} (<= {FORMATION_TOL:.0e}); L(0) = {:.4}, L(T) = {:.2e}", series[0], series.last().unwrap()),
    )
}

fn scalability() -> Outcome {
    let base = flagship();
    let study = scalability_study_from_base(
        &base,
        &SWEEP,
        &[ControlVariant::Feedforward, ControlVariant::LocalOnly],
        4,
    )
    .unwrap();

    let ff: Vec<_> = study.runs.iter().filter(|r| r.variant == ControlVariant::Feedforward).collect();
    let mut inv_ok = ff.len() == SWEEP.len();
    for r in &ff {
        inv_ok &= r.log.status.is_completed();
        for k in 1..r.log.agents {
            let l0 = r.log.lyap(0, k);
            inv_ok &= (0..r.log.len()).all(|i| r.log.lyap(i, k) <= l0 * (1.0 + TOL_INV));
        }
    }

    // Prefix equivalence, recomputed here from the logs.
    let reference = ff.iter().find(|r| r.n == SWEEP[0]).unwrap();
    let mut prefix_diff = 0.0f64;
    for other in ff.iter().filter(|r| r.n != SWEEP[0]) {
        assert_eq!(other.log.len(), reference.log.len());
        for i in 0..reference.log.len() {
            for k in 0..PREFIX_AGENTS {
                let dy = (other.log.y(i, k)[0] - reference.log.y(i, k)[0]).abs();
                let dv = (other.log.v(i, k)[0] - reference.log.v(i, k)[0]).abs();
                prefix_diff = prefix_diff.max(dy).max(dv);
            }
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("comparison.csv");
    write_comparison_csv(&study.rows, std::fs::File::create(&table).unwrap()).unwrap();
    let paired = dir.path().join("profile.csv");
    write_paired_profile_csv(&study, std::fs::File::create(&paired).unwrap()).unwrap();
    let table_text = std::fs::read_to_string(&table).unwrap();
    let rows_expected = 2 * SWEEP.iter().sum::<usize>();
    let table_ok = table_text.lines().count() == rows_expected + 1
        && table_text.lines().any(|l| l.starts_with("local-only,100,"))
        && std::fs::read_to_string(&paired).unwrap().lines().count() == SWEEP.iter().sum::<usize>() + 1;

    let peak = |variant: ControlVariant, k: usize| {
        study
            .rows
            .iter()
            .find(|r| r.variant == variant.to_string() && r.n == 100 && r.k == k)
            .map(|r| r.peak_rel_speed)
            .unwrap_or(f64::NAN)
    };
    outcome(
        inv_ok && prefix_diff <= PREFIX_TOL && table_ok && study.passed(),
        format!(
            "invariance at n = {SWEEP:?}: {inv_ok}; prefix max |Δ| = {prefix_diff:.1e} (<= {PREFIX_TOL:.0e}); table rows {rows_expected}; peak ‖z_v‖ at k = 1/50/100: feedforward {:.3}/{:.3}/{:.3}, local-only {:.3}/{:.3}/{:.3}",
            peak(ControlVariant::Feedforward, 1),
            peak(ControlVariant::Feedforward, 50),
            peak(ControlVariant::Feedforward, 100),
            peak(ControlVariant::LocalOnly, 1),
            peak(ControlVariant::LocalOnly, 50),
            peak(ControlVariant::LocalOnly, 100),
        ),
    )
}

fn collision_guard() -> Outcome {
    let unsafe_sc = load_scenario(&scenario_path("collision.toml")).unwrap();
    let safe_sc = load_scenario(&scenario_path("near_barrier.toml")).unwrap();
    let eps = unsafe_sc.sim.collision_epsilon;
    let start_gap = unsafe_sc.spacings().unwrap().lengths[1];
    let setup_ok = (start_gap / eps - 1.2).abs() < 1e-12
        && !unsafe_sc.certify.enabled
        && safe_sc.certify.enabled
        && safe_sc.spacings().unwrap().lengths == unsafe_sc.spacings().unwrap().lengths;

    let crashed = run(&unsafe_sc).unwrap();
    let collided = matches!(crashed.status, TerminationStatus::Collision { .. });

    let cfg = safe_sc.controller_configs().unwrap()[0];
    let beta_ok = cfg.beta > platoon_core::dynamics::alpha_bound(&safe_sc.model);
    let protected = run(&safe_sc).unwrap();
    let l0 = protected.lyap(0, 1);
    let eta = eta_closed_form(2.0 * l0, &cfg.apf, cfg.sigma);
    let min_gap = (0..protected.len()).map(|r| norm(protected.z(r, 1))).fold(f64::INFINITY, f64::min);
    outcome(
        setup_ok && collided && beta_ok && protected.status.is_completed() && eta > eps && min_gap > eps,
        format!(
            "gap {start_gap} = 1.2·ε: certification off -> {:?}; on -> {:?}, η_c = {eta:.6} > ε = {eps}, min gap {min_gap:.6}",
            status_name(&crashed.status),
            status_name(&protected.status)
        ),
    )
}

fn status_name(s: &TerminationStatus) -> &'static str {
    match s {
        TerminationStatus::Completed => "completed",
        TerminationStatus::Collision { .. } => "collision",
        TerminationStatus::Diverged { .. } => "diverged",
    }
}

fn determinism(sc: &Scenario, log: &TrajectoryLog) -> Outcome {
    let first = trajectory_csv_bytes(log).unwrap();
    let second = trajectory_csv_bytes(&run(sc).unwrap()).unwrap();
    let third = trajectory_csv_bytes(&run(&sc.clone()).unwrap()).unwrap();
    outcome(
        first == second && second == third && !first.is_empty(),
        format!("3 runs, {} bytes each, identical {}", first.len(), first == second && second == third),
    )
}

fn main() -> ExitCode {
    let sc = flagship();
    assert!(matches!(sc.spacing, SpacingPlan::Cycle(_)));
    assert_eq!(sc.certify.tol_inv, TOL_INV);
    assert_eq!(sc.certify.tol_match, TOL_MATCH);
    assert_eq!(sc.certify.matching_window, MATCH_WINDOW);
    let flagship_start = Instant::now();
    let log = run(&sc).expect("flagship run");
    let flagship_time = flagship_start.elapsed();
    assert!(norm_sq(log.z(0, 1)) > 0.0);

    type Criterion<'a> = (&'a str, Duration, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("gradient correctness", Duration::from_secs(1), Box::new(gradients)),
        ("potential axioms", Duration::from_secs(1), Box::new(potential_axioms)),
        ("integrator order", Duration::from_secs(1), Box::new(integrator_order)),
        ("rate identity", Duration::from_secs(10), Box::new(|| rate_identity(&sc, &log))),
        ("sublevel invariance, gap bound, velocity matching", Duration::from_secs(10), Box::new(|| invariance_and_gap(&sc, &log))),
        ("concave drag rate bound", Duration::from_secs(10), Box::new(|| concave_rate(&sc, &log))),
        ("formation function non-increasing", Duration::from_secs(10), Box::new(|| formation(&log))),
        ("scalability and prefix equivalence", Duration::from_secs(120), Box::new(scalability)),
        ("collision guard", Duration::from_secs(5), Box::new(collision_guard)),
        ("determinism", Duration::from_secs(30), Box::new(|| determinism(&sc, &log))),
    ];

    println!("flagship run: {:.3} s", flagship_time.as_secs_f64());
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed() + if (4..=7).contains(&(i + 1)) { flagship_time } else { Duration::ZERO };
        let in_budget = elapsed <= *budget;
        let ok = result.passed && in_budget;
        if !ok {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {} [{:.3} s of {} s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
