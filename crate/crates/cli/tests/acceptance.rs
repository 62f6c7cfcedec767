//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use ballspin_cli::eval::{evaluate, load_checkpoint, mean_survival_steps, EvalRequest};
use ballspin_cli::train::{initial_params, train, Control, FINAL_CHECKPOINT, METRICS_FILE};
use ballspin_cli::RunConfig;
use ballspin_core::curriculum::{Axis, CurriculumSchedule};
use ballspin_core::env::{
    build_observation, compute_reward, orientation_reward, BallEnv, EnvConfig, ObservationFrame, RewardCoefficients,
    ACTION_DIM, OBS_DIM,
};
use ballspin_core::nn::{NetworkConfig, PolicyParams};
use ballspin_core::physics::{
    self, mechanical_energy, BallState, ContactLaw, JointVector, PhysicsConfig, RobotState, SceneModel, NUM_JOINTS,
};
use ballspin_core::ppo::toy::ToyProblem;
use ballspin_core::randomize::{perturb_observation, sample_domain, DisturbanceConfig, DisturbanceSchedule, RandomizationConfig};
use ballspin_core::rollout::{reset_with_rerolls, ActionMode};
use ballspin_core::rotation::{propagate_target, quat_angle, quat_compose, AngularVelocityCommand, UnitQuaternion, UpdatePeriod};
use ballspin_core::seeding::substream;
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: impl FnOnce() -> String, fail: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(ok())
    } else {
        Err(fail())
    }
}

fn rng(key: u64) -> ChaCha8Rng {
    substream(0xacce_97, &[key])
}

// 1. Observation length over reachable states.
fn observation_contract() -> Outcome {
    const EPISODES: u64 = 10_000;
    const STEPS: usize = 5;
    let mut r = rng(1);
    let axes = [Axis::Roll, Axis::Pitch, Axis::Yaw];
    let schedule = CurriculumSchedule::default();
    let mut env = BallEnv::unreset(EnvConfig::default()).map_err(|e| e.to_string())?;
    let mut next_episode = 0;
    let mut checked = 0usize;
    for _ in 0..EPISODES {
        let mut c = schedule.at(r.random_range(0..6000));
        c.factor = r.random::<f64>();
        let (obs, used, _) =
            reset_with_rerolls(&mut env, 11, 0, next_episode, &c, &axes).map_err(|e| format!("reset: {e}"))?;
        next_episode = used + 1;
        if obs.len() != OBS_DIM || !obs.is_finite() {
            return Err(format!("reset observation has length {} (finite: {})", obs.len(), obs.is_finite()));
        }
        checked += 1;
        for _ in 0..STEPS {
            let a: Vec<f64> = (0..ACTION_DIM).map(|_| r.random_range(-3.0..3.0)).collect();
            let s = env.step(&a).map_err(|e| e.to_string())?;
            if s.observation.len() != OBS_DIM || !s.observation.is_finite() {
                return Err(format!("step observation has length {}", s.observation.len()));
            }
            checked += 1;
            if s.done() {
                break;
            }
        }
    }
    let frames = [ObservationFrame::default(), ObservationFrame::default(), ObservationFrame::default()];
    let built = build_observation(&frames, 0.5);
    check(
        built.len() == OBS_DIM,
        || format!("{EPISODES} episodes, {checked} observations, all of length {OBS_DIM}"),
        || format!("build_observation returned {}", built.len()),
    )
}

/// 1/(e^pi + 2 + e^-pi), evaluated to 50 digits with mpmath.
const RQ_PI_OVER_KQ: f64 = 0.039_707_898_295_015_831;

fn still_robot() -> RobotState {
    RobotState {
        base_position: Vector3::new(0.0, 0.0, 0.1),
        base_orientation: UnitQuaternion::from_axis_angle(&Vector3::x(), PI),
        base_lin_vel: Vector3::zeros(),
        base_ang_vel: Vector3::zeros(),
        joints_pos: JointVector::zeros(),
        joints_vel: JointVector::zeros(),
    }
}

// 2. Reward analytics.
fn reward_analytics() -> Outcome {
    for k_q in [1.0, 0.5, 2.0, 3.75] {
        let r0 = orientation_reward(k_q, 0.0);
        if r0 != k_q / 4.0 {
            return Err(format!("r_q(0) = {r0:e} with k_q = {k_q}"));
        }
    }
    let rel = orientation_reward(1.0, PI);
    if (rel - RQ_PI_OVER_KQ).abs() > 1e-12 {
        return Err(format!("r_q(pi)/k_q = {rel:.17} vs {RQ_PI_OVER_KQ:.17}"));
    }
    let coeffs = RewardCoefficients::default();
    let robot = still_robot();
    let ball = BallState::at_rest(Vector3::new(0.0, 0.0, 2.0), 3.0, 0.4);
    let zero = compute_reward(&robot, &ball, &JointVector::zeros(), &[], &ball.orientation, &coeffs);
    let exact = zero.r_v == 0.0 && zero.r_tau == 0.0 && zero.r_slip == 0.0 && zero.r_collide == 0.0;
    check(
        exact && zero.r_q == coeffs.k_q / 4.0,
        || format!("r_q(0) = k_q/4 exact, |r_q(pi)/k_q - ref| = {:.1e}, zero branches exact", (rel - RQ_PI_OVER_KQ).abs()),
        || format!("zero-state reward {zero:?}"),
    )
}

fn random_quat(r: &mut ChaCha8Rng) -> UnitQuaternion {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        if let Ok(q) = UnitQuaternion::try_new(v[0], v[1], v[2], v[3]) {
            if (v.iter().map(|x| x * x).sum::<f64>()).sqrt() > 0.1 {
                return q;
            }
        }
    }
}

/// Rotation matrix by an independent implementation.
fn oracle(q: &UnitQuaternion) -> Matrix3<f64> {
    let nq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q.w(), q.x(), q.y(), q.z()));
    nq.to_rotation_matrix().into_inner()
}

fn matrix_angle(m: &Matrix3<f64>) -> f64 {
    Rotation3::from_matrix_unchecked(*m).angle()
}

// 3. Rotation identities against matrix oracles.
fn rotation_math() -> Outcome {
    const N: usize = 100_000;
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for i in 0..N {
        let a = random_quat(&mut r);
        let b = random_quat(&mut r);
        let (ma, mb) = (oracle(&a), oracle(&b));
        let compose = (oracle(&quat_compose(&a, &b)) - ma * mb).abs().max();
        let inverse = (oracle(&a.inverse()) - ma.transpose()).abs().max();
        let angle = (quat_angle(&a) - matrix_angle(&ma)).abs();
        let axis = Unit::new_normalize(Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 0.5));
        let speed = r.random_range(0.0..0.5);
        let period = UpdatePeriod::ALL[i % 3];
        let cmd = AngularVelocityCommand::new(axis.into_inner(), speed, period).map_err(|e| e.to_string())?;
        let step = Rotation3::from_axis_angle(&axis, speed * period.seconds()).into_inner();
        let propagate = (oracle(&propagate_target(&a, &cmd)) - step * ma).abs().max();
        let e = compose.max(inverse).max(angle).max(propagate);
        if !(e <= 1e-9) {
            return Err(format!("sample {i}: compose {compose:.1e}, inverse {inverse:.1e}, angle {angle:.1e}, propagate {propagate:.1e}"));
        }
        worst = worst.max(e);
    }
    Ok(format!("{N} samples, worst deviation {worst:.1e}"))
}

fn supine(model: &SceneModel) -> RobotState {
    RobotState {
        base_position: Vector3::new(0.0, 0.0, model.config.base_half_extents[2]),
        base_orientation: UnitQuaternion::from_axis_angle(&Vector3::x(), PI),
        base_lin_vel: Vector3::zeros(),
        base_ang_vel: Vector3::zeros(),
        joints_pos: model.config.nominal_pose(),
        joints_vel: JointVector::zeros(),
    }
}

fn free_fall() -> Result<f64, String> {
    let model = SceneModel::nominal(PhysicsConfig::default());
    let cfg = &model.config;
    let (g, h, z0) = (cfg.gravity, cfg.substep_dt, 50.0);
    let robot = supine(&model);
    let targets = cfg.nominal_pose();
    let mut ball = BallState::at_rest(Vector3::new(0.0, 0.0, z0), model.ball_mass, model.ball_radius);
    let mut worst = 0.0f64;
    for k in 1..=10 {
        for _ in 0..10 {
            ball = physics::step(&model, &robot, &ball, &targets, &Vector3::zeros(), cfg.control_dt)
                .map_err(|e| e.to_string())?
                .ball;
        }
        let t = 0.1 * k as f64;
        // Velocity is exact for any step; the position of the semi-implicit
        // scheme carries the known first-order term g*h*t/2.
        let dv = (ball.lin_vel.z + g * t).abs();
        let dz = (ball.position.z - (z0 - 0.5 * g * t * t - 0.5 * g * h * t)).abs();
        worst = worst.max(dv).max(dz).max(ball.position.xy().norm());
    }
    Ok(worst)
}

fn friction_cone() -> Result<(usize, f64), String> {
    let mut r = rng(4);
    let mut contacts = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut steps = 0;
    while steps < 10_000 {
        let mut model = SceneModel::nominal(PhysicsConfig::default());
        model.ball_friction = r.random_range(0.3..1.2);
        let mut robot = supine(&model);
        for i in 0..NUM_JOINTS {
            robot.joints_pos[i] += r.random_range(-0.1..0.1);
            robot.joints_vel[i] = r.random_range(-2.0..2.0);
        }
        let feet: Vec<Vector3<f64>> = physics::leg_frames(&model, &robot).iter().map(|f| f.foot).collect();
        let centre = feet.iter().sum::<Vector3<f64>>() / feet.len() as f64;
        let mut ball = BallState::at_rest(centre + Vector3::new(0.0, 0.0, model.ball_radius + 0.1), model.ball_mass, model.ball_radius);
        ball.position.z -= r.random_range(0.0..0.14);
        ball.lin_vel = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        ball.ang_vel = Vector3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let targets = model.config.nominal_pose();
        for _ in 0..10 {
            let out = physics::step(&model, &robot, &ball, &targets, &Vector3::zeros(), model.config.control_dt)
                .map_err(|e| e.to_string())?;
            steps += 1;
            for c in &out.contacts {
                let Some(law) = ContactLaw::for_pair(&model, c.body_a, c.body_b) else { continue };
                if c.normal_force > 0.0 {
                    contacts += 1;
                    worst = worst.max(c.tangential_force.norm() - law.friction * c.normal_force);
                }
                if c.tangential_force.dot(&c.normal).abs() > 1e-9 * (1.0 + c.tangential_force.norm()) {
                    return Err("tangential force has a normal component".into());
                }
            }
            robot = out.robot;
            ball = out.ball;
        }
    }
    if contacts == 0 {
        return Err("no contacts exercised".into());
    }
    Ok((contacts, worst))
}

/// Largest per-step relative energy gain in passive scenes (zero stiffness
/// gain, damped joints, restitution below one) integrated with `substep`.
fn energy_decay(substep: f64) -> Result<(usize, f64), String> {
    let mut r = rng(5);
    let mut worst_gain = f64::NEG_INFINITY;
    let mut steps = 0;
    for _ in 0..20 {
        let mut cfg = PhysicsConfig::default();
        cfg.kp = 0.0;
        cfg.substep_dt = substep;
        let mut model = SceneModel::nominal(cfg);
        model.ball_restitution = r.random_range(0.3..0.9);
        model.ball_friction = r.random_range(0.3..1.0);
        let mut robot = supine(&model);
        let mut ball = BallState::at_rest(Vector3::new(r.random_range(-0.1..0.1), r.random_range(-0.1..0.1), 1.5), model.ball_mass, model.ball_radius);
        ball.ang_vel = Vector3::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let targets = JointVector::zeros();
        let mut e_prev = mechanical_energy(&model, &robot, &ball);
        for _ in 0..200 {
            let out = physics::step(&model, &robot, &ball, &targets, &Vector3::zeros(), model.config.control_dt)
                .map_err(|e| e.to_string())?;
            robot = out.robot;
            ball = out.ball;
            let e = mechanical_energy(&model, &robot, &ball);
            worst_gain = worst_gain.max((e - e_prev) / e_prev.abs().max(1.0));
            e_prev = e;
            steps += 1;
        }
    }
    Ok((steps, worst_gain))
}

fn physics_determinism() -> Result<bool, String> {
    let run = || -> Result<Vec<u64>, String> {
        let mut env = BallEnv::unreset(EnvConfig::default()).map_err(|e| e.to_string())?;
        let c = CurriculumSchedule::default().at(5000);
        reset_with_rerolls(&mut env, 4, 0, 0, &c, &[Axis::Pitch]).map_err(|e| e.to_string())?;
        let mut r = rng(6);
        let mut bits = Vec::new();
        for _ in 0..300 {
            let a: Vec<f64> = (0..ACTION_DIM).map(|_| r.random_range(-1.0..1.0)).collect();
            let s = env.step(&a).map_err(|e| e.to_string())?;
            bits.extend(s.observation.as_slice().iter().map(|v| v.to_bits()));
            bits.push(s.reward.total.to_bits());
            if s.done() {
                break;
            }
        }
        Ok(bits)
    };
    Ok(run()? == run()?)
}

// 4. Physics properties.
fn physics_properties() -> Outcome {
    let fall = free_fall()?;
    let (contacts, cone) = friction_cone()?;
    // Semi-implicit Euler lets the discrete energy oscillate at stiff
    // contacts by O(h); the model property is checked at a resolved step.
    let (steps, gain) = energy_decay(1e-4)?;
    let (_, coarse_gain) = energy_decay(PhysicsConfig::default().substep_dt)?;
    let same = physics_determinism()?;
    let detail = format!(
        "free fall dev {fall:.1e}, cone excess {cone:.1e} over {contacts} contacts, max relative energy gain {gain:.1e} over {steps} steps at 0.1 ms ({coarse_gain:.1e} at the default substep), deterministic {same}"
    );
    check(fall <= 1e-6 && cone <= 1e-9 && gain <= 1e-9 && same, || detail.clone(), || detail.clone())
}

// 5. Finite-difference gradients on random small nets, both heads and log-std.
fn gradient_check() -> Outcome {
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for trial in 0..5u64 {
        let obs_dim = r.random_range(2..6);
        let act_dim = r.random_range(1..4);
        let cfg = NetworkConfig { hidden: vec![r.random_range(2..6), r.random_range(2..6)], policy_output_gain: 1.0, ..Default::default() };
        let mut p = PolicyParams::<f64>::init(100 + trial, obs_dim, act_dim, &cfg);
        for v in p.log_std.iter_mut() {
            *v = r.random_range(-1.0..0.5);
        }
        let rows = 3;
        let x: Vec<f64> = (0..rows * obs_dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let cm: Vec<f64> = (0..rows * act_dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let cv: Vec<f64> = (0..rows).map(|_| r.random_range(-1.0..1.0)).collect();
        let cs: Vec<f64> = (0..act_dim).map(|_| r.random_range(-1.0..1.0)).collect();
        // L = sum cm*tanh(mean) + sum cv*value^2 + sum cs*exp(log_std)
        let loss = |p: &PolicyParams<f64>| -> f64 {
            let c = p.forward_batch(&x, rows).expect("forward");
            let m: f64 = c.means().iter().zip(&cm).map(|(m, k)| k * m.tanh()).sum();
            let v: f64 = c.values().iter().zip(&cv).map(|(v, k)| k * v * v).sum();
            let s: f64 = p.log_std.iter().zip(&cs).map(|(s, k)| k * s.exp()).sum();
            m + v + s
        };
        let cache = p.forward_batch(&x, rows).map_err(|e| e.to_string())?;
        let d_mean: Vec<f64> = cache.means().iter().zip(&cm).map(|(m, k)| k * (1.0 - m.tanh().powi(2))).collect();
        let d_value: Vec<f64> = cache.values().iter().zip(&cv).map(|(v, k)| 2.0 * k * v).collect();
        let d_log_std: Vec<f64> = p.log_std.iter().zip(&cs).map(|(s, k)| k * s.exp()).collect();
        let grad = p.backward(&cache, &d_mean, &d_value, &d_log_std).map_err(|e| e.to_string())?;
        let analytic: Vec<(String, Vec<f64>)> = grad.tensors().into_iter().map(|(n, _, d)| (n, d.to_vec())).collect();
        let mut covered = [false; 3];
        let eps = 1e-6;
        for (t, (name, g)) in analytic.iter().enumerate() {
            for (j, g_a) in g.iter().enumerate() {
                let mut plus = p.clone();
                plus.tensors_mut()[t][j] += eps;
                let mut minus = p.clone();
                minus.tensors_mut()[t][j] -= eps;
                let g_n = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let err = (g_a - g_n).abs() / (g_a.abs() + g_n.abs()).max(1e-6);
                if err >= 1e-4 {
                    return Err(format!("trial {trial}, {name}[{j}]: analytic {g_a:e}, numeric {g_n:e}"));
                }
                worst = worst.max(err);
            }
            covered[if name.starts_with("policy") { 0 } else if name.starts_with("value") { 1 } else { 2 }] = true;
        }
        if covered != [true; 3] {
            return Err("not every parameter group was checked".into());
        }
        let _ = &mut p;
    }
    Ok(format!("5 random nets, policy/value/log-std, worst relative error {worst:.1e}"))
}

// 6. PPO on the one-dimensional toy problem.
fn ppo_sanity() -> Outcome {
    let toy = ToyProblem::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3 {
        let h = toy.train(seed, 50).map_err(|e| e.to_string())?;
        let first = h[..10].iter().sum::<f64>() / 10.0;
        let last = h[h.len() - 10..].iter().sum::<f64>() / 10.0;
        let fraction = (last - first) / (ToyProblem::OPTIMUM - first);
        ok &= fraction >= 0.5;
        lines.push(format!("seed {seed}: {first:.3} -> {last:.3} ({:.0}% of gap)", 100.0 * fraction));
    }
    check(ok, || lines.join(", "), || lines.join(", "))
}

fn empirical_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

// 7. Curriculum and randomization contracts.
fn curriculum_randomization() -> Outcome {
    let schedule = CurriculumSchedule::default();
    let mut periods = std::collections::BTreeSet::new();
    let mut prev = schedule.at(0);
    for it in 0..=2 * schedule.ramp_end {
        let c = schedule.at(it);
        if c.factor < prev.factor || c.target_speed < prev.target_speed || c.update_period.seconds() > prev.update_period.seconds() {
            return Err(format!("curriculum not monotone at iteration {it}"));
        }
        periods.insert(c.update_period);
        prev = c;
    }
    let expected: std::collections::BTreeSet<_> = UpdatePeriod::ALL.into_iter().collect();
    if periods != expected || UpdatePeriod::ALL.map(|p| p.seconds()) != [1.0, 0.5, 0.33] {
        return Err(format!("period set {periods:?}"));
    }

    const DRAWS: usize = 100_000;
    let rc = RandomizationConfig::default();
    let physics = PhysicsConfig::default();
    let mut r = rng(8);
    let mut shank = Vec::with_capacity(DRAWS);
    let (mut jp, mut jv, mut bp, mut bo) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut mass_dev, mut radius_dev) = (0.0f64, 0.0f64);
    let (mut fric, mut rest) = ([f64::MAX, f64::MIN], [f64::MAX, f64::MIN]);
    let frame = ObservationFrame::default();
    for _ in 0..DRAWS {
        let s = sample_domain(&mut r, &rc, &physics, 1.0);
        shank.push(s.shank_length_delta[0]);
        mass_dev = mass_dev.max((s.ball_mass / physics.ball_mass - 1.0).abs());
        radius_dev = radius_dev.max((s.ball_radius / physics.ball_radius - 1.0).abs());
        fric = [fric[0].min(s.friction), fric[1].max(s.friction)];
        rest = [rest[0].min(s.restitution), rest[1].max(s.restitution)];
        let o = perturb_observation(&frame, &mut r, &rc, 1.0);
        jp.push(o.joints_pos[0]);
        jv.push(o.joints_vel[0]);
        bp.push(o.ball_pos_in_base[0]);
        bo.push(o.quat_diff.log()[0]);
    }
    let stds = [("shank", &shank, 0.03), ("joint pos", &jp, 0.05), ("joint vel", &jv, 0.3), ("ball pos", &bp, 0.04), ("ball ori", &bo, 0.03)];
    let mut parts = Vec::new();
    for (name, xs, want) in stds {
        let got = empirical_std(xs);
        if ((got - want) / want).abs() > 0.05 {
            return Err(format!("{name} noise std {got:.5} vs {want}"));
        }
        parts.push(format!("{name} {got:.4}"));
    }
    if mass_dev > 0.05 + 1e-12 || mass_dev < 0.049 || radius_dev > 0.10 + 1e-12 || radius_dev < 0.099 {
        return Err(format!("mass/radius deviation {mass_dev:.4}/{radius_dev:.4}"));
    }
    if fric[0] < 0.5 || fric[1] > 1.1 || rest[0] < 0.9 || rest[1] > 1.0 {
        return Err(format!("friction {fric:?}, restitution {rest:?}"));
    }

    let dc = DisturbanceConfig::default();
    let dt = physics.control_dt;
    let mut sched = DisturbanceSchedule::new(rng(9), &dc, dt);
    let windows = 20_000u64;
    let steps_per_window = (dc.window / dt).round() as u64;
    let mut bad_magnitude = 0.0f64;
    for step in 0..windows * steps_per_window {
        let f = sched.force_at_step(step);
        let n = f.norm();
        if n != 0.0 {
            bad_magnitude = bad_magnitude.max((n - 50.0).abs());
        }
    }
    let freq = sched.activations() as f64 / windows as f64;
    if (freq - 0.20).abs() > 0.02 || bad_magnitude > 1e-12 {
        return Err(format!("disturbance frequency {freq:.4}, magnitude deviation {bad_magnitude:e}"));
    }
    Ok(format!(
        "monotone, periods {{1.0, 0.5, 0.33}} s, stds [{}], disturbance frequency {freq:.4}, |F| = 50 N",
        parts.join(", ")
    ))
}

// 8. Desk-scale learning on the stage-0 configuration.
const C8_EVAL_EPISODES: usize = 20;
const C8_EVAL_EVERY: u64 = 10;

fn desk_scale_learning() -> Outcome {
    let mut lines = Vec::new();
    let mut best_ratio = 0.0f64;
    for seed in 0..3u64 {
        let mut cfg = RunConfig::stage0();
        cfg.seed = seed;
        let eval_seed = 1000 + seed;
        let baseline = mean_survival_steps(&initial_params(&cfg), &cfg, 0, eval_seed, C8_EVAL_EPISODES, ActionMode::Sample)
            .map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let start = Instant::now();
        let mut best = (0.0f64, 0u64);
        let mut eval_err = None;
        train(&cfg, dir.path(), 1, |row, params| {
            if (row.iteration + 1) % C8_EVAL_EVERY != 0 {
                return Control::Continue;
            }
            match mean_survival_steps(params, &cfg, row.iteration, eval_seed, C8_EVAL_EPISODES, ActionMode::Sample) {
                Ok(s) => {
                    if s > best.0 {
                        best = (s, row.iteration + 1);
                    }
                    if s >= 3.0 * baseline {
                        Control::Stop
                    } else {
                        Control::Continue
                    }
                }
                Err(e) => {
                    eval_err = Some(e.to_string());
                    Control::Stop
                }
            }
        })
        .map_err(|e| e.to_string())?;
        if let Some(e) = eval_err {
            return Err(e);
        }
        let ratio = best.0 / baseline;
        best_ratio = best_ratio.max(ratio);
        lines.push(format!(
            "seed {seed}: baseline {baseline:.0}, best {:.0} at iteration {} ({ratio:.2}x, {:.0}s)",
            best.0,
            best.1,
            start.elapsed().as_secs_f64()
        ));
        if ratio >= 3.0 {
            break;
        }
    }
    check(best_ratio >= 3.0, || lines.join("; "), || lines.join("; "))
}

fn strip_wall_time(csv_text: &str) -> String {
    let mut lines = csv_text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = header.iter().position(|h| *h == "wall_time_s");
    std::iter::once(header.join(","))
        .chain(lines.map(|l| {
            l.split(',').enumerate().filter(|(i, _)| Some(*i) != col).map(|(_, v)| v).collect::<Vec<_>>().join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n")
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn dir_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        out.push((p.file_name().unwrap().to_string_lossy().into_owned(), read(&p)?));
    }
    out.sort();
    Ok(out)
}

// 9. End-to-end determinism across reruns and worker counts.
fn determinism() -> Outcome {
    let mut cfg = RunConfig { num_envs: 4, steps_per_env: 64, iterations: 3, checkpoint_interval: 0, ..RunConfig::default() };
    cfg.seed = 17;
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for (k, workers) in [1usize, 1, 2, 3].into_iter().enumerate() {
        let out = root.path().join(format!("run{k}"));
        train(&cfg, &out, workers, |_, _| Control::Continue).map_err(|e| e.to_string())?;
        let metrics = String::from_utf8(read(&out.join(METRICS_FILE))?).map_err(|e| e.to_string())?;
        let (ckpt, loaded) = load_checkpoint(&out.join(FINAL_CHECKPOINT)).map_err(|e| e.to_string())?;
        let eval_dir = out.join("eval");
        let req = EvalRequest { axis: Axis::Yaw, speed_deg: 15.0, episodes: 2, seed: 3 };
        evaluate(&ckpt.params, &loaded, ckpt.iteration, &req, &eval_dir).map_err(|e| e.to_string())?;
        runs.push((strip_wall_time(&metrics), read(&out.join(FINAL_CHECKPOINT))?, dir_files(&eval_dir)?));
    }
    let rows = runs[0].0.lines().count() - 1;
    let traces = runs[0].2.len();
    for (k, run) in runs.iter().enumerate().skip(1) {
        if run.0 != runs[0].0 {
            return Err(format!("metrics differ in run {k}"));
        }
        if run.1 != runs[0].1 {
            return Err(format!("checkpoint differs in run {k}"));
        }
        if run.2 != runs[0].2 {
            return Err(format!("eval outputs differ in run {k}"));
        }
    }
    check(
        rows == 3 && traces == 3,
        || format!("4 runs (workers 1, 1, 2, 3): {rows} metrics rows, checkpoint and {traces} eval files byte-identical"),
        || format!("{rows} metrics rows, {traces} eval files"),
    )
}

fn main() {
    // `cargo test -- <filter>` passes arguments; run criteria whose number matches.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("observation contract", observation_contract),
        ("reward analytics", reward_analytics),
        ("rotation math", rotation_math),
        ("physics properties", physics_properties),
        ("gradient correctness", gradient_check),
        ("ppo sanity", ppo_sanity),
        ("curriculum and randomization", curriculum_randomization),
        ("desk-scale learning", desk_scale_learning),
        ("end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|a| a == &n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} [{tag}] {name} ({:.1}s): {detail}", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
