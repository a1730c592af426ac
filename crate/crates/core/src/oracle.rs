//! Self-checks with independent reference computations: finite-difference
//! gradients, brute-force retrace, gating invariance, reward constants, the
//! action filter and physics sanity. Used by the `oracle-tests` CLI verb and
//! the acceptance suite.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::physics::{reset_with_angle, step};
use crate::env::reward::{shaped_height, swing_up};
use crate::env::{
    compute_rewards, ActionFilter, BallInCup, EnvConfig, Frame, Observation, ObservationScaling,
    Vec2,
};
use crate::error::Result;
use crate::gated::{
    FilterVector, GatedParams, InputShapes, Model, NetworkConfig, ObsBatch, StateGroup, TaskSpec,
};
use crate::learner::{retrace_targets, RetraceInputs, TraceMode};
use crate::nn::{
    finite_diff_check, finite_diff_check_input, finite_diff_tree, relative_error, Activation,
    LayerSpec, Network, ParamTree, Tensor,
};

/// Outcome of one check: the measured worst case against its bound.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for OracleCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: measured {:.3e}, tolerance {:.1e} ({}; {:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail,
            self.seconds
        )
    }
}

fn check(
    name: &'static str,
    measured: f64,
    tolerance: f64,
    detail: String,
    started: Instant,
) -> OracleCheck {
    OracleCheck {
        name,
        measured,
        tolerance,
        passed: measured <= tolerance,
        detail,
        seconds: started.elapsed().as_secs_f64(),
    }
}

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const RETRACE_TOLERANCE: f64 = 1e-10;
const IMAGE: usize = 16;

/// Small nets with the full structure, on 16×16 frames.
fn oracle_network() -> NetworkConfig {
    NetworkConfig {
        actor_embedding: 6,
        actor_layers: vec![8, 8],
        critic_embedding: 6,
        critic_layers: vec![8, 8],
        conv_channels: [2, 2],
        ..NetworkConfig::default()
    }
}

fn random_observation(rng: &mut impl Rng) -> Observation {
    let frame = |rng: &mut dyn rand::RngCore| {
        Arc::new(
            Frame::from_pixels(IMAGE, (0..IMAGE * IMAGE).map(|_| rng.random()).collect())
                .expect("frame size"),
        )
    };
    Observation {
        proprio: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        features: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        frames: std::array::from_fn(|_| frame(rng)),
    }
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .expect("shape")
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// One task per (policy filter, critic filter) pair of valid filters.
pub fn all_task_configs(reward_id: u8) -> Vec<TaskSpec> {
    let valid = [
        FilterVector::PROPRIO_FEATURES,
        FilterVector::PROPRIO_IMAGE,
        FilterVector::ALL,
    ];
    let mut tasks = Vec::new();
    for p in valid {
        for c in valid {
            tasks.push(TaskSpec::new(tasks.len(), reward_id, p, c).expect("valid filters"));
        }
    }
    tasks
}

/// Every layer kind, then `instances` full actor and critic networks, against
/// central differences.
pub fn gradients(seed: u64, instances: usize) -> Result<OracleCheck> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;

    let layers: Vec<(Vec<usize>, Vec<LayerSpec>)> = vec![
        (vec![5], vec![LayerSpec::dense(5, 4)]),
        (vec![2, 9, 9], vec![LayerSpec::conv2d(2, 3, 3, 2)]),
        (
            vec![6],
            vec![LayerSpec::dense(6, 6), LayerSpec::layer_norm(6)],
        ),
        (
            vec![4],
            vec![
                LayerSpec::dense(4, 5),
                LayerSpec::activation(Activation::Elu),
            ],
        ),
        (
            vec![4],
            vec![
                LayerSpec::dense(4, 5),
                LayerSpec::activation(Activation::Tanh),
            ],
        ),
        (
            vec![4],
            vec![
                LayerSpec::dense(4, 5),
                LayerSpec::activation(Activation::Softplus),
            ],
        ),
    ];
    for (shape, specs) in layers {
        let net = Network::new(&shape, specs)?;
        let params = net.init_params(&mut rng);
        let mut input_shape = vec![3];
        input_shape.extend(&shape);
        let x = random_tensor(&mut rng, &input_shape);
        worst = worst.max(finite_diff_check(&net, &params, &x, eps)?);
        worst = worst.max(finite_diff_check_input(&net, &params, &x, eps)?);
    }

    let tasks = all_task_configs(5);
    let model = Model::new(
        &oracle_network(),
        InputShapes::for_env(IMAGE),
        2,
        tasks.len(),
    )?;
    let scaling = ObservationScaling::default();
    for instance in 0..instances {
        let task = &tasks[instance % tasks.len()];
        let store = model.init_store(&mut rng);
        let obs: Vec<_> = (0..2).map(|_| random_observation(&mut rng)).collect();
        let obs = ObsBatch::from_observations(&obs, &scaling, FilterVector::ALL)?;
        let actions = random_tensor(&mut rng, &[2, 2]);
        let (w_mean, w_std, w_q) = (
            random_tensor(&mut rng, &[2, 2]),
            random_tensor(&mut rng, &[2, 2]),
            random_tensor(&mut rng, &[2, 1]),
        );
        let ga = model.actor.vjp(&store.actor, &obs, task, &w_mean, &w_std)?;
        worst = worst.max(finite_diff_tree(&store.actor, &ga, eps, 1, |p| {
            let g = model.actor.forward(p, &obs, task)?;
            Ok(dot(&g.mean, &w_mean) + dot(&g.std, &w_std))
        })?);
        let (gc, da) = model
            .critic
            .vjp(&store.critic, &obs, &actions, task, &w_q)?;
        let q_loss = |p: &GatedParams, a: &Tensor| -> Result<f64> {
            Ok(dot(
                &Tensor::from_vec(model.critic.forward(p, &obs, a, task)?),
                &w_q,
            ))
        };
        worst = worst.max(finite_diff_tree(&store.critic, &gc, eps, 1, |p| {
            q_loss(p, &actions)
        })?);
        let mut a = actions.clone();
        for j in 0..a.len() {
            let orig = a.data()[j];
            a.data_mut()[j] = orig + eps;
            let plus = q_loss(&store.critic, &a)?;
            a.data_mut()[j] = orig - eps;
            let minus = q_loss(&store.critic, &a)?;
            a.data_mut()[j] = orig;
            worst = worst.max(relative_error(da.data()[j], (plus - minus) / (2.0 * eps)));
        }
    }
    Ok(check(
        "gradient correctness",
        worst,
        GRADIENT_TOLERANCE,
        format!("6 layer kinds, {instances} actor/critic instances, max relative error"),
        started,
    ))
}

/// Brute-force retrace: every `(i, j)` term with its own product of traces.
pub fn naive_retrace(x: RetraceInputs<'_>, gamma: f64, mode: TraceMode) -> Vec<f64> {
    let n = x.rewards.len();
    (0..n)
        .map(|i| {
            let first = match mode {
                TraceMode::PaperLiteral => i,
                TraceMode::Standard => i + 1,
            };
            let mut sum = 0.0;
            for j in i..n {
                let prod: f64 = (first..=j).map(|k| x.c[k]).product();
                let v = if j == n - 1 && x.terminal {
                    0.0
                } else {
                    x.v_next[j]
                };
                sum += gamma.powi((j - i) as i32) * prod * (x.rewards[j] + gamma * v - x.q[j]);
            }
            match mode {
                TraceMode::PaperLiteral => sum,
                TraceMode::Standard => x.q[i] + sum,
            }
        })
        .collect()
}

/// The recursive targets against [`naive_retrace`] on random windows of
/// length 1–20, in both trace modes.
pub fn retrace(seed: u64, cases: usize) -> OracleCheck {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let n = 1 + case % 20;
        let mut draw =
            |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
        let (rewards, q, v, c) = (
            draw(-1.0, 1.0),
            draw(-5.0, 5.0),
            draw(-5.0, 5.0),
            draw(1e-3, 1.0),
        );
        let x = RetraceInputs {
            rewards: &rewards,
            q: &q,
            v_next: &v,
            c: &c,
            terminal: case % 3 == 0,
        };
        for mode in [TraceMode::PaperLiteral, TraceMode::Standard] {
            let fast = retrace_targets(x, 0.99, mode);
            let slow = naive_retrace(x, 0.99, mode);
            worst = fast
                .iter()
                .zip(&slow)
                .map(|(a, b)| (a - b).abs())
                .fold(worst, f64::max);
        }
    }
    check(
        "retrace oracle equivalence",
        worst,
        RETRACE_TOLERANCE,
        format!("{cases} windows x 2 trace modes, max absolute error"),
        started,
    )
}

/// For every filter pair: perturbing disabled groups changes no output bit,
/// and disabled encoders receive exactly zero gradient. Measured value is
/// the number of violations.
pub fn gating(seed: u64) -> Result<OracleCheck> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = all_task_configs(5);
    let model = Model::new(
        &oracle_network(),
        InputShapes::for_env(IMAGE),
        2,
        tasks.len(),
    )?;
    let store = model.init_store(&mut rng);
    let scaling = ObservationScaling::default();
    let mut violations = 0usize;
    for task in &tasks {
        let obs: Vec<_> = (0..3).map(|_| random_observation(&mut rng)).collect();
        let obs = ObsBatch::from_observations(&obs, &scaling, FilterVector::ALL)?;
        let actions = random_tensor(&mut rng, &[3, 2]);
        for (filter, is_actor) in [(task.policy_filter, true), (task.critic_filter, false)] {
            let mut other = obs.clone();
            for g in StateGroup::ALL
                .into_iter()
                .filter(|&g| !filter.is_enabled(g))
            {
                if let Some(t) = other.group_mut(g) {
                    t.data_mut()
                        .iter_mut()
                        .for_each(|v| *v = rng.random_range(-5.0..5.0));
                }
            }
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            let grads = if is_actor {
                let (a, b) = (
                    model.actor.forward(&store.actor, &obs, task)?,
                    model.actor.forward(&store.actor, &other, task)?,
                );
                violations +=
                    usize::from(bits(&a.mean) != bits(&b.mean) || bits(&a.std) != bits(&b.std));
                let w = random_tensor(&mut rng, &[3, 2]);
                model.actor.vjp(&store.actor, &obs, task, &w, &w)?
            } else {
                let a = model.critic.forward(&store.critic, &obs, &actions, task)?;
                let b = model
                    .critic
                    .forward(&store.critic, &other, &actions, task)?;
                violations += usize::from(
                    a.iter()
                        .map(|v| v.to_bits())
                        .ne(b.iter().map(|v| v.to_bits())),
                );
                model
                    .critic
                    .vjp(
                        &store.critic,
                        &obs,
                        &actions,
                        task,
                        &random_tensor(&mut rng, &[3, 1]),
                    )?
                    .0
            };
            for g in StateGroup::ALL
                .into_iter()
                .filter(|&g| !filter.is_enabled(g))
            {
                let zero = grads.encoders[g.index()]
                    .tensors()
                    .iter()
                    .all(|t| t.data().iter().all(|&v| v == 0.0));
                violations += usize::from(!zero);
            }
        }
    }
    Ok(check(
        "gating invariance",
        violations as f64,
        0.0,
        format!(
            "{} task configurations, actor and critic, violations counted",
            tasks.len()
        ),
        started,
    ))
}

/// Reward constants and the implications r5 ⇒ r1 and r2 ⇒ r1 on random
/// states. Measured value is the worst relative error, or infinity on any
/// violated implication.
pub fn rewards(seed: u64, states: usize) -> OracleCheck {
    let started = Instant::now();
    let cfg = EnvConfig::default();
    let half = (shaped_height(&cfg, 0.0) - 0.5).abs();
    let peak = swing_up(&cfg, 0.0, 0.0);
    let expected = 1.0 / (2.0 * std::f64::consts::PI * 0.09 * 0.09);
    let ratio = swing_up(&cfg, 2.0 * 0.09, 0.0) / peak;
    let mut worst = half
        .max(relative_error(peak, expected))
        .max(relative_error(ratio, (-2.0f64).exp()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = reset_with_angle(&cfg, 0.0);
    let mut violations = 0;
    for _ in 0..states {
        s.ball_pos =
            s.cup_pos + Vec2::new(rng.random_range(-0.45..0.45), rng.random_range(-0.45..0.45));
        let r = compute_rewards(&cfg, &s);
        violations += usize::from((r.get(5) == 1.0 || r.get(2) == 1.0) && r.get(1) != 1.0);
    }
    if violations > 0 {
        worst = f64::INFINITY;
    }
    check(
        "reward formulas",
        worst,
        1e-9,
        format!("r6(0), r7 peak and 2-sigma ratio; {states} random states, {violations} implication violations"),
        started,
    )
}

/// Step response after 20 steps and bit equality of the exposed filter
/// state. Measured value is the shortfall below 0.94 (0 when reached).
pub fn action_filter(seed: u64) -> Result<OracleCheck> {
    let started = Instant::now();
    let mut f = ActionFilter::new(0.5, 0.05);
    let mut y = [0.0; 2];
    for _ in 0..20 {
        y = f.apply([1.0, 1.0]);
    }
    let mut shortfall = (0.94 - y[0]).max(0.0);
    let mut env = BallInCup::new(EnvConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    env.reset(&mut rng);
    for _ in 0..100 {
        let out = env.step([rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)])?;
        if out.observation.filter_state().map(f64::to_bits)
            != env.filter().state().map(f64::to_bits)
        {
            shortfall = f64::INFINITY;
        }
    }
    Ok(check(
        "action filter",
        shortfall,
        0.0,
        format!(
            "beta {:.7}, response after 20 steps {:.4}, exposed state bit-exact",
            f.beta(),
            y[0]
        ),
        started,
    ))
}

/// Free fall, pendulum period and string length. Measured value is the worst
/// of the three errors, each divided by its own tolerance.
pub fn physics(seed: u64) -> Result<OracleCheck> {
    let started = Instant::now();
    let cfg = EnvConfig::default();

    let mut s = reset_with_angle(&cfg, 0.0);
    s.ball_pos = s.cup_pos + Vec2::new(0.2, 0.1);
    let z0 = s.ball_pos.z;
    let mut fall_err: f64 = 0.0;
    for k in 1..=4 {
        s = step(&cfg, &s, Vec2::ZERO)?;
        let t = k as f64 * cfg.control_dt;
        fall_err = fall_err.max(((z0 - s.ball_pos.z) - 0.5 * cfg.gravity * t * t).abs());
    }

    let mut s = reset_with_angle(&cfg, 0.05);
    let mut xs = vec![s.ball_in_cup_frame().x];
    for _ in 0..400 {
        s = step(&cfg, &s, Vec2::ZERO)?;
        xs.push(s.ball_in_cup_frame().x);
    }
    let cross: Vec<f64> = xs
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] < 0.0 && w[1] >= 0.0)
        .map(|(i, w)| (i as f64 + w[0] / (w[0] - w[1])) * cfg.control_dt)
        .collect();
    let expected = 2.0 * std::f64::consts::PI * (cfg.string_length / cfg.gravity).sqrt();
    let period_err = match cross.len() {
        0 | 1 => f64::INFINITY,
        n => ((cross[n - 1] - cross[0]) / (n - 1) as f64 - expected).abs() / expected,
    };

    let mut env = BallInCup::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut overshoot: f64 = 0.0;
    for _ in 0..10 {
        env.reset(&mut rng);
        for _ in 0..250 {
            env.step([rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)])?;
            overshoot = overshoot.max(env.state().string_extension() - cfg.string_length);
        }
    }
    let score = (fall_err / 1e-3)
        .max(period_err / 0.05)
        .max(overshoot / 1e-6);
    Ok(check(
        "physics sanity",
        score,
        1.0,
        format!("free fall error {fall_err:.2e} m, period error {:.2}%, max string overshoot {overshoot:.2e} m (score = worst error / its tolerance)", 100.0 * period_err),
        started,
    ))
}

/// Every check at its acceptance size.
pub fn run_all(seed: u64) -> Result<Vec<OracleCheck>> {
    Ok(vec![
        gradients(seed, 20)?,
        retrace(seed, 200),
        gating(seed)?,
        rewards(seed, 100_000),
        action_filter(seed)?,
        physics(seed)?,
    ])
}
