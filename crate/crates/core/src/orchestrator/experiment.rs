//! Experiment driver: actor episodes, learner steps, evaluation, outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{build_model, Checkpoint};
use super::config::{ExecutionMode, ExperimentConfig};
use super::episode::{evaluate, run_episode, EpisodeShape};
use crate::env::BallInCup;
use crate::error::{Error, Result};
use crate::gated::{GatedParams, Model, ParamStore, TaskSpec};
use crate::learner::{Learner, LearnerMetrics, MetricsWriter};
use crate::replay::{EpisodeLogWriter, ReplayBuffer, SharedReplay, Trajectory};

pub const CURVE_HEADER: &str = "episode,task,eval_return,catch,first_catch_step,learner_steps,seed";

/// One evaluation result on the learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    /// Training episodes completed before this evaluation, from 1.
    pub episode: u64,
    pub task: usize,
    pub eval_return: f64,
    pub catch: bool,
    pub first_catch_step: Option<usize>,
    pub learner_steps: u64,
    pub seed: u64,
    /// Seconds since the run started; logged, not written to the CSV so that
    /// deterministic runs produce identical files.
    pub wall_clock: f64,
}

impl CurvePoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.episode,
            self.task,
            self.eval_return,
            u8::from(self.catch),
            self.first_catch_step.map_or(-1, |s| s as i64),
            self.learner_steps,
            self.seed
        )
    }
}

/// Files written for one seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub curve: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub episode_log: Option<PathBuf>,
}

impl RunPaths {
    pub fn new(dir: &Path, seed: u64, episode_log: bool) -> Self {
        Self {
            curve: dir.join(format!("curve_seed{seed}.csv")),
            metrics: dir.join(format!("metrics_seed{seed}.csv")),
            checkpoint: dir.join(format!("checkpoint_seed{seed}.ckpt")),
            episode_log: episode_log.then(|| dir.join(format!("episodes_seed{seed}.jsonl"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
    pub learner_steps: u64,
    pub env_steps: u64,
    pub paths: RunPaths,
    pub store: ParamStore,
}

/// Independent random streams of one seed.
struct Streams {
    init: ChaCha8Rng,
    actor: ChaCha8Rng,
    eval: ChaCha8Rng,
    learner_seed: u64,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self {
            init: stream(1),
            actor: stream(2),
            eval: stream(3),
            learner_seed: stream(4).next_u64(),
        }
    }
}

/// Runs every seed of `cfg` in turn, writing outputs under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    if let Err((key, msg)) = cfg.validate() {
        return Err(Error::InvalidConfig(format!("{key}: {msg}")));
    }
    let (_, tasks) = build_model(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml()?)?;
    let mut f = BufWriter::new(File::create(cfg.output_dir.join("tasks.csv"))?);
    writeln!(f, "task,label,reward,policy_filter,critic_filter")?;
    for t in &tasks {
        writeln!(
            f,
            "{},{},{},{},{}",
            t.task_id,
            t.label(),
            t.reward_id,
            t.policy_filter,
            t.critic_filter
        )?;
    }
    f.flush()?;
    cfg.seeds.iter().map(|&s| run_seed(cfg, s)).collect()
}

/// Runs one seed. Config errors are reported before any compute.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    if let Err((key, msg)) = cfg.validate() {
        return Err(Error::InvalidConfig(format!("{key}: {msg}")));
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let (model, tasks) = build_model(cfg)?;
    let mut streams = Streams::new(seed);
    let store = model.init_store(&mut streams.init);
    let learner = Learner::new(
        &model,
        &store,
        tasks.clone(),
        cfg.learner.clone(),
        cfg.env.scaling.clone(),
        streams.learner_seed,
    )?;
    let replay = ReplayBuffer::new(cfg.replay, tasks.len(), crate::env::ACTION_DIM)?;
    let paths = RunPaths::new(&cfg.output_dir, seed, cfg.episode_log);
    let mut out = Outputs::create(&paths, tasks.len())?;
    let ctx = Context {
        cfg,
        seed,
        model: &model,
        tasks: &tasks,
        eval_tasks: tasks.iter().filter(|t| t.reward_id == 5).cloned().collect(),
        shape: EpisodeShape {
            length: cfg.episode_length,
            switch_period: cfg.switch_period,
        },
        started: Instant::now(),
    };
    let run = match cfg.mode {
        ExecutionMode::Deterministic => {
            run_deterministic(&ctx, store, learner, replay, streams, &mut out)?
        }
        ExecutionMode::Concurrent => {
            run_concurrent(&ctx, store, learner, replay, streams, &mut out)?
        }
    };
    out.finish()?;
    Checkpoint {
        config: cfg.clone(),
        seed,
        episodes: cfg.episodes as u64,
        learner_steps: run.learner_steps,
        store: run.store.clone(),
    }
    .save(&paths.checkpoint)?;
    log::info!(
        "seed {seed}: {} episodes, {} env steps, {} learner steps in {:.1}s",
        cfg.episodes,
        run.env_steps,
        run.learner_steps,
        ctx.started.elapsed().as_secs_f64()
    );
    Ok(SeedRun {
        seed,
        curve: run.curve,
        learner_steps: run.learner_steps,
        env_steps: run.env_steps,
        paths,
        store: run.store,
    })
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    model: &'a Model,
    tasks: &'a [TaskSpec],
    eval_tasks: Vec<TaskSpec>,
    shape: EpisodeShape,
    started: Instant,
}

impl Context<'_> {
    fn collect(
        &self,
        env: &mut BallInCup,
        actor: &GatedParams,
        episode: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Trajectory>> {
        run_episode(
            env,
            self.model,
            actor,
            self.tasks,
            &self.cfg.env.scaling,
            self.shape,
            episode,
            rng,
        )
    }

    /// Evaluates every catch task if `episode` (1-based) is due.
    fn evaluate(
        &self,
        env: &mut BallInCup,
        actor: &GatedParams,
        episode: u64,
        learner_steps: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<CurvePoint>> {
        if !episode.is_multiple_of(self.cfg.eval_every as u64) {
            return Ok(Vec::new());
        }
        let mut points = Vec::with_capacity(self.eval_tasks.len());
        for task in &self.eval_tasks {
            let e = evaluate(
                env,
                self.model,
                actor,
                task,
                &self.cfg.env.scaling,
                self.cfg.episode_length,
                1,
                rng,
            )?[0];
            let p = CurvePoint {
                episode,
                task: task.task_id,
                eval_return: e.eval_return,
                catch: e.catch,
                first_catch_step: e.first_catch_step,
                learner_steps,
                seed: self.seed,
                wall_clock: self.started.elapsed().as_secs_f64(),
            };
            log::info!(
                "seed {} episode {episode} task {}: return {:.1}, catch {}, {learner_steps} learner steps, {:.1}s",
                self.seed,
                task.label(),
                p.eval_return,
                p.catch,
                p.wall_clock
            );
            points.push(p);
        }
        Ok(points)
    }

    fn checkpoint_due(&self, episode: u64) -> bool {
        self.cfg.checkpoint_every > 0
            && episode.is_multiple_of(self.cfg.checkpoint_every as u64)
            && episode < self.cfg.episodes as u64
    }

    fn save_checkpoint(
        &self,
        path: &Path,
        store: &ParamStore,
        episode: u64,
        learner_steps: u64,
    ) -> Result<()> {
        Checkpoint {
            config: self.cfg.clone(),
            seed: self.seed,
            episodes: episode,
            learner_steps,
            store: store.clone(),
        }
        .save(path)
    }
}

struct Outputs {
    curve: BufWriter<File>,
    metrics: MetricsWriter<BufWriter<File>>,
    log: Option<EpisodeLogWriter<BufWriter<File>>>,
    checkpoint: PathBuf,
}

impl Outputs {
    fn create(paths: &RunPaths, num_tasks: usize) -> Result<Self> {
        let mut curve = BufWriter::new(File::create(&paths.curve)?);
        writeln!(curve, "{CURVE_HEADER}")?;
        let metrics = MetricsWriter::new(BufWriter::new(File::create(&paths.metrics)?), true)?;
        let log = match &paths.episode_log {
            Some(p) => Some(EpisodeLogWriter::new(
                BufWriter::new(File::create(p)?),
                num_tasks,
            )?),
            None => None,
        };
        Ok(Self {
            curve,
            metrics,
            log,
            checkpoint: paths.checkpoint.clone(),
        })
    }

    fn points(&mut self, points: &[CurvePoint]) -> Result<()> {
        for p in points {
            writeln!(self.curve, "{}", p.csv_row())?;
        }
        self.curve.flush()?;
        Ok(())
    }

    fn trajectory(&mut self, t: &Trajectory) -> Result<()> {
        if let Some(log) = &mut self.log {
            log.write_trajectory(t)?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.curve.flush()?;
        self.metrics.flush()?;
        if let Some(log) = &mut self.log {
            log.flush()?;
        }
        Ok(())
    }
}

struct RunResult {
    curve: Vec<CurvePoint>,
    learner_steps: u64,
    env_steps: u64,
    store: ParamStore,
}

fn record_metrics(out: &mut MetricsWriter<BufWriter<File>>, m: &LearnerMetrics) -> Result<()> {
    if !m.is_finite() {
        log::warn!("learner step {}: non-finite loss or gradient norm", m.step);
    }
    out.write(m)
}

/// Learner steps owed after `env_steps` environment steps.
fn credit(cfg: &ExperimentConfig, env_steps: u64) -> u64 {
    (cfg.learner_steps_per_env_step * env_steps as f64).floor() as u64
}

/// One thread: an episode with the current parameters, then the learner
/// steps it earned. Steps that find too little data in replay are forfeited.
fn run_deterministic(
    ctx: &Context<'_>,
    mut store: ParamStore,
    mut learner: Learner,
    mut replay: ReplayBuffer,
    mut streams: Streams,
    out: &mut Outputs,
) -> Result<RunResult> {
    let mut env = BallInCup::new(ctx.cfg.env.clone())?;
    let mut eval_env = BallInCup::new(ctx.cfg.env.clone())?;
    let mut curve = Vec::new();
    let (mut env_steps, mut attempted) = (0u64, 0u64);
    for ep in 1..=ctx.cfg.episodes as u64 {
        if let Some(traj) = ctx.collect(&mut env, &store.actor, ep - 1, &mut streams.actor)? {
            env_steps += traj.len() as u64;
            out.trajectory(&traj)?;
            replay.append(traj)?;
        }
        while attempted < credit(ctx.cfg, env_steps) {
            attempted += 1;
            if let Some(m) = learner.step(ctx.model, &mut store, &mut replay)? {
                record_metrics(&mut out.metrics, &m)?;
            }
        }
        let points = ctx.evaluate(
            &mut eval_env,
            &store.actor,
            ep,
            learner.steps(),
            &mut streams.eval,
        )?;
        out.points(&points)?;
        curve.extend(points);
        if ctx.checkpoint_due(ep) {
            ctx.save_checkpoint(&out.checkpoint, &store, ep, learner.steps())?;
        }
    }
    Ok(RunResult {
        curve,
        learner_steps: learner.steps(),
        env_steps,
        store,
    })
}

#[derive(Default)]
struct Progress {
    /// Learner steps earned by the actor so far.
    credited: u64,
    /// Learner steps attempted, including forfeited ones.
    consumed: u64,
    /// Successful learner steps.
    steps: u64,
    actor_done: bool,
    failed: bool,
}

/// Actor on this thread, learner on another. The actor acts with the most
/// recently published policy snapshot and runs at most one episode ahead of
/// the learner's earned steps.
fn run_concurrent(
    ctx: &Context<'_>,
    store: ParamStore,
    mut learner: Learner,
    replay: ReplayBuffer,
    mut streams: Streams,
    out: &mut Outputs,
) -> Result<RunResult> {
    let replay = SharedReplay::new(replay);
    let published = RwLock::new(Arc::new(store.actor.clone()));
    let progress = (Mutex::new(Progress::default()), Condvar::new());
    let Outputs {
        curve: curve_out,
        metrics,
        log,
        ..
    } = out;

    std::thread::scope(|scope| {
        let learner_thread = scope.spawn(|| -> Result<ParamStore> {
            let mut store = store;
            let (lock, cv) = &progress;
            let result = (|| -> Result<()> {
                loop {
                    {
                        let mut p = lock.lock().expect("progress lock");
                        while p.consumed >= p.credited && !p.actor_done {
                            p = cv.wait(p).expect("progress lock");
                        }
                        if p.consumed >= p.credited {
                            return Ok(());
                        }
                    }
                    let m = learner.step_shared(ctx.model, &mut store, &replay)?;
                    if let Some(m) = &m {
                        record_metrics(metrics, m)?;
                        *published.write().expect("snapshot lock") = Arc::new(store.actor.clone());
                    }
                    let mut p = lock.lock().expect("progress lock");
                    p.consumed += 1;
                    p.steps = learner.steps();
                    cv.notify_all();
                }
            })();
            if result.is_err() {
                lock.lock().expect("progress lock").failed = true;
                cv.notify_all();
            }
            result.map(|()| store)
        });

        let actor_result = (|| -> Result<(Vec<CurvePoint>, u64)> {
            let mut env = BallInCup::new(ctx.cfg.env.clone())?;
            let mut eval_env = BallInCup::new(ctx.cfg.env.clone())?;
            let (lock, cv) = &progress;
            let mut curve = Vec::new();
            let mut env_steps = 0u64;
            for ep in 1..=ctx.cfg.episodes as u64 {
                let actor = published.read().expect("snapshot lock").clone();
                let traj = ctx.collect(&mut env, &actor, ep - 1, &mut streams.actor)?;
                let steps = {
                    let mut p = lock.lock().expect("progress lock");
                    // Wait for the previous episode's credit to be consumed.
                    while p.consumed < p.credited && !p.failed {
                        p = cv.wait(p).expect("progress lock");
                    }
                    if p.failed {
                        return Err(Error::InvalidConfig(
                            "stopped: the learner thread failed".into(),
                        ));
                    }
                    p.steps
                };
                if let Some(traj) = traj {
                    env_steps += traj.len() as u64;
                    if let Some(log) = log.as_mut() {
                        log.write_trajectory(&traj)?;
                    }
                    replay.append(traj)?;
                }
                {
                    let mut p = lock.lock().expect("progress lock");
                    p.credited = credit(ctx.cfg, env_steps);
                    cv.notify_all();
                }
                let actor = published.read().expect("snapshot lock").clone();
                let points = ctx.evaluate(&mut eval_env, &actor, ep, steps, &mut streams.eval)?;
                for p in &points {
                    writeln!(curve_out, "{}", p.csv_row())?;
                }
                curve_out.flush()?;
                curve.extend(points);
            }
            Ok((curve, env_steps))
        })();

        {
            let mut p = progress.0.lock().expect("progress lock");
            p.actor_done = true;
            progress.1.notify_all();
        }
        // A learner failure also stops the actor; report the root cause.
        let store = learner_thread.join().expect("learner thread panicked")?;
        let (curve, env_steps) = actor_result?;
        let learner_steps = progress.0.lock().expect("progress lock").steps;
        Ok(RunResult {
            curve,
            learner_steps,
            env_steps,
            store,
        })
    })
}
