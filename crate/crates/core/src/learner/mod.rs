//! Retrace policy evaluation and entropy-regularised policy improvement.

pub mod losses;
pub mod retrace;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use losses::{
    compute_targets, critic_loss, policy_loss, policy_loss_with_noise, policy_noise,
    reparam_gradient, CriticLoss, PolicyLoss, SnippetBatch, Targets,
};
pub use retrace::{
    retrace_batch, retrace_targets, trace_coefficient, RetraceConfig, RetraceInputs, TraceMode,
};

use crate::env::ObservationScaling;
use crate::error::{Error, Result};
use crate::gated::{check_tasks, Model, ParamStore, TaskSpec, TARGET_SYNC_PERIOD};
use crate::nn::{AdamConfig, AdamState, ParamTree};
use crate::replay::{ReplayBuffer, SharedReplay, Snippet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub retrace: RetraceConfig,
    pub adam: AdamConfig,
    pub target_sync_period: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            retrace: RetraceConfig::default(),
            adam: AdamConfig::default(),
            target_sync_period: TARGET_SYNC_PERIOD,
        }
    }
}

/// Diagnostics of one learner step.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerMetrics {
    /// Optimiser step counter after this step.
    pub step: u64,
    pub critic_loss: Vec<f64>,
    pub policy_objective: Vec<f64>,
    pub entropy: Vec<f64>,
    pub critic_grad_norm: f64,
    pub actor_grad_norm: f64,
    pub skipped_windows: usize,
    /// Whether the optimiser rejected a non-finite gradient.
    pub critic_update_skipped: bool,
    pub actor_update_skipped: bool,
    pub synced: bool,
}

impl LearnerMetrics {
    pub fn is_finite(&self) -> bool {
        self.critic_loss
            .iter()
            .chain(&self.policy_objective)
            .chain(&self.entropy)
            .all(|x| x.is_finite())
            && self.critic_grad_norm.is_finite()
            && self.actor_grad_norm.is_finite()
    }

    pub fn grad_norm(&self) -> f64 {
        self.critic_grad_norm.hypot(self.actor_grad_norm)
    }
}

/// Single learner owning the optimiser state. Parameters live in a
/// [`ParamStore`] passed to each step.
#[derive(Debug, Clone)]
pub struct Learner {
    tasks: Vec<TaskSpec>,
    cfg: LearnerConfig,
    scaling: ObservationScaling,
    actor_opt: AdamState,
    critic_opt: AdamState,
    steps: u64,
    rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(
        model: &Model,
        store: &ParamStore,
        tasks: Vec<TaskSpec>,
        cfg: LearnerConfig,
        scaling: ObservationScaling,
        seed: u64,
    ) -> Result<Self> {
        cfg.retrace.validate().map_err(Error::InvalidConfig)?;
        check_tasks(&tasks, model.num_tasks())?;
        if tasks.len() != model.num_tasks() {
            return Err(Error::InvalidConfig(format!(
                "{} tasks for a model with {} heads",
                tasks.len(),
                model.num_tasks()
            )));
        }
        Ok(Self {
            actor_opt: AdamState::new(&store.actor, cfg.adam),
            critic_opt: AdamState::new(&store.critic, cfg.adam),
            tasks,
            cfg,
            scaling,
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    /// One optimisation step. Returns `Ok(None)` when the buffer cannot yet
    /// serve a batch (nothing changes then).
    pub fn step(
        &mut self,
        model: &Model,
        store: &mut ParamStore,
        replay: &mut ReplayBuffer,
    ) -> Result<Option<LearnerMetrics>> {
        let batch_size = replay.config().batch_size;
        let snippets = match replay.sample_snippets(batch_size, &mut self.rng) {
            Ok(s) => s,
            Err(Error::InsufficientData { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        self.step_on_snippets(model, store, &snippets).map(Some)
    }

    /// As [`Learner::step`], holding the replay lock only while sampling.
    pub fn step_shared(
        &mut self,
        model: &Model,
        store: &mut ParamStore,
        replay: &SharedReplay,
    ) -> Result<Option<LearnerMetrics>> {
        let snippets = {
            let mut buf = replay.lock();
            let batch_size = buf.config().batch_size;
            match buf.sample_snippets(batch_size, &mut self.rng) {
                Ok(s) => s,
                Err(Error::InsufficientData { .. }) => return Ok(None),
                Err(e) => return Err(e),
            }
        };
        self.step_on_snippets(model, store, &snippets).map(Some)
    }

    fn step_on_snippets(
        &mut self,
        model: &Model,
        store: &mut ParamStore,
        snippets: &[Snippet],
    ) -> Result<LearnerMetrics> {
        let groups = Model::policy_groups(&self.tasks).union(Model::critic_groups(&self.tasks));
        let batch = SnippetBatch::new(snippets, &self.scaling, groups, self.tasks.len())?;
        self.step_on_batch(model, store, &batch)
    }

    pub fn step_on_batch(
        &mut self,
        model: &Model,
        store: &mut ParamStore,
        batch: &SnippetBatch,
    ) -> Result<LearnerMetrics> {
        let targets = compute_targets(
            model,
            store,
            &self.tasks,
            batch,
            &self.cfg.retrace,
            &mut self.rng,
        )?;
        let critic = critic_loss(model, &store.critic, &self.tasks, batch, &targets)?;
        let policy = policy_loss(
            model,
            &store.actor,
            &store.critic,
            &self.tasks,
            batch,
            self.cfg.retrace.entropy_weight,
            &mut self.rng,
        )?;
        let critic_grad_norm = critic
            .grads
            .tensors()
            .iter()
            .map(|t| t.sq_norm())
            .sum::<f64>()
            .sqrt();
        let actor_grad_norm = policy
            .grads
            .tensors()
            .iter()
            .map(|t| t.sq_norm())
            .sum::<f64>()
            .sqrt();
        let critic_ok = self.critic_opt.step(&mut store.critic, &critic.grads)?;
        let actor_ok = self.actor_opt.step(&mut store.actor, &policy.grads)?;
        self.steps += 1;
        let synced = store.sync_targets(self.steps, self.cfg.target_sync_period);
        if critic.skipped > 0 {
            log::warn!(
                "step {}: {} windows with non-finite targets skipped",
                self.steps,
                critic.skipped
            );
        }
        Ok(LearnerMetrics {
            step: self.steps,
            critic_loss: critic.per_task,
            policy_objective: policy.per_task,
            entropy: policy.entropy,
            critic_grad_norm,
            actor_grad_norm,
            skipped_windows: critic.skipped,
            critic_update_skipped: !critic_ok,
            actor_update_skipped: !actor_ok,
            synced,
        })
    }
}

pub const METRICS_HEADER: &str = "step,task,critic_loss,policy_objective,entropy,grad_norm";

/// Append-only metrics CSV, one row per task and learner step. `grad_norm`
/// is the joint norm of that step's critic and actor gradients.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W, write_header: bool) -> Result<Self> {
        if write_header {
            writeln!(out, "{METRICS_HEADER}")?;
        }
        Ok(Self { out })
    }

    pub fn write(&mut self, m: &LearnerMetrics) -> Result<()> {
        for t in 0..m.critic_loss.len() {
            writeln!(
                self.out,
                "{},{},{},{},{},{}",
                m.step,
                t,
                m.critic_loss[t],
                m.policy_objective[t],
                m.entropy[t],
                m.grad_norm()
            )?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        Ok(self.out.flush()?)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
