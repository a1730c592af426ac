//! The actor loop and the evaluation protocol.

use rand::Rng;
use rand_distr::StandardNormal;

use super::schedule::schedule_intention;
use crate::env::{BallInCup, Observation, ObservationScaling, StepOutcome, ACTION_DIM};
use crate::error::{Error, Result};
use crate::gated::{log_prob, sample_action, GatedParams, Model, TaskSpec};
use crate::replay::{Trajectory, Transition};

/// Episode shape shared by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeShape {
    pub length: usize,
    pub switch_period: usize,
}

/// Runs one exploratory episode under uniformly scheduled intentions.
///
/// Every transition stores the unclipped sampled action, its log-density
/// under the executing intention and the reward of every task. A physics
/// abort ends the episode early with the last stored step marked terminal;
/// `None` means the abort happened before any step was stored.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<R: Rng + ?Sized>(
    env: &mut BallInCup,
    model: &Model,
    actor: &GatedParams,
    tasks: &[TaskSpec],
    scaling: &ObservationScaling,
    shape: EpisodeShape,
    episode: u64,
    rng: &mut R,
) -> Result<Option<Trajectory>> {
    let obs = env.reset(rng);
    rollout(
        obs,
        |a| env.step(a),
        model,
        actor,
        tasks,
        scaling,
        shape,
        episode,
        rng,
    )
}

#[allow(clippy::too_many_arguments)]
fn rollout<R, S>(
    mut obs: Observation,
    mut env_step: S,
    model: &Model,
    actor: &GatedParams,
    tasks: &[TaskSpec],
    scaling: &ObservationScaling,
    shape: EpisodeShape,
    episode: u64,
    rng: &mut R,
) -> Result<Option<Trajectory>>
where
    R: Rng + ?Sized,
    S: FnMut([f64; 2]) -> Result<StepOutcome>,
{
    let mut transitions = Vec::with_capacity(shape.length);
    let mut segment_starts = Vec::new();
    let mut intention = 0;
    for step in 0..shape.length {
        if step % shape.switch_period == 0 {
            intention = schedule_intention(tasks, rng);
            segment_starts.push(step);
        }
        let task = &tasks[intention];
        let policy = model.actor.policy(actor, &obs, task, scaling)?;
        if !policy.mean.iter().chain(&policy.std).all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "policy of task {} at episode {episode} step {step}",
                task.label()
            )));
        }
        let noise: Vec<f64> = (0..ACTION_DIM)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let action = sample_action(&policy, &noise);
        let behavior_log_prob = log_prob(&policy, &action);
        match env_step([action[0], action[1]]) {
            Ok(out) => {
                transitions.push(Transition {
                    obs,
                    action,
                    behavior_log_prob,
                    rewards: tasks.iter().map(|t| out.rewards.get(t.reward_id)).collect(),
                    executed_task: intention,
                    terminal: false,
                });
                obs = out.observation;
            }
            Err(Error::NonFinite(msg)) => {
                log::warn!("episode {episode} aborted at step {step}: {msg}");
                let Some(last) = transitions.last_mut() else {
                    return Ok(None);
                };
                last.terminal = true;
                segment_starts.retain(|&s| s < transitions.len());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Some(Trajectory {
        episode,
        transitions,
        final_obs: obs,
        segment_starts,
    }))
}

/// Outcome of one noise-free evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalEpisode {
    /// Sum of the task's reward over the episode.
    pub eval_return: f64,
    /// Whether the ball was in the cup at any step.
    pub catch: bool,
    pub first_catch_step: Option<usize>,
    pub steps: usize,
}

/// Runs `episodes` episodes of `task` acting with the policy mean. Touches
/// neither parameters nor replay.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<R: Rng + ?Sized>(
    env: &mut BallInCup,
    model: &Model,
    actor: &GatedParams,
    task: &TaskSpec,
    scaling: &ObservationScaling,
    length: usize,
    episodes: usize,
    rng: &mut R,
) -> Result<Vec<EvalEpisode>> {
    (0..episodes)
        .map(|_| {
            let first = env.reset(rng);
            evaluate_from(
                env,
                first,
                length,
                |obs| {
                    let p = model.actor.policy(actor, obs, task, scaling)?;
                    Ok([p.mean[0], p.mean[1]])
                },
                task.reward_id,
            )
        })
        .collect()
}

/// Evaluation loop with an arbitrary controller, starting from `obs`.
pub fn evaluate_from<F>(
    env: &mut BallInCup,
    mut obs: Observation,
    length: usize,
    mut act: F,
    reward_id: u8,
) -> Result<EvalEpisode>
where
    F: FnMut(&Observation) -> Result<[f64; 2]>,
{
    let mut out = EvalEpisode {
        eval_return: 0.0,
        catch: false,
        first_catch_step: None,
        steps: 0,
    };
    for step in 0..length {
        let action = act(&obs)?;
        let s = match env.step(action) {
            Ok(s) => s,
            Err(Error::NonFinite(msg)) => {
                log::warn!("evaluation aborted at step {step}: {msg}");
                break;
            }
            Err(e) => return Err(e),
        };
        out.eval_return += s.rewards.get(reward_id);
        if s.rewards.caught() && !out.catch {
            out.catch = true;
            out.first_catch_step = Some(step);
        }
        out.steps = step + 1;
        obs = s.observation;
    }
    Ok(out)
}
