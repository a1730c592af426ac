use std::io::{Read, Write};

use rand::Rng;

use super::filter::{FilterVector, TaskSpec};
use super::network::{
    EmbeddingGrads, Encoded, GatedNet, GatedParams, InputShapes, NetworkConfig, ObsBatch, Role,
};
use super::policy::{log_prob_parts, GaussianPolicyParams, VarianceBounds};
use crate::env::{Observation, ObservationScaling};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_tensors, write_tensors, FormatError};
use crate::nn::{ParamTree, Tape, Tensor};

/// Trunk and head tapes of one task's pass over a shared [`Encoded`] batch.
#[derive(Debug, Clone)]
pub struct TaskTape {
    task_id: usize,
    filter: FilterVector,
    trunk: Tape,
    head: Tape,
}

/// Policy outputs for a batch of states.
#[derive(Debug, Clone)]
pub struct GaussianBatch {
    /// `[batch, action_dim]`, in `(-1, 1)`.
    pub mean: Tensor,
    /// `[batch, action_dim]`, squared values in the variance bounds.
    pub std: Tensor,
    raw: Tensor,
}

impl GaussianBatch {
    pub fn len(&self) -> usize {
        self.mean.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> GaussianPolicyParams {
        GaussianPolicyParams {
            mean: self.mean.row(i).to_vec(),
            std: self.std.row(i).to_vec(),
        }
    }

    pub fn log_prob(&self, i: usize, action: &[f64]) -> f64 {
        log_prob_parts(self.mean.row(i), self.std.row(i), action)
    }

    /// Reparameterised actions `mean + std * noise` for a `[batch, dim]` noise tensor.
    pub fn sample(&self, noise: &Tensor) -> Tensor {
        let mut a = self.mean.clone();
        for ((a, s), e) in a
            .data_mut()
            .iter_mut()
            .zip(self.std.data())
            .zip(noise.data())
        {
            *a += s * e;
        }
        a
    }
}

/// Gated Gaussian policy.
#[derive(Debug, Clone)]
pub struct Actor {
    pub net: GatedNet,
    pub variance: VarianceBounds,
}

impl Actor {
    /// Turns raw head outputs `[batch, 2 * dim]` into mean (tanh) and std.
    pub fn gaussian(&self, raw: Tensor) -> GaussianBatch {
        let b = raw.batch();
        let d = self.net.action_dim();
        let mut mean = Vec::with_capacity(b * d);
        let mut std = Vec::with_capacity(b * d);
        for i in 0..b {
            let row = raw.row(i);
            mean.extend(row[..d].iter().map(|x| x.tanh()));
            std.extend(row[d..].iter().map(|&x| self.variance.std(x)));
        }
        GaussianBatch {
            mean: Tensor::new(vec![b, d], mean).expect("non-empty batch"),
            std: Tensor::new(vec![b, d], std).expect("non-empty batch"),
            raw,
        }
    }

    /// Chain rule from mean/std gradients back to the raw head output.
    pub fn gaussian_backward(&self, g: &GaussianBatch, d_mean: &Tensor, d_std: &Tensor) -> Tensor {
        let b = g.len();
        let d = self.net.action_dim();
        let mut out = Tensor::zeros(&[b, 2 * d]);
        for i in 0..b {
            let (m, s, raw) = (g.mean.row(i), g.std.row(i), g.raw.row(i));
            let (dm, ds) = (d_mean.row(i), d_std.row(i));
            let o = out.row_mut(i);
            for k in 0..d {
                o[k] = dm[k] * (1.0 - m[k] * m[k]);
                o[d + k] = ds[k] * self.variance.std_derivative(raw[d + k], s[k]);
            }
        }
        out
    }

    /// Policy for every state of `obs`, no tape.
    pub fn forward(
        &self,
        params: &GatedParams,
        obs: &ObsBatch,
        task: &TaskSpec,
    ) -> Result<GaussianBatch> {
        let enc = self.net.encode(params, obs, task.policy_filter, false)?;
        let h = self.net.trunk_predict(
            params,
            &self.net.trunk_input(&enc, task.policy_filter, None)?,
        )?;
        Ok(self.gaussian(self.net.head_predict(params, task.task_id, &h)?))
    }

    /// Recorded pass of one task over already encoded states.
    pub fn forward_task(
        &self,
        params: &GatedParams,
        enc: &Encoded,
        task: &TaskSpec,
    ) -> Result<(GaussianBatch, TaskTape)> {
        let input = self.net.trunk_input(enc, task.policy_filter, None)?;
        let (h, trunk) = self.net.trunk_forward(params, &input)?;
        let (raw, head) = self.net.head_forward(params, task.task_id, &h)?;
        let tape = TaskTape {
            task_id: task.task_id,
            filter: task.policy_filter,
            trunk,
            head,
        };
        Ok((self.gaussian(raw), tape))
    }

    /// Adds head and trunk gradients into `acc` and the merged-embedding
    /// gradient into `emb` (enabled groups only).
    #[allow(clippy::too_many_arguments)]
    pub fn backward_task(
        &self,
        params: &GatedParams,
        tape: &TaskTape,
        g: &GaussianBatch,
        d_mean: &Tensor,
        d_std: &Tensor,
        emb: &mut EmbeddingGrads,
        acc: &mut GatedParams,
    ) -> Result<()> {
        let d_raw = self.gaussian_backward(g, d_mean, d_std);
        let d_h = self
            .net
            .head_backward(params, tape.task_id, &tape.head, &d_raw, acc)?;
        let d_in = self.net.trunk_backward(params, &tape.trunk, &d_h, acc)?;
        emb.add(tape.filter, &d_in)
    }

    /// Full vector-Jacobian product for one task: parameter gradients of
    /// `Σ d_mean·mean + d_std·std`.
    pub fn vjp(
        &self,
        params: &GatedParams,
        obs: &ObsBatch,
        task: &TaskSpec,
        d_mean: &Tensor,
        d_std: &Tensor,
    ) -> Result<GatedParams> {
        let enc = self.net.encode(params, obs, task.policy_filter, true)?;
        let (g, tape) = self.forward_task(params, &enc, task)?;
        let mut acc = params.zeros_like();
        let mut emb = EmbeddingGrads::default();
        self.backward_task(params, &tape, &g, d_mean, d_std, &mut emb, &mut acc)?;
        self.net.encode_backward(params, &enc, &emb, &mut acc)?;
        Ok(acc)
    }

    /// Policy at a single observation.
    pub fn policy(
        &self,
        params: &GatedParams,
        obs: &Observation,
        task: &TaskSpec,
        scaling: &ObservationScaling,
    ) -> Result<GaussianPolicyParams> {
        let batch = ObsBatch::from_observations([obs], scaling, task.policy_filter)?;
        Ok(self.forward(params, &batch, task)?.row(0))
    }
}

/// Gated action-value function.
#[derive(Debug, Clone)]
pub struct Critic {
    pub net: GatedNet,
}

impl Critic {
    /// Q values `[batch]` for `actions` of shape `[batch, dim]`, no tape.
    pub fn forward(
        &self,
        params: &GatedParams,
        obs: &ObsBatch,
        actions: &Tensor,
        task: &TaskSpec,
    ) -> Result<Vec<f64>> {
        let enc = self.net.encode(params, obs, task.critic_filter, false)?;
        let input = self
            .net
            .trunk_input(&enc, task.critic_filter, Some(actions))?;
        let h = self.net.trunk_predict(params, &input)?;
        Ok(self.net.head_predict(params, task.task_id, &h)?.into_data())
    }

    /// Recorded pass of one task; returns Q values `[batch, 1]`.
    pub fn forward_task(
        &self,
        params: &GatedParams,
        enc: &Encoded,
        actions: &Tensor,
        task: &TaskSpec,
    ) -> Result<(Tensor, TaskTape)> {
        let input = self
            .net
            .trunk_input(enc, task.critic_filter, Some(actions))?;
        let (h, trunk) = self.net.trunk_forward(params, &input)?;
        let (q, head) = self.net.head_forward(params, task.task_id, &h)?;
        let tape = TaskTape {
            task_id: task.task_id,
            filter: task.critic_filter,
            trunk,
            head,
        };
        Ok((q, tape))
    }

    /// Adds parameter gradients into `acc` and embedding gradients into
    /// `emb`; returns the gradient with respect to the actions.
    pub fn backward_task(
        &self,
        params: &GatedParams,
        tape: &TaskTape,
        d_q: &Tensor,
        emb: &mut EmbeddingGrads,
        acc: &mut GatedParams,
    ) -> Result<Tensor> {
        let d_h = self
            .net
            .head_backward(params, tape.task_id, &tape.head, d_q, acc)?;
        let d_in = self.net.trunk_backward(params, &tape.trunk, &d_h, acc)?;
        let (d_merged, d_action) = self.net.split_trunk_grad(d_in)?;
        emb.add(tape.filter, &d_merged)?;
        Ok(d_action.expect("critic trunk takes an action"))
    }

    /// Parameter and action gradients of `Σ d_q·Q` for one task.
    pub fn vjp(
        &self,
        params: &GatedParams,
        obs: &ObsBatch,
        actions: &Tensor,
        task: &TaskSpec,
        d_q: &Tensor,
    ) -> Result<(GatedParams, Tensor)> {
        let enc = self.net.encode(params, obs, task.critic_filter, true)?;
        let (_, tape) = self.forward_task(params, &enc, actions, task)?;
        let mut acc = params.zeros_like();
        let mut emb = EmbeddingGrads::default();
        let d_a = self.backward_task(params, &tape, d_q, &mut emb, &mut acc)?;
        self.net.encode_backward(params, &enc, &emb, &mut acc)?;
        Ok((acc, d_a))
    }

    pub fn value(
        &self,
        params: &GatedParams,
        obs: &Observation,
        action: &[f64],
        task: &TaskSpec,
        scaling: &ObservationScaling,
    ) -> Result<f64> {
        let batch = ObsBatch::from_observations([obs], scaling, task.critic_filter)?;
        let a = Tensor::new(vec![1, action.len()], action.to_vec())?;
        Ok(self.forward(params, &batch, &a, task)?[0])
    }
}

/// Actor and critic architectures for a fixed task count.
#[derive(Debug, Clone)]
pub struct Model {
    pub actor: Actor,
    pub critic: Critic,
    pub config: NetworkConfig,
}

impl Model {
    pub fn new(
        config: &NetworkConfig,
        inputs: InputShapes,
        action_dim: usize,
        num_tasks: usize,
    ) -> Result<Self> {
        Ok(Self {
            actor: Actor {
                net: GatedNet::new(Role::Actor, config, inputs, action_dim, num_tasks)?,
                variance: config.variance,
            },
            critic: Critic {
                net: GatedNet::new(Role::Critic, config, inputs, action_dim, num_tasks)?,
            },
            config: config.clone(),
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.actor.net.num_tasks()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.net.action_dim()
    }

    /// Fresh online parameters with targets equal to them.
    pub fn init_store<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let actor = self.actor.net.init_params(rng);
        let critic = self.critic.net.init_params(rng);
        ParamStore {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        }
    }

    /// Groups needed to run every task's policy.
    pub fn policy_groups(tasks: &[TaskSpec]) -> FilterVector {
        tasks
            .iter()
            .fold(FilterVector::default(), |f, t| f.union(t.policy_filter))
    }

    /// Groups needed to run every task's critic.
    pub fn critic_groups(tasks: &[TaskSpec]) -> FilterVector {
        tasks
            .iter()
            .fold(FilterVector::default(), |f, t| f.union(t.critic_filter))
    }
}

/// Online and target copies of all learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub actor: GatedParams,
    pub critic: GatedParams,
    pub target_actor: GatedParams,
    pub target_critic: GatedParams,
}

impl ParamStore {
    /// Copies online into target parameters when `counter` is a positive
    /// multiple of `period`; returns whether it did.
    pub fn sync_targets(&mut self, counter: u64, period: u64) -> bool {
        if period == 0 || counter == 0 || !counter.is_multiple_of(period) {
            return false;
        }
        self.target_actor.copy_from(&self.actor);
        self.target_critic.copy_from(&self.critic);
        log::debug!("target networks synced at step {counter}");
        true
    }

    fn all(&self) -> Vec<&Tensor> {
        let mut v = self.actor.tensors();
        v.extend(self.critic.tensors());
        v.extend(self.target_actor.tensors());
        v.extend(self.target_critic.tensors());
        v
    }

    /// Sum of all parameter values, a cheap change detector.
    pub fn checksum(&self) -> f64 {
        self.all().iter().map(|t| t.sum()).sum()
    }

    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_tensors(w, &self.all())
    }

    /// Reads values into a store of the same architecture as `self`.
    pub fn read_into<R: Read>(&mut self, r: R) -> Result<(), FormatError> {
        let tensors = read_tensors(r)?;
        let mut slots: Vec<&mut Tensor> = Vec::new();
        slots.extend(self.actor.tensors_mut());
        slots.extend(self.critic.tensors_mut());
        slots.extend(self.target_actor.tensors_mut());
        slots.extend(self.target_critic.tensors_mut());
        if slots.len() != tensors.len() {
            return Err(FormatError::Corrupt(format!(
                "expected {} tensors, found {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (i, (dst, src)) in slots.into_iter().zip(tensors).enumerate() {
            if dst.shape() != src.shape() {
                return Err(FormatError::Corrupt(format!(
                    "tensor {i}: expected shape {:?}, found {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            *dst = src;
        }
        Ok(())
    }
}

/// Validates a task list against a model: ids are `0..n` in order.
pub fn check_tasks(tasks: &[TaskSpec], num_tasks: usize) -> Result<()> {
    for (i, t) in tasks.iter().enumerate() {
        if t.task_id != i || i >= num_tasks {
            return Err(Error::UnknownTask {
                task_id: t.task_id,
                num_tasks,
            });
        }
        t.validate()?;
    }
    Ok(())
}
