use rand::Rng;
use rand_distr::StandardNormal;

use super::retrace::{retrace_batch, trace_coefficient, RetraceConfig};
use crate::env::ObservationScaling;
use crate::error::{Error, Result};
use crate::gated::{
    EmbeddingGrads, FilterVector, GatedParams, Model, ObsBatch, ParamStore, TaskSpec,
};
use crate::nn::Tensor;
use crate::replay::Snippet;

/// A batch of `B` snippets of length `L`, laid out for the networks.
#[derive(Debug, Clone)]
pub struct SnippetBatch {
    pub windows: usize,
    pub length: usize,
    /// States `s_{b,j}`, `j < L`, row `b * L + j`.
    pub current: ObsBatch,
    /// States `s_{b,j}`, `j <= L`, row `b * (L + 1) + j`.
    pub all: ObsBatch,
    /// `[B * L, action_dim]`.
    pub actions: Tensor,
    pub log_behavior: Vec<f64>,
    /// `rewards[t][b * L + j]`.
    pub rewards: Vec<Vec<f64>>,
    pub terminal: Vec<bool>,
}

impl SnippetBatch {
    pub fn new(
        snippets: &[Snippet],
        scaling: &ObservationScaling,
        groups: FilterVector,
        num_tasks: usize,
    ) -> Result<Self> {
        let windows = snippets.len();
        let length = snippets.first().map_or(0, Snippet::len);
        if windows == 0 || length == 0 || snippets.iter().any(|s| s.len() != length) {
            return Err(Error::InsufficientData { length });
        }
        let current = ObsBatch::from_observations(
            snippets.iter().flat_map(|s| s.steps.iter().map(|t| &t.obs)),
            scaling,
            groups,
        )?;
        let all = ObsBatch::from_observations(
            snippets.iter().flat_map(|s| {
                s.steps
                    .iter()
                    .map(|t| &t.obs)
                    .chain(std::iter::once(&s.bootstrap))
            }),
            scaling,
            groups,
        )?;
        let dim = snippets[0].steps[0].action.len();
        let mut actions = Vec::with_capacity(windows * length * dim);
        let mut log_behavior = Vec::with_capacity(windows * length);
        let mut rewards = vec![Vec::with_capacity(windows * length); num_tasks];
        for s in snippets {
            for t in &s.steps {
                if t.rewards.len() != num_tasks {
                    return Err(Error::shape(
                        "transition rewards",
                        &[num_tasks],
                        &[t.rewards.len()],
                    ));
                }
                actions.extend_from_slice(&t.action);
                log_behavior.push(t.behavior_log_prob);
                for (k, r) in t.rewards.iter().enumerate() {
                    rewards[k].push(*r);
                }
            }
        }
        Ok(Self {
            windows,
            length,
            current,
            all,
            actions: Tensor::new(vec![windows * length, dim], actions)?,
            log_behavior,
            rewards,
            terminal: snippets.iter().map(|s| s.terminal).collect(),
        })
    }

    fn rows(&self) -> usize {
        self.windows * self.length
    }

    /// Row of `s_{b,j}` in `all`.
    fn all_row(&self, b: usize, j: usize) -> usize {
        b * (self.length + 1) + j
    }
}

/// Retrace regression targets per task.
#[derive(Debug, Clone)]
pub struct Targets {
    /// `q_ret[t][b * L + j]`.
    pub q_ret: Vec<Vec<f64>>,
    /// Trace coefficients, same layout.
    pub c: Vec<Vec<f64>>,
    /// `valid[t][b]` is false when the window produced a non-finite target.
    pub valid: Vec<Vec<bool>>,
}

/// Computes retrace targets with the target actor and critic only.
pub fn compute_targets<R: Rng + ?Sized>(
    model: &Model,
    store: &ParamStore,
    tasks: &[TaskSpec],
    batch: &SnippetBatch,
    cfg: &RetraceConfig,
    rng: &mut R,
) -> Result<Targets> {
    let (b, l) = (batch.windows, batch.length);
    let n_all = b * (l + 1);
    let dim = model.action_dim();
    let actor_enc = model.actor.net.encode(
        &store.target_actor,
        &batch.all,
        Model::policy_groups(tasks),
        false,
    )?;
    let critic_enc = model.critic.net.encode(
        &store.target_critic,
        &batch.all,
        Model::critic_groups(tasks),
        false,
    )?;
    // Stored actions laid out on `all` rows; bootstrap rows get zeros and are unused.
    let mut stored = Tensor::zeros(&[n_all, dim]);
    for w in 0..b {
        for j in 0..l {
            stored
                .row_mut(batch.all_row(w, j))
                .copy_from_slice(batch.actions.row(w * l + j));
        }
    }

    let mut out = Targets {
        q_ret: Vec::with_capacity(tasks.len()),
        c: Vec::with_capacity(tasks.len()),
        valid: Vec::with_capacity(tasks.len()),
    };
    for task in tasks {
        let (pi, _) = model
            .actor
            .forward_task(&store.target_actor, &actor_enc, task)?;
        let (q_all, _) =
            model
                .critic
                .forward_task(&store.target_critic, &critic_enc, &stored, task)?;
        let mut v = vec![0.0; n_all];
        for _ in 0..cfg.expectation_samples {
            let noise = normal(rng, n_all, dim);
            let a = pi.sample(&noise);
            let (qs, _) = model
                .critic
                .forward_task(&store.target_critic, &critic_enc, &a, task)?;
            for (acc, q) in v.iter_mut().zip(qs.data()) {
                *acc += q / cfg.expectation_samples as f64;
            }
        }
        let mut q = Vec::with_capacity(b * l);
        let mut v_next = Vec::with_capacity(b * l);
        let mut c = Vec::with_capacity(b * l);
        for w in 0..b {
            for j in 0..l {
                let row = batch.all_row(w, j);
                q.push(q_all.data()[row]);
                v_next.push(v[row + 1]);
                let lp = pi.log_prob(row, batch.actions.row(w * l + j));
                c.push(trace_coefficient(lp, batch.log_behavior[w * l + j]));
            }
        }
        let terminal: Vec<bool> = batch
            .terminal
            .iter()
            .map(|&t| t || !cfg.bootstrap)
            .collect();
        let q_ret = retrace_batch(
            &batch.rewards[task.task_id],
            &q,
            &v_next,
            &c,
            &terminal,
            cfg.gamma,
            cfg.trace_mode,
        );
        let valid = (0..b)
            .map(|w| q_ret[w * l..(w + 1) * l].iter().all(|x| x.is_finite()))
            .collect();
        out.q_ret.push(q_ret);
        out.c.push(c);
        out.valid.push(valid);
    }
    Ok(out)
}

fn normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> Tensor {
    let data = (0..rows * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(vec![rows, dim], data).expect("non-empty")
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    /// Sum over tasks.
    pub total: f64,
    pub per_task: Vec<f64>,
    pub grads: GatedParams,
    /// Windows whose targets were not finite, summed over tasks.
    pub skipped: usize,
}

/// `Σ_T mean_{b,j} (Q̂_T(s, a) − Q^ret_T)²` and its gradient with respect to
/// the online critic. Windows with non-finite targets are left out.
pub fn critic_loss(
    model: &Model,
    critic: &GatedParams,
    tasks: &[TaskSpec],
    batch: &SnippetBatch,
    targets: &Targets,
) -> Result<CriticLoss> {
    let net = &model.critic.net;
    let enc = net.encode(critic, &batch.current, Model::critic_groups(tasks), true)?;
    let mut grads = critic.zeros_like();
    let mut emb = EmbeddingGrads::default();
    let mut per_task = Vec::with_capacity(tasks.len());
    let mut skipped = 0;
    let l = batch.length;
    for task in tasks {
        let (q, tape) = model
            .critic
            .forward_task(critic, &enc, &batch.actions, task)?;
        let q_ret = &targets.q_ret[task.task_id];
        let valid = &targets.valid[task.task_id];
        let used = valid.iter().filter(|&&v| v).count() * l;
        skipped += valid.len() - valid.iter().filter(|&&v| v).count();
        let mut d_q = Tensor::zeros(&[batch.rows(), 1]);
        let mut loss = 0.0;
        if used > 0 {
            for (i, (&qi, &ti)) in q.data().iter().zip(q_ret).enumerate() {
                if !valid[i / l] {
                    continue;
                }
                let e = qi - ti;
                loss += e * e / used as f64;
                d_q.data_mut()[i] = 2.0 * e / used as f64;
            }
            model
                .critic
                .backward_task(critic, &tape, &d_q, &mut emb, &mut grads)?;
        }
        per_task.push(loss);
    }
    net.encode_backward(critic, &enc, &emb, &mut grads)?;
    Ok(CriticLoss {
        total: per_task.iter().sum(),
        per_task,
        grads,
        skipped,
    })
}

#[derive(Debug, Clone)]
pub struct PolicyLoss {
    /// Sum over tasks of the objective to be maximised.
    pub objective: f64,
    pub per_task: Vec<f64>,
    /// Mean policy entropy per task.
    pub entropy: Vec<f64>,
    /// Gradient of the negated objective (a loss) with respect to the actor.
    pub grads: GatedParams,
}

/// Standard-normal noise for [`policy_loss_with_noise`], one tensor per task.
pub fn policy_noise<R: Rng + ?Sized>(
    rng: &mut R,
    tasks: usize,
    rows: usize,
    dim: usize,
) -> Vec<Tensor> {
    (0..tasks).map(|_| normal(rng, rows, dim)).collect()
}

/// `Σ_T mean_s [Q̂_T(s, a_θ) − α log π_T(a_θ | s)]`, `a_θ = μ + σ ε`, with the
/// critic held fixed.
pub fn policy_loss<R: Rng + ?Sized>(
    model: &Model,
    actor: &GatedParams,
    critic: &GatedParams,
    tasks: &[TaskSpec],
    batch: &SnippetBatch,
    alpha: f64,
    rng: &mut R,
) -> Result<PolicyLoss> {
    let noise = policy_noise(rng, tasks.len(), batch.rows(), model.action_dim());
    policy_loss_with_noise(model, actor, critic, tasks, &batch.current, alpha, &noise)
}

/// Gradient of `Q(μ + σε) − α log π(μ + σε)` with respect to `μ` and `σ`,
/// given `dQ/da`. Under the reparameterisation
/// `log π = Σ −ε²/2 − ln σ − ln √(2π)`, so only `ln σ` depends on the policy.
pub fn reparam_gradient(
    eps: &[f64],
    std: &[f64],
    dq_da: &[f64],
    alpha: f64,
) -> (Vec<f64>, Vec<f64>) {
    let d_mean = dq_da.to_vec();
    let d_std = dq_da
        .iter()
        .zip(eps)
        .zip(std)
        .map(|((g, e), s)| g * e + alpha / s)
        .collect();
    (d_mean, d_std)
}

pub fn policy_loss_with_noise(
    model: &Model,
    actor: &GatedParams,
    critic: &GatedParams,
    tasks: &[TaskSpec],
    states: &ObsBatch,
    alpha: f64,
    noise: &[Tensor],
) -> Result<PolicyLoss> {
    let n = states.len();
    let actor_enc = model
        .actor
        .net
        .encode(actor, states, Model::policy_groups(tasks), true)?;
    let critic_enc = model
        .critic
        .net
        .encode(critic, states, Model::critic_groups(tasks), false)?;
    let mut grads = actor.zeros_like();
    let mut emb = EmbeddingGrads::default();
    // Critic parameter gradients are a by-product of the action gradient and
    // are thrown away.
    let mut scratch = critic.zeros_like();
    let mut scratch_emb = EmbeddingGrads::default();
    let mut per_task = Vec::with_capacity(tasks.len());
    let mut entropy = Vec::with_capacity(tasks.len());
    for (task, eps) in tasks.iter().zip(noise) {
        let (pi, tape) = model.actor.forward_task(actor, &actor_enc, task)?;
        let a = pi.sample(eps);
        let (q, q_tape) = model.critic.forward_task(critic, &critic_enc, &a, task)?;
        let d_a = model.critic.backward_task(
            critic,
            &q_tape,
            &Tensor::filled(&[n, 1], 1.0),
            &mut scratch_emb,
            &mut scratch,
        )?;
        let mut objective = 0.0;
        let mut ent = 0.0;
        let mut d_mean = Tensor::zeros(pi.mean.shape());
        let mut d_std = Tensor::zeros(pi.std.shape());
        for i in 0..n {
            let row = pi.row(i);
            let lp = pi.log_prob(i, a.row(i));
            objective += (q.data()[i] - alpha * lp) / n as f64;
            ent += row.entropy() / n as f64;
            let (dm, ds) = reparam_gradient(eps.row(i), pi.std.row(i), d_a.row(i), alpha);
            for (dst, v) in d_mean.row_mut(i).iter_mut().zip(dm) {
                *dst = -v / n as f64;
            }
            for (dst, v) in d_std.row_mut(i).iter_mut().zip(ds) {
                *dst = -v / n as f64;
            }
        }
        model
            .actor
            .backward_task(actor, &tape, &pi, &d_mean, &d_std, &mut emb, &mut grads)?;
        per_task.push(objective);
        entropy.push(ent);
    }
    model
        .actor
        .net
        .encode_backward(actor, &actor_enc, &emb, &mut grads)?;
    Ok(PolicyLoss {
        objective: per_task.iter().sum(),
        per_task,
        entropy,
        grads,
    })
}
