use rand::Rng;
use serde::{Deserialize, Serialize};

use super::filter::{FilterVector, StateGroup};
use super::policy::VarianceBounds;
use crate::env::{Observation, ObservationScaling, FEATURES_DIM, FRAME_STACK, PROPRIO_DIM};
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, NetParams, Network, ParamTree, Tape, Tensor};

/// Layer sizes of the actor and critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Width of every actor group embedding.
    pub actor_embedding: usize,
    pub actor_layers: Vec<usize>,
    pub critic_embedding: usize,
    pub critic_layers: Vec<usize>,
    pub conv_channels: [usize; 2],
    pub conv_kernels: [usize; 2],
    pub conv_strides: [usize; 2],
    pub variance: VarianceBounds,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            actor_embedding: 100,
            actor_layers: vec![200, 200],
            critic_embedding: 200,
            critic_layers: vec![400, 400],
            conv_channels: [16, 16],
            conv_kernels: [4, 3],
            conv_strides: [2, 2],
            variance: VarianceBounds::default(),
        }
    }
}

impl NetworkConfig {
    /// A much smaller network with the same structure, for tests and quick runs.
    pub fn tiny() -> Self {
        Self {
            actor_embedding: 8,
            actor_layers: vec![16],
            critic_embedding: 8,
            critic_layers: vec![16],
            conv_channels: [4, 4],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.actor_embedding == 0 || self.critic_embedding == 0 {
            return Err("embedding widths must be positive".into());
        }
        if self
            .actor_layers
            .iter()
            .chain(&self.critic_layers)
            .any(|&w| w == 0)
        {
            return Err("hidden layer widths must be positive".into());
        }
        if self.conv_channels.contains(&0)
            || self.conv_kernels.contains(&0)
            || self.conv_strides.contains(&0)
        {
            return Err("conv channels, kernels and strides must be positive".into());
        }
        let v = self.variance;
        if !(v.min > 0.0 && v.min < v.max && v.max.is_finite()) {
            return Err(format!(
                "variance bounds must satisfy 0 < min < max, got [{}, {}]",
                v.min, v.max
            ));
        }
        Ok(())
    }
}

/// Per-sample input shapes of the three groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShapes {
    pub proprio: usize,
    pub features: usize,
    pub frames: usize,
    pub image_size: usize,
}

impl InputShapes {
    pub fn for_env(render_size: usize) -> Self {
        Self {
            proprio: PROPRIO_DIM,
            features: FEATURES_DIM,
            frames: FRAME_STACK,
            image_size: render_size,
        }
    }

    fn group(&self, g: StateGroup) -> Vec<usize> {
        match g {
            StateGroup::Proprio => vec![self.proprio],
            StateGroup::Features => vec![self.features],
            StateGroup::Image => vec![self.frames, self.image_size, self.image_size],
        }
    }
}

/// Network inputs for a batch of observations, one tensor per group.
/// Groups nobody asked for are left out.
#[derive(Debug, Clone)]
pub struct ObsBatch {
    groups: [Option<Tensor>; 3],
    len: usize,
}

impl ObsBatch {
    /// Scales vector groups with `scaling`; pixels are used as they are.
    pub fn from_observations<'a, I>(
        observations: I,
        scaling: &ObservationScaling,
        groups: FilterVector,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Observation>,
    {
        let mut proprio = Vec::new();
        let mut features = Vec::new();
        let mut pixels = Vec::new();
        let mut len = 0;
        let mut frame = None;
        for o in observations {
            len += 1;
            if groups.is_enabled(StateGroup::Proprio) {
                proprio.extend(scale(
                    &o.proprio,
                    &scaling.proprio_offset,
                    &scaling.proprio_scale,
                ));
            }
            if groups.is_enabled(StateGroup::Features) {
                features.extend(scale(
                    &o.features,
                    &scaling.features_offset,
                    &scaling.features_scale,
                ));
            }
            if groups.is_enabled(StateGroup::Image) {
                let size = o.frame_size();
                if *frame.get_or_insert(size) != size {
                    return Err(Error::shape(
                        "observation frames",
                        &[frame.unwrap()],
                        &[size],
                    ));
                }
                pixels.extend(o.pixels());
            }
        }
        if len == 0 {
            return Err(Error::shape("observation batch", &[1], &[0]));
        }
        let mut out = [None, None, None];
        if groups.is_enabled(StateGroup::Proprio) {
            out[0] = Some(Tensor::new(vec![len, PROPRIO_DIM], proprio)?);
        }
        if groups.is_enabled(StateGroup::Features) {
            out[1] = Some(Tensor::new(vec![len, FEATURES_DIM], features)?);
        }
        if let Some(s) = frame {
            out[2] = Some(Tensor::new(vec![len, FRAME_STACK, s, s], pixels)?);
        }
        Ok(Self { groups: out, len })
    }

    /// Wraps raw group tensors; all present tensors must share the batch size.
    pub fn from_tensors(groups: [Option<Tensor>; 3]) -> Result<Self> {
        let mut len = None;
        for t in groups.iter().flatten() {
            if *len.get_or_insert(t.batch()) != t.batch() {
                return Err(Error::shape(
                    "group batch sizes",
                    &[len.unwrap()],
                    &[t.batch()],
                ));
            }
        }
        let len = len.ok_or_else(|| Error::shape("observation batch", &[1], &[0]))?;
        Ok(Self { groups, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn group(&self, g: StateGroup) -> Option<&Tensor> {
        self.groups[g.index()].as_ref()
    }

    pub fn group_mut(&mut self, g: StateGroup) -> Option<&mut Tensor> {
        self.groups[g.index()].as_mut()
    }
}

fn scale<'a>(
    raw: &'a [f64; 8],
    offset: &'a [f64; 8],
    factor: &'a [f64; 8],
) -> impl Iterator<Item = f64> + 'a {
    raw.iter()
        .zip(offset)
        .zip(factor)
        .map(|((r, o), s)| (r - o) * s)
}

/// Parameters of one gated network: three group encoders, a shared trunk and
/// one output head per task.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedParams {
    pub encoders: [NetParams; 3],
    pub trunk: NetParams,
    pub heads: Vec<NetParams>,
}

impl GatedParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            encoders: self.encoders.clone().map(|e| e.zeros_like()),
            trunk: self.trunk.zeros_like(),
            heads: self.heads.iter().map(NetParams::zeros_like).collect(),
        }
    }

    /// Copies values from `other` (identical shapes) in place.
    pub fn copy_from(&mut self, other: &GatedParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.data_mut().copy_from_slice(src.data());
        }
    }
}

impl ParamTree for GatedParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for p in self
            .encoders
            .iter()
            .chain(std::iter::once(&self.trunk))
            .chain(&self.heads)
        {
            v.extend(p.tensors());
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for p in self
            .encoders
            .iter_mut()
            .chain(std::iter::once(&mut self.trunk))
            .chain(&mut self.heads)
        {
            v.extend(p.tensors_mut());
        }
        v
    }
}

/// Group embeddings of a batch, with tapes when recorded for backprop.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub embeddings: [Option<Tensor>; 3],
    tapes: [Option<Tape>; 3],
}

impl Encoded {
    pub fn embedding(&self, g: StateGroup) -> Option<&Tensor> {
        self.embeddings[g.index()].as_ref()
    }

    pub fn batch(&self) -> usize {
        self.embeddings
            .iter()
            .flatten()
            .next()
            .map_or(0, Tensor::batch)
    }
}

/// Element-wise sum of the embeddings enabled by `filter`. Disabled groups
/// contribute nothing, not even a multiplication by zero.
pub fn gate_and_merge(
    embeddings: &[Option<Tensor>; 3],
    filter: FilterVector,
    batch: usize,
    width: usize,
) -> Result<Tensor> {
    let mut merged = Tensor::zeros(&[batch, width]);
    for g in filter.groups() {
        let e = embeddings[g.index()].as_ref().ok_or_else(|| {
            Error::InvalidFilter(format!("group `{}` enabled but not encoded", g.name()))
        })?;
        merged.add_assign(e)?;
    }
    Ok(merged)
}

/// Gradient bookkeeping for embeddings: accumulates `d merged` into every
/// group enabled by `filter`.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingGrads {
    grads: [Option<Tensor>; 3],
}

impl EmbeddingGrads {
    pub fn add(&mut self, filter: FilterVector, d_merged: &Tensor) -> Result<()> {
        for g in filter.groups() {
            match &mut self.grads[g.index()] {
                Some(t) => t.add_assign(d_merged)?,
                slot => *slot = Some(d_merged.clone()),
            }
        }
        Ok(())
    }

    pub fn get(&self, g: StateGroup) -> Option<&Tensor> {
        self.grads[g.index()].as_ref()
    }
}

/// Which network an instance plays; decides the head's output width and
/// whether the action joins the trunk input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Actor,
    Critic,
}

/// Architecture shared by the actor and the critic.
///
/// Image encoder: conv, elu, conv, elu, dense, layer norm, tanh.
/// Vector encoders: dense, layer norm, tanh. The trunk is a stack of elu
/// layers; the critic appends the action to the merged embedding first.
#[derive(Debug, Clone)]
pub struct GatedNet {
    role: Role,
    encoders: [Network; 3],
    trunk: Network,
    head: Network,
    embedding: usize,
    action_dim: usize,
    num_tasks: usize,
}

impl GatedNet {
    pub fn new(
        role: Role,
        cfg: &NetworkConfig,
        inputs: InputShapes,
        action_dim: usize,
        num_tasks: usize,
    ) -> Result<Self> {
        cfg.validate().map_err(Error::InvalidConfig)?;
        let (embedding, layers) = match role {
            Role::Actor => (cfg.actor_embedding, &cfg.actor_layers),
            Role::Critic => (cfg.critic_embedding, &cfg.critic_layers),
        };
        let vector = |n: usize| {
            Network::new(
                &[n],
                vec![
                    LayerSpec::dense(n, embedding),
                    LayerSpec::layer_norm(embedding),
                    LayerSpec::activation(Activation::Tanh),
                ],
            )
        };
        let image_shape = inputs.group(StateGroup::Image);
        let [c1, c2] = cfg.conv_channels;
        let [k1, k2] = cfg.conv_kernels;
        let [s1, s2] = cfg.conv_strides;
        let convs = Network::new(
            &image_shape,
            vec![
                LayerSpec::conv2d(inputs.frames, c1, k1, s1),
                LayerSpec::activation(Activation::Elu),
                LayerSpec::conv2d(c1, c2, k2, s2),
                LayerSpec::activation(Activation::Elu),
            ],
        )?;
        let flat = convs.output_size();
        let mut image_layers = convs.layers().to_vec();
        image_layers.extend([
            LayerSpec::dense(flat, embedding),
            LayerSpec::layer_norm(embedding),
            LayerSpec::activation(Activation::Tanh),
        ]);
        let image = Network::new(&image_shape, image_layers)?;

        let trunk_in = match role {
            Role::Actor => embedding,
            Role::Critic => embedding + action_dim,
        };
        let mut trunk_layers = Vec::new();
        let mut width = trunk_in;
        for &w in layers {
            trunk_layers.push(LayerSpec::dense(width, w));
            trunk_layers.push(LayerSpec::activation(Activation::Elu));
            width = w;
        }
        if trunk_layers.is_empty() {
            trunk_layers.push(LayerSpec::activation(Activation::Identity));
        }
        let trunk = Network::new(&[trunk_in], trunk_layers)?;
        let out = match role {
            Role::Actor => 2 * action_dim,
            Role::Critic => 1,
        };
        let head = Network::new(&[width], vec![LayerSpec::dense(width, out)])?;
        Ok(Self {
            role,
            encoders: [vector(inputs.proprio)?, vector(inputs.features)?, image],
            trunk,
            head,
            embedding,
            action_dim,
            num_tasks,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn embedding_width(&self) -> usize {
        self.embedding
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> GatedParams {
        GatedParams {
            encoders: [
                self.encoders[0].init_params(rng),
                self.encoders[1].init_params(rng),
                self.encoders[2].init_params(rng),
            ],
            trunk: self.trunk.init_params(rng),
            heads: (0..self.num_tasks)
                .map(|_| self.head.init_params(rng))
                .collect(),
        }
    }

    pub fn zero_params(&self) -> GatedParams {
        GatedParams {
            encoders: [
                self.encoders[0].zero_params(),
                self.encoders[1].zero_params(),
                self.encoders[2].zero_params(),
            ],
            trunk: self.trunk.zero_params(),
            heads: (0..self.num_tasks)
                .map(|_| self.head.zero_params())
                .collect(),
        }
    }

    fn check_task(&self, params: &GatedParams, task_id: usize) -> Result<()> {
        if task_id >= self.num_tasks || task_id >= params.heads.len() {
            return Err(Error::UnknownTask {
                task_id,
                num_tasks: self.num_tasks,
            });
        }
        Ok(())
    }

    /// Runs the encoders of the groups in `groups`; the rest stay `None`.
    pub fn encode(
        &self,
        params: &GatedParams,
        obs: &ObsBatch,
        groups: FilterVector,
        record: bool,
    ) -> Result<Encoded> {
        let mut embeddings = [None, None, None];
        let mut tapes = [None, None, None];
        for g in groups.groups() {
            let i = g.index();
            let input = obs.group(g).ok_or_else(|| {
                Error::InvalidFilter(format!("observation batch lacks group `{}`", g.name()))
            })?;
            if record {
                let (y, t) = self.encoders[i].forward(&params.encoders[i], input)?;
                embeddings[i] = Some(y);
                tapes[i] = Some(t);
            } else {
                embeddings[i] = Some(self.encoders[i].predict(&params.encoders[i], input)?);
            }
        }
        Ok(Encoded { embeddings, tapes })
    }

    /// Backpropagates accumulated embedding gradients into the encoders.
    /// Groups with no gradient are skipped and keep exactly zero gradients.
    pub fn encode_backward(
        &self,
        params: &GatedParams,
        encoded: &Encoded,
        grads: &EmbeddingGrads,
        acc: &mut GatedParams,
    ) -> Result<()> {
        for g in StateGroup::ALL {
            let Some(d) = grads.get(g) else { continue };
            let i = g.index();
            let tape = encoded.tapes[i].as_ref().ok_or_else(|| {
                Error::TapeMismatch(format!("no tape recorded for group `{}`", g.name()))
            })?;
            self.encoders[i].backward_accumulate(
                &params.encoders[i],
                tape,
                d,
                &mut acc.encoders[i],
            )?;
        }
        Ok(())
    }

    /// Merged embedding (and the action, for the critic) through the trunk.
    pub fn trunk_input(
        &self,
        encoded: &Encoded,
        filter: FilterVector,
        action: Option<&Tensor>,
    ) -> Result<Tensor> {
        let merged = gate_and_merge(&encoded.embeddings, filter, encoded.batch(), self.embedding)?;
        match (self.role, action) {
            (Role::Actor, None) => Ok(merged),
            (Role::Critic, Some(a)) => {
                if a.row_len() != self.action_dim {
                    return Err(Error::shape(
                        "critic action",
                        &[self.action_dim],
                        &[a.row_len()],
                    ));
                }
                Tensor::concat_features(&merged, a)
            }
            (Role::Actor, Some(_)) => {
                Err(Error::InvalidConfig("actor takes no action input".into()))
            }
            (Role::Critic, None) => {
                Err(Error::InvalidConfig("critic needs an action input".into()))
            }
        }
    }

    /// Splits a trunk-input gradient into the merged-embedding and action parts.
    pub fn split_trunk_grad(&self, d_input: Tensor) -> Result<(Tensor, Option<Tensor>)> {
        match self.role {
            Role::Actor => Ok((d_input, None)),
            Role::Critic => {
                let (m, a) = d_input.split_features(self.embedding)?;
                Ok((m, Some(a)))
            }
        }
    }

    pub fn trunk_forward(&self, params: &GatedParams, input: &Tensor) -> Result<(Tensor, Tape)> {
        self.trunk.forward(&params.trunk, input)
    }

    pub fn trunk_predict(&self, params: &GatedParams, input: &Tensor) -> Result<Tensor> {
        self.trunk.predict(&params.trunk, input)
    }

    pub fn trunk_backward(
        &self,
        params: &GatedParams,
        tape: &Tape,
        d_out: &Tensor,
        acc: &mut GatedParams,
    ) -> Result<Tensor> {
        self.trunk
            .backward_accumulate(&params.trunk, tape, d_out, &mut acc.trunk)
    }

    pub fn head_forward(
        &self,
        params: &GatedParams,
        task_id: usize,
        hidden: &Tensor,
    ) -> Result<(Tensor, Tape)> {
        self.check_task(params, task_id)?;
        self.head.forward(&params.heads[task_id], hidden)
    }

    pub fn head_predict(
        &self,
        params: &GatedParams,
        task_id: usize,
        hidden: &Tensor,
    ) -> Result<Tensor> {
        self.check_task(params, task_id)?;
        self.head.predict(&params.heads[task_id], hidden)
    }

    pub fn head_backward(
        &self,
        params: &GatedParams,
        task_id: usize,
        tape: &Tape,
        d_out: &Tensor,
        acc: &mut GatedParams,
    ) -> Result<Tensor> {
        self.check_task(params, task_id)?;
        self.head
            .backward_accumulate(&params.heads[task_id], tape, d_out, &mut acc.heads[task_id])
    }
}
