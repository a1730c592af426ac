#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sacx::env::{Frame, Observation};
use sacx::gated::{FilterVector, InputShapes, Model, NetworkConfig, TaskSpec};
use sacx::nn::Tensor;

pub const IMAGE: usize = 16;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_frame(rng: &mut impl Rng, size: usize) -> Arc<Frame> {
    Arc::new(Frame::from_pixels(size, (0..size * size).map(|_| rng.random()).collect()).unwrap())
}

pub fn random_observation(rng: &mut impl Rng, size: usize) -> Observation {
    Observation {
        proprio: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        features: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        frames: std::array::from_fn(|_| random_frame(rng, size)),
    }
}

pub fn random_actions(rng: &mut impl Rng, batch: usize, dim: usize) -> Tensor {
    Tensor::new(
        vec![batch, dim],
        (0..batch * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Small nets on 16×16 frames: the full structure at test-friendly cost.
pub fn small_config() -> NetworkConfig {
    NetworkConfig {
        actor_embedding: 6,
        actor_layers: vec![8, 8],
        critic_embedding: 6,
        critic_layers: vec![8, 8],
        conv_channels: [2, 2],
        ..NetworkConfig::default()
    }
}

pub fn small_model(num_tasks: usize) -> Model {
    Model::new(&small_config(), InputShapes::for_env(IMAGE), 2, num_tasks).unwrap()
}

/// Every valid filter vector.
pub fn valid_filters() -> Vec<FilterVector> {
    [[true, true, false], [true, false, true], [true, true, true]]
        .into_iter()
        .map(|e| FilterVector::new(e).unwrap())
        .collect()
}

/// One task per (policy filter, critic filter) pair.
pub fn all_task_configs(reward_id: u8) -> Vec<TaskSpec> {
    let mut tasks = Vec::new();
    for p in valid_filters() {
        for c in valid_filters() {
            tasks.push(TaskSpec::new(tasks.len(), reward_id, p, c).unwrap());
        }
    }
    tasks
}

/// A seconds-scale experiment: short episodes, small nets, 16×16 frames.
pub fn small_experiment(
    arm: sacx::orchestrator::Arm,
    dir: &std::path::Path,
) -> sacx::orchestrator::ExperimentConfig {
    use sacx::orchestrator::{ExecutionMode, ExperimentConfig};
    let mut cfg = ExperimentConfig::for_arm(arm);
    cfg.episodes = 4;
    cfg.episode_length = 40;
    cfg.switch_period = 10;
    cfg.learner_steps_per_env_step = 0.05;
    cfg.mode = ExecutionMode::Deterministic;
    cfg.output_dir = dir.to_path_buf();
    cfg.env.render_size = IMAGE;
    cfg.network = small_config();
    cfg.replay.snippet_length = 5;
    cfg.replay.batch_size = 4;
    cfg.learner.target_sync_period = 10;
    cfg
}
