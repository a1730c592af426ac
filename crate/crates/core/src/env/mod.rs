//! Planar ball-in-cup environment.

pub mod action_filter;
pub mod config;
pub mod observation;
pub mod physics;
pub mod render;
pub mod reward;

use std::sync::Arc;

use rand::Rng;

pub use action_filter::ActionFilter;
pub use config::{EnvConfig, ObservationScaling};
pub use observation::{Observation, FEATURES_DIM, FRAME_STACK, PROPRIO_DIM};
pub use physics::{PhysicsState, Vec2};
pub use render::Frame;
pub use reward::{compute_rewards, RewardVector, NUM_REWARDS};

use crate::error::{Error, Result};

pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub rewards: RewardVector,
}

/// One environment instance: physics, action filter, frame history.
#[derive(Debug, Clone)]
pub struct BallInCup {
    cfg: EnvConfig,
    state: PhysicsState,
    filter: ActionFilter,
    prev_raw: [f64; 2],
    prev_ball: Vec2,
    prev_cup: Vec2,
    frames: [Arc<Frame>; FRAME_STACK],
}

impl BallInCup {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate().map_err(Error::InvalidConfig)?;
        let state = physics::reset_with_angle(&cfg, 0.0);
        let filter = ActionFilter::new(cfg.filter_cutoff_hz, cfg.control_dt);
        let frame = Arc::new(render::render(&cfg, &state));
        Ok(Self {
            state,
            filter,
            prev_raw: [0.0; 2],
            prev_ball: state.ball_pos,
            prev_cup: state.cup_pos,
            frames: [frame.clone(), frame.clone(), frame],
            cfg,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &PhysicsState {
        &self.state
    }

    pub fn filter(&self) -> &ActionFilter {
        &self.filter
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Observation {
        let s = physics::reset(&self.cfg, rng);
        self.reset_to(s)
    }

    /// Restarts from an explicit physics state with a zeroed filter. The
    /// frame stack repeats the initial frame.
    pub fn reset_to(&mut self, state: PhysicsState) -> Observation {
        self.state = state;
        self.filter.reset();
        self.prev_raw = [0.0; 2];
        self.prev_ball = state.ball_pos;
        self.prev_cup = state.cup_pos;
        let frame = Arc::new(render::render(&self.cfg, &state));
        self.frames = [frame.clone(), frame.clone(), frame];
        self.observation()
    }

    /// Filters `raw`, advances the physics one control period and observes.
    pub fn step(&mut self, raw: [f64; 2]) -> Result<StepOutcome> {
        let filtered = self.filter.apply(raw);
        let command = Vec2::from(filtered) * self.cfg.max_velocity;
        let next = physics::step(&self.cfg, &self.state, command)?;
        self.prev_ball = self.state.ball_pos;
        self.prev_cup = self.state.cup_pos;
        self.prev_raw = raw;
        self.state = next;
        let [_, b, c] = &self.frames;
        self.frames = [
            b.clone(),
            c.clone(),
            Arc::new(render::render(&self.cfg, &next)),
        ];
        Ok(StepOutcome {
            observation: self.observation(),
            rewards: compute_rewards(&self.cfg, &next),
        })
    }

    pub fn rewards(&self) -> RewardVector {
        compute_rewards(&self.cfg, &self.state)
    }

    pub fn observation(&self) -> Observation {
        let s = &self.state;
        let dt = self.cfg.control_dt;
        let ball_rel = s.ball_in_cup_frame();
        let ball_vel = (s.ball_pos - self.prev_ball) * (1.0 / dt);
        let cup_vel_fd = (s.cup_pos - self.prev_cup) * (1.0 / dt);
        let f = self.filter.state();
        Observation {
            proprio: [
                s.cup_pos.x,
                s.cup_pos.z,
                s.cup_vel.x,
                s.cup_vel.z,
                self.prev_raw[0],
                self.prev_raw[1],
                f[0],
                f[1],
            ],
            features: [
                ball_rel.x,
                ball_rel.z,
                ball_vel.x,
                ball_vel.z,
                s.cup_pos.x,
                s.cup_pos.z,
                cup_vel_fd.x,
                cup_vel_fd.z,
            ],
            frames: self.frames.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cold_start_repeats_initial_frame() {
        let mut env = BallInCup::new(EnvConfig::default()).unwrap();
        let obs = env.reset(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(obs.frames[0], obs.frames[1]);
        assert_eq!(obs.frames[1], obs.frames[2]);
        assert_eq!(obs.pixels().count(), 3 * 32 * 32);
        assert!(obs.pixels().all(|p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn static_scene_has_zero_velocities() {
        let mut env = BallInCup::new(EnvConfig::default()).unwrap();
        env.reset_to(physics::reset_with_angle(env.config(), 0.0));
        env.step([0.0, 0.0]).unwrap();
        let obs = env.step([0.0, 0.0]).unwrap().observation;
        assert_eq!(&obs.features[2..4], &[0.0, 0.0]);
        assert_eq!(&obs.features[6..8], &[0.0, 0.0]);
    }

    #[test]
    fn previous_action_and_filter_state_are_exposed() {
        let mut env = BallInCup::new(EnvConfig::default()).unwrap();
        env.reset(&mut ChaCha8Rng::seed_from_u64(2));
        let obs = env.step([0.3, -0.7]).unwrap().observation;
        assert_eq!(obs.previous_action(), [0.3, -0.7]);
        assert_eq!(obs.filter_state(), env.filter().state());
        let obs = env.step([-0.1, 0.2]).unwrap().observation;
        assert_eq!(obs.previous_action(), [-0.1, 0.2]);
        assert_eq!(obs.filter_state(), env.filter().state());
    }

    #[test]
    fn frame_stack_is_oldest_first() {
        let mut env = BallInCup::new(EnvConfig::default()).unwrap();
        env.reset(&mut ChaCha8Rng::seed_from_u64(3));
        let first = env.observation().frames[2].clone();
        let o1 = env.step([1.0, 1.0]).unwrap().observation;
        let o2 = env.step([1.0, 1.0]).unwrap().observation;
        assert_eq!(o2.frames[0], first);
        assert_eq!(o2.frames[1], o1.frames[2]);
    }

    #[test]
    fn identical_histories_give_identical_observations() {
        let mut a = BallInCup::new(EnvConfig::default()).unwrap();
        a.reset(&mut ChaCha8Rng::seed_from_u64(4));
        a.step([0.5, 0.2]).unwrap();
        let mut b = a.clone();
        let oa = a.step([-0.4, 0.9]).unwrap();
        let ob = b.step([-0.4, 0.9]).unwrap();
        assert_eq!(oa.observation, ob.observation);
        assert_eq!(oa.rewards, ob.rewards);
    }
}
