use serde::{Deserialize, Serialize};

use super::config::EnvConfig;
use super::physics::PhysicsState;

pub const NUM_REWARDS: usize = 8;

/// Values of the eight task rewards at one time step; `values[k]` is reward `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub values: [f64; NUM_REWARDS],
}

impl RewardVector {
    /// Reward by its 1-based id.
    pub fn get(&self, reward_id: u8) -> f64 {
        self.values[usize::from(reward_id) - 1]
    }

    pub fn caught(&self) -> bool {
        self.values[4] > 0.5
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Shaped height reward, 0.5 at the cup base.
pub fn shaped_height(cfg: &EnvConfig, z: f64) -> f64 {
    (1.0 + (cfg.shaped_height_gain * z).tanh()) / 2.0
}

/// 2D Gaussian centred on the cup base; the planar sim has no y axis and the
/// value is zero below the base.
pub fn swing_up(cfg: &EnvConfig, x: f64, z: f64) -> f64 {
    if z < 0.0 {
        return 0.0;
    }
    let s2 = cfg.swing_up_sigma * cfg.swing_up_sigma;
    let y = 0.0;
    (-(x * x + y * y) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2)
}

/// All rewards for a state. The ball position is taken in the cup frame; the
/// joint-velocity penalty uses the cup velocity.
pub fn compute_rewards(cfg: &EnvConfig, state: &PhysicsState) -> RewardVector {
    let b = state.ball_in_cup_frame();
    let (x, z) = (b.x, b.z);
    let rim = cfg.cup_height;
    let to_opening = x.hypot(z - rim);
    let values = [
        indicator(z > 0.0),
        indicator(z > rim),
        indicator(z > cfg.string_length - cfg.max_height_margin),
        1.0 - (to_opening / cfg.opening_distance_scale).tanh(),
        indicator(x.abs() < cfg.cup_radius - cfg.ball_radius && z > 0.0 && z < rim),
        shaped_height(cfg, z),
        swing_up(cfg, x, z),
        -cfg.velocity_penalty * (state.cup_vel.x.abs() + state.cup_vel.z.abs()),
    ];
    RewardVector { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::physics::{reset_with_angle, Vec2};

    fn at(x: f64, z: f64) -> PhysicsState {
        let cfg = EnvConfig::default();
        let mut s = reset_with_angle(&cfg, 0.0);
        s.ball_pos = s.cup_pos + Vec2::new(x, z);
        s
    }

    #[test]
    fn shaped_height_at_base_is_half() {
        assert_eq!(shaped_height(&EnvConfig::default(), 0.0), 0.5);
    }

    #[test]
    fn swing_up_peak_and_two_sigma() {
        let cfg = EnvConfig::default();
        let peak = 1.0 / (2.0 * std::f64::consts::PI * 0.09 * 0.09);
        assert!((swing_up(&cfg, 0.0, 0.1) - peak).abs() / peak < 1e-12);
        assert!((peak - 19.649).abs() < 1e-3);
        let r = swing_up(&cfg, 0.18, 0.1);
        assert!((r - 2.659).abs() < 1e-3, "{r}");
        assert_eq!(swing_up(&cfg, 0.0, -0.01), 0.0);
    }

    #[test]
    fn hanging_ball_earns_no_sparse_reward() {
        let cfg = EnvConfig::default();
        let r = compute_rewards(&cfg, &reset_with_angle(&cfg, 0.0));
        assert_eq!(&r.values[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(r.values[4], 0.0);
        assert!(r.values[3] < 0.01);
        assert!(r.values[5] < 0.5);
        assert_eq!(r.values[6], 0.0);
        assert_eq!(r.values[7], 0.0);
    }

    #[test]
    fn ball_in_cup_sets_catch() {
        let cfg = EnvConfig::default();
        let r = compute_rewards(&cfg, &at(0.0, 0.05));
        assert_eq!(r.get(5), 1.0);
        assert_eq!(r.get(1), 1.0);
        assert_eq!(r.get(2), 0.0);
        assert!(r.caught());
        assert_eq!(compute_rewards(&cfg, &at(0.08, 0.05)).get(5), 0.0);
    }

    #[test]
    fn near_max_height_and_opening() {
        let cfg = EnvConfig::default();
        let r = compute_rewards(&cfg, &at(0.0, 0.38));
        assert_eq!(r.get(3), 1.0);
        assert_eq!(r.get(2), 1.0);
        let r = compute_rewards(&cfg, &at(0.0, 0.16));
        assert!((r.get(4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn velocity_penalty_is_l1() {
        let cfg = EnvConfig::default();
        let mut s = at(0.0, -0.4);
        s.cup_vel = Vec2::new(1.0, -0.5);
        assert!((compute_rewards(&cfg, &s).get(8) + 0.15).abs() < 1e-15);
    }
}
