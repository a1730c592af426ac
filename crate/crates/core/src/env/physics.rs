//! Planar cup with a ball on an inextensible string.
//!
//! The cup is velocity-servoed inside a box workspace. The ball flies under
//! gravity; the string is a unilateral distance constraint to the cup base
//! centre that removes outward radial velocity and projects positions back
//! onto the sphere of radius `L`. A ball that drops through the cup opening is
//! held by the walls and base until it leaves through the top again.

use std::ops::{Add, Mul, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::EnvConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub z: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, z: 0.0 };

    pub fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.z]
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.z + o.z)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.z - o.z)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.z * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsState {
    /// Cup base centre (= string anchor), world frame.
    pub cup_pos: Vec2,
    pub cup_vel: Vec2,
    pub ball_pos: Vec2,
    pub ball_vel: Vec2,
    /// Ball entered through the opening and is held by the cup.
    pub ball_in_cup: bool,
    pub step: u64,
}

impl PhysicsState {
    /// Ball position in the cup frame.
    pub fn ball_in_cup_frame(&self) -> Vec2 {
        self.ball_pos - self.cup_pos
    }

    pub fn string_extension(&self) -> f64 {
        self.ball_in_cup_frame().norm()
    }

    /// Mechanical energy of the ball in joules (gravity potential zero at z = 0).
    pub fn ball_energy(&self, cfg: &EnvConfig) -> f64 {
        cfg.ball_mass * (0.5 * self.ball_vel.dot(self.ball_vel) + cfg.gravity * self.ball_pos.z)
    }

    pub fn is_finite(&self) -> bool {
        self.cup_pos.is_finite()
            && self.cup_vel.is_finite()
            && self.ball_pos.is_finite()
            && self.ball_vel.is_finite()
    }
}

/// Start pose with the ball hanging below the anchor, swung by a uniform
/// random angle in `±cfg.reset_angle`.
pub fn reset<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> PhysicsState {
    let angle = if cfg.reset_angle > 0.0 {
        rng.random_range(-cfg.reset_angle..=cfg.reset_angle)
    } else {
        0.0
    };
    reset_with_angle(cfg, angle)
}

pub fn reset_with_angle(cfg: &EnvConfig, angle: f64) -> PhysicsState {
    let cup = Vec2::from(cfg.start_position);
    let l = cfg.string_length;
    PhysicsState {
        cup_pos: cup,
        cup_vel: Vec2::ZERO,
        ball_pos: cup + Vec2::new(l * angle.sin(), -l * angle.cos()),
        ball_vel: Vec2::ZERO,
        ball_in_cup: false,
        step: 0,
    }
}

/// Advances one control period under the commanded cup velocity (m/s).
pub fn step(cfg: &EnvConfig, state: &PhysicsState, command: Vec2) -> Result<PhysicsState> {
    let h = cfg.substep_dt();
    let mut s = *state;
    for _ in 0..cfg.substeps {
        substep(cfg, &mut s, command, h);
    }
    s.step += 1;
    if !s.is_finite() {
        return Err(Error::NonFinite(format!(
            "physics state at step {}: {s:?}",
            s.step
        )));
    }
    Ok(s)
}

fn substep(cfg: &EnvConfig, s: &mut PhysicsState, command: Vec2, h: f64) {
    let rel_before = s.ball_pos - s.cup_pos;

    // Cup: first-order velocity servo, clamped to the workspace box.
    let alpha = h / (cfg.cup_velocity_tau + h);
    s.cup_vel = s.cup_vel + (command - s.cup_vel) * alpha;
    let mut cup = s.cup_pos + s.cup_vel * h;
    if cup.x < cfg.workspace_x[0] || cup.x > cfg.workspace_x[1] {
        cup.x = cup.x.clamp(cfg.workspace_x[0], cfg.workspace_x[1]);
        s.cup_vel.x = 0.0;
    }
    if cup.z < cfg.workspace_z[0] || cup.z > cfg.workspace_z[1] {
        cup.z = cup.z.clamp(cfg.workspace_z[0], cfg.workspace_z[1]);
        s.cup_vel.z = 0.0;
    }
    s.cup_pos = cup;

    // Ball: kick-drift-kick under constant gravity, exact in free flight.
    let g = Vec2::new(0.0, -cfg.gravity);
    s.ball_vel = s.ball_vel + g * (0.5 * h);
    s.ball_pos = s.ball_pos + s.ball_vel * h;
    s.ball_vel = s.ball_vel + g * (0.5 * h);

    apply_string(cfg, s);
    apply_cup(cfg, s, rel_before);
}

fn apply_string(cfg: &EnvConfig, s: &mut PhysicsState) {
    let l = cfg.string_length;
    let d = s.ball_pos - s.cup_pos;
    let dist = d.norm();
    if dist <= l {
        return;
    }
    let n = d * (1.0 / dist);
    // Energy in the anchor frame before the constraint acts; the correction
    // must not add to it.
    let rel = s.ball_vel - s.cup_vel;
    let budget = 0.5 * rel.dot(rel) + cfg.gravity * s.ball_pos.z;

    s.ball_pos = s.cup_pos + n * l;
    let radial = rel.dot(n);
    let mut rel = if radial > 0.0 { rel - n * radial } else { rel };

    let potential = cfg.gravity * s.ball_pos.z;
    let kinetic = 0.5 * rel.dot(rel);
    if kinetic + potential > budget {
        let allowed = (budget - potential).max(0.0);
        rel = if kinetic > 0.0 {
            rel * (allowed / kinetic).sqrt()
        } else {
            rel
        };
    }
    s.ball_vel = s.cup_vel + rel;
}

fn apply_cup(cfg: &EnvConfig, s: &mut PhysicsState, rel_before: Vec2) {
    let wall = cfg.cup_radius - cfg.ball_radius;
    let floor = cfg.ball_radius;
    let rim = cfg.cup_height;
    let mut rel = s.ball_pos - s.cup_pos;

    if !s.ball_in_cup {
        let dropped_in = rel_before.z >= rim && rel.z < rim && rel.x.abs() < wall;
        if !dropped_in {
            return;
        }
        s.ball_in_cup = true;
    }
    if rel.z >= rim {
        s.ball_in_cup = false;
        return;
    }

    // Inelastic walls and base, expressed relative to the moving cup.
    let mut vrel = s.ball_vel - s.cup_vel;
    let inner = wall - 1e-6;
    if rel.x.abs() > inner {
        rel.x = rel.x.clamp(-inner, inner);
        if vrel.x * rel.x > 0.0 {
            vrel.x = 0.0;
        }
    }
    if rel.z < floor {
        rel.z = floor;
        if vrel.z < 0.0 {
            vrel.z = 0.0;
        }
    }
    s.ball_pos = s.cup_pos + rel;
    s.ball_vel = s.cup_vel + vrel;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_perturbation_hangs_straight_down() {
        let cfg = EnvConfig::default();
        let s = reset_with_angle(&cfg, 0.0);
        assert_eq!(s.ball_pos.x, s.cup_pos.x);
        assert_eq!(s.ball_pos.z, s.cup_pos.z - 0.40);
    }

    #[test]
    fn reset_is_seeded_and_taut() {
        let cfg = EnvConfig::default();
        let a = reset(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = reset(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!((a.string_extension() - 0.40).abs() <= 1e-9);
    }

    #[test]
    fn cup_stays_in_workspace() {
        let cfg = EnvConfig::default();
        let mut s = reset_with_angle(&cfg, 0.0);
        for i in 0..200 {
            let cmd = if i < 100 {
                Vec2::new(2.0, 2.0)
            } else {
                Vec2::new(-2.0, -2.0)
            };
            s = step(&cfg, &s, cmd).unwrap();
            assert!(s.cup_pos.x >= -0.5 && s.cup_pos.x <= 0.5);
            assert!(s.cup_pos.z >= 0.0 && s.cup_pos.z <= 0.8);
            assert!(s.string_extension() <= cfg.string_length + 1e-6);
        }
    }

    #[test]
    fn ball_dropped_into_cup_stays_there() {
        let cfg = EnvConfig::default();
        let mut s = reset_with_angle(&cfg, 0.0);
        s.ball_pos = s.cup_pos + Vec2::new(0.01, 0.3);
        for _ in 0..40 {
            s = step(&cfg, &s, Vec2::ZERO).unwrap();
        }
        let rel = s.ball_in_cup_frame();
        assert!(s.ball_in_cup);
        assert!((rel.z - cfg.ball_radius).abs() < 1e-9, "{rel:?}");
        assert!(rel.x.abs() < cfg.cup_radius - cfg.ball_radius);
    }

    #[test]
    fn non_finite_command_aborts() {
        let cfg = EnvConfig::default();
        let s = reset_with_angle(&cfg, 0.0);
        assert!(matches!(
            step(&cfg, &s, Vec2::new(f64::NAN, 0.0)),
            Err(Error::NonFinite(_))
        ));
    }
}
