//! Browser bindings: drive the cup by hand, inspect reward fields and the
//! action filter's step response.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sacx::env::reward::compute_rewards;
use sacx::env::{physics, ActionFilter, BallInCup, EnvConfig, Vec2, NUM_REWARDS};
use wasm_bindgen::prelude::*;

fn js_err(e: sacx::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One interactive episode of the ball-in-cup simulation.
#[wasm_bindgen]
pub struct Simulation {
    env: BallInCup,
    rng: ChaCha8Rng,
    steps: u32,
    catch_return: f64,
}

#[wasm_bindgen]
impl Simulation {
    /// `render_size` is the camera resolution in pixels (at least 4).
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, render_size: usize) -> Result<Simulation, JsError> {
        let cfg = EnvConfig {
            render_size,
            ..EnvConfig::default()
        };
        let mut sim = Simulation {
            env: BallInCup::new(cfg).map_err(js_err)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps: 0,
            catch_return: 0.0,
        };
        sim.reset();
        Ok(sim)
    }

    pub fn reset(&mut self) {
        self.env.reset(&mut self.rng);
        self.steps = 0;
        self.catch_return = 0.0;
    }

    /// Advances one 50 ms control step with a raw action in `[-1, 1]²`
    /// (x, z); returns the eight rewards.
    pub fn step(&mut self, ax: f64, az: f64) -> Result<Vec<f64>, JsError> {
        let out = self.env.step([ax, az]).map_err(js_err)?;
        self.steps += 1;
        self.catch_return += out.rewards.get(5);
        Ok(out.rewards.values.to_vec())
    }

    /// Newest camera frame, row-major grayscale.
    pub fn frame(&self) -> Vec<u8> {
        self.env.observation().frames[2].raw().to_vec()
    }

    pub fn render_size(&self) -> usize {
        self.env.config().render_size
    }

    /// `[cup_x, cup_z, ball_x, ball_z]` in metres.
    pub fn positions(&self) -> Vec<f64> {
        let s = self.env.state();
        vec![s.cup_pos.x, s.cup_pos.z, s.ball_pos.x, s.ball_pos.z]
    }

    /// The filter state the cup velocity command follows.
    pub fn filter_state(&self) -> Vec<f64> {
        self.env.filter().state().to_vec()
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// Steps so far with the ball in the cup.
    pub fn catch_return(&self) -> f64 {
        self.catch_return
    }
}

/// Reward `reward_id` (1–8) over a `size × size` grid of ball positions in
/// the cup frame spanning `±half_extent` metres, top row first. The cup is
/// at rest.
#[wasm_bindgen]
pub fn reward_field(reward_id: u8, size: usize, half_extent: f64) -> Result<Vec<f64>, JsError> {
    if !(1..=NUM_REWARDS as u8).contains(&reward_id) {
        return Err(JsError::new(&format!(
            "reward id {reward_id} is not in 1..=8"
        )));
    }
    let cfg = EnvConfig::default();
    let mut state = physics::reset_with_angle(&cfg, 0.0);
    let cell = 2.0 * half_extent / size as f64;
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let rel = Vec2::new(
                -half_extent + (col as f64 + 0.5) * cell,
                half_extent - (row as f64 + 0.5) * cell,
            );
            state.ball_pos = state.cup_pos + rel;
            out.push(compute_rewards(&cfg, &state).get(reward_id));
        }
    }
    Ok(out)
}

/// Filter output for a unit step held for `steps` control periods.
#[wasm_bindgen]
pub fn filter_step_response(cutoff_hz: f64, dt: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    if !(cutoff_hz > 0.0 && dt > 0.0) {
        return Err(JsError::new("cutoff and time step must be positive"));
    }
    let mut f = ActionFilter::new(cutoff_hz, dt);
    Ok((0..steps).map(|_| f.apply([1.0, 0.0])[0]).collect())
}
