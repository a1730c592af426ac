use serde::{Deserialize, Serialize};

/// First-order low-pass filter on the raw policy action,
/// `y ← y + β (u − y)` with `β = dt / (τ + dt)` and `τ = 1 / (2π f_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionFilter {
    beta: f64,
    state: [f64; 2],
}

impl ActionFilter {
    pub fn new(cutoff_hz: f64, dt: f64) -> Self {
        let tau = 1.0 / (2.0 * std::f64::consts::PI * cutoff_hz);
        Self {
            beta: dt / (tau + dt),
            state: [0.0; 2],
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Internal filter state, in action units (`[-1, 1]`).
    pub fn state(&self) -> [f64; 2] {
        self.state
    }

    pub fn reset(&mut self) {
        self.state = [0.0; 2];
    }

    /// Feeds one raw action (clipped to `[-1, 1]`) and returns the new state.
    pub fn apply(&mut self, raw: [f64; 2]) -> [f64; 2] {
        for (y, &u) in self.state.iter_mut().zip(&raw) {
            let u = if u.is_nan() { 0.0 } else { u };
            let clipped = u.clamp(-1.0, 1.0);
            if clipped != u {
                log::trace!("action component {u} clipped to {clipped}");
            }
            *y += self.beta * (clipped - *y);
        }
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discretisation_coefficient() {
        // τ = 1/(2π·0.5) = 0.318310 s, β = 0.05 / (τ + 0.05)
        let f = ActionFilter::new(0.5, 0.05);
        assert!((f.beta() - 0.135_755_2).abs() < 1e-6, "{}", f.beta());
    }

    #[test]
    fn step_response_after_one_second() {
        let mut f = ActionFilter::new(0.5, 0.05);
        let mut y = [0.0; 2];
        for _ in 0..20 {
            y = f.apply([0.8, -0.8]);
        }
        assert!(y[0] / 0.8 >= 0.94);
        assert!(y[1] / -0.8 >= 0.94);
    }

    #[test]
    fn zero_in_zero_out() {
        let mut f = ActionFilter::new(0.5, 0.05);
        for _ in 0..100 {
            assert_eq!(f.apply([0.0, 0.0]), [0.0, 0.0]);
        }
    }

    #[test]
    fn nyquist_input_is_attenuated() {
        let mut f = ActionFilter::new(0.5, 0.05);
        for i in 0..400 {
            let u = if i % 2 == 0 { 1.0 } else { -1.0 };
            let y = f.apply([u, -u]);
            if i > 100 {
                assert!(y[0].abs() < 0.15 && y[1].abs() < 0.15);
            }
        }
    }

    #[test]
    fn out_of_range_input_is_clipped() {
        let mut a = ActionFilter::new(0.5, 0.05);
        let mut b = ActionFilter::new(0.5, 0.05);
        assert_eq!(a.apply([7.0, -3.0]), b.apply([1.0, -1.0]));
    }
}
