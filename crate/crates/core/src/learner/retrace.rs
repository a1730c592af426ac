use serde::{Deserialize, Serialize};

/// Where the product of trace coefficients starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// `Q^ret_i = Σ_j γ^{j-i} (Π_{k=i..j} c_k) δ_j`: the product includes `c_i`
    /// and there is no leading `Q'(s_i, a_i)` term.
    PaperLiteral,
    /// Conventional retrace:
    /// `Q^ret_i = Q'(s_i, a_i) + Σ_j γ^{j-i} (Π_{k=i+1..j} c_k) δ_j`.
    #[default]
    #[serde(rename = "standard_first_step_one")]
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetraceConfig {
    pub gamma: f64,
    pub trace_mode: TraceMode,
    /// Target-policy samples used to estimate `E_π'[Q'(s, ·)]`.
    pub expectation_samples: usize,
    /// Entropy weight α of the policy objective.
    pub entropy_weight: f64,
    /// Bootstrap from the state after the window; off treats every window
    /// end as terminal.
    pub bootstrap: bool,
}

impl Default for RetraceConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            trace_mode: TraceMode::Standard,
            expectation_samples: 1,
            entropy_weight: 1e-3,
            bootstrap: true,
        }
    }
}

impl RetraceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.expectation_samples == 0 {
            return Err("expectation_samples must be at least 1".into());
        }
        if !(self.entropy_weight.is_finite() && self.entropy_weight >= 0.0) {
            return Err(format!(
                "entropy_weight must be non-negative, got {}",
                self.entropy_weight
            ));
        }
        Ok(())
    }
}

/// Truncated importance weight `min(1, π'(a|s) / b(a|s))` from log-probabilities.
pub fn trace_coefficient(log_target: f64, log_behavior: f64) -> f64 {
    (log_target - log_behavior).exp().min(1.0)
}

/// Per-step inputs of one window of length `L`.
#[derive(Debug, Clone, Copy)]
pub struct RetraceInputs<'a> {
    pub rewards: &'a [f64],
    /// `Q'(s_j, a_j)`.
    pub q: &'a [f64],
    /// `E_π'[Q'(s_{j+1}, ·)]`; the last entry is ignored when `terminal`.
    pub v_next: &'a [f64],
    pub c: &'a [f64],
    pub terminal: bool,
}

/// Retrace targets for every start index of one window, by a single backward
/// recursion.
pub fn retrace_targets(x: RetraceInputs<'_>, gamma: f64, mode: TraceMode) -> Vec<f64> {
    let mut out = vec![0.0; x.rewards.len()];
    retrace_into(x, gamma, mode, &mut out);
    out
}

/// Same as [`retrace_targets`] for `B` windows stored row-major as `[B, L]`.
pub fn retrace_batch(
    rewards: &[f64],
    q: &[f64],
    v_next: &[f64],
    c: &[f64],
    terminal: &[bool],
    gamma: f64,
    mode: TraceMode,
) -> Vec<f64> {
    let b = terminal.len();
    let l = rewards.len() / b.max(1);
    let mut out = vec![0.0; rewards.len()];
    for w in 0..b {
        let r = w * l..(w + 1) * l;
        let x = RetraceInputs {
            rewards: &rewards[r.clone()],
            q: &q[r.clone()],
            v_next: &v_next[r.clone()],
            c: &c[r.clone()],
            terminal: terminal[w],
        };
        retrace_into(x, gamma, mode, &mut out[r]);
    }
    out
}

fn retrace_into(x: RetraceInputs<'_>, gamma: f64, mode: TraceMode, out: &mut [f64]) {
    let n = x.rewards.len();
    let delta = |j: usize| {
        let v = if j + 1 == n && x.terminal {
            0.0
        } else {
            x.v_next[j]
        };
        x.rewards[j] + gamma * v - x.q[j]
    };
    match mode {
        TraceMode::PaperLiteral => {
            // B_i = c_i (δ_i + γ B_{i+1})
            let mut acc = 0.0;
            for i in (0..n).rev() {
                acc = x.c[i] * (delta(i) + gamma * acc);
                out[i] = acc;
            }
        }
        TraceMode::Standard => {
            // A_i = δ_i + γ c_{i+1} A_{i+1};  Q^ret_i = q_i + A_i
            let mut acc = 0.0;
            for i in (0..n).rev() {
                let carry = if i + 1 < n {
                    gamma * x.c[i + 1] * acc
                } else {
                    0.0
                };
                acc = delta(i) + carry;
                out[i] = x.q[i] + acc;
            }
        }
    }
}
