use std::collections::VecDeque;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};

/// One executed environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Observation the action was chosen from.
    pub obs: Observation,
    /// Action as sampled, before the environment's clipping.
    pub action: Vec<f64>,
    /// `log b(a | s)` under the executing intention.
    pub behavior_log_prob: f64,
    /// Reward of every configured task for this step.
    pub rewards: Vec<f64>,
    pub executed_task: usize,
    /// The next state is terminal: no bootstrapping past this step.
    pub terminal: bool,
}

/// Contiguous steps of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub episode: u64,
    pub transitions: Vec<Transition>,
    /// Observation after the last transition, used to bootstrap.
    pub final_obs: Observation,
    /// Step indices where a new intention was drawn (always includes 0).
    pub segment_starts: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Observation following step `i`.
    pub fn next_obs(&self, i: usize) -> &Observation {
        self.transitions
            .get(i + 1)
            .map_or(&self.final_obs, |t| &t.obs)
    }

    pub fn validate(&self, num_tasks: usize, action_dim: usize, max_len: usize) -> Result<()> {
        let bad = |m: String| {
            Err(Error::InvalidTrajectory(format!(
                "episode {}: {m}",
                self.episode
            )))
        };
        if self.transitions.is_empty() {
            return bad("no transitions".into());
        }
        if self.len() > max_len {
            return bad(format!(
                "{} steps exceed the limit of {max_len}",
                self.len()
            ));
        }
        if self.segment_starts.first() != Some(&0)
            || self.segment_starts.windows(2).any(|w| w[0] >= w[1])
        {
            return bad(format!(
                "segment starts {:?} must begin at 0 and increase",
                self.segment_starts
            ));
        }
        if self.segment_starts.last().is_some_and(|&s| s >= self.len()) {
            return bad("segment start beyond the last step".into());
        }
        let last = self.len() - 1;
        for (i, t) in self.transitions.iter().enumerate() {
            if t.rewards.len() != num_tasks {
                return bad(format!(
                    "step {i} has {} rewards for {num_tasks} tasks",
                    t.rewards.len()
                ));
            }
            if t.action.len() != action_dim {
                return bad(format!(
                    "step {i} has a {}-dimensional action",
                    t.action.len()
                ));
            }
            if !t.behavior_log_prob.is_finite() {
                return bad(format!(
                    "step {i} has behavior log-prob {}",
                    t.behavior_log_prob
                ));
            }
            if t.executed_task >= num_tasks {
                return bad(format!(
                    "step {i} executed unknown task {}",
                    t.executed_task
                ));
            }
            if t.terminal && i != last {
                return bad(format!("terminal step {i} is not the last one"));
            }
        }
        Ok(())
    }
}

/// A window of consecutive steps served to the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Snippet {
    pub episode: u64,
    pub start: usize,
    pub steps: Vec<Transition>,
    /// Observation after the last step.
    pub bootstrap: Observation,
    /// The bootstrap observation is terminal.
    pub terminal: bool,
}

impl Snippet {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Observation following step `j` of the window.
    pub fn next_obs(&self, j: usize) -> &Observation {
        self.steps.get(j + 1).map_or(&self.bootstrap, |t| &t.obs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    /// Maximum number of stored transitions.
    pub capacity: usize,
    pub snippet_length: usize,
    pub batch_size: usize,
    /// A transition served this many times is retired.
    pub max_use: u32,
    pub max_trajectory_len: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 100_000,
            snippet_length: 20,
            batch_size: 32,
            max_use: 2500,
            max_trajectory_len: 500,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.capacity == 0
            || self.snippet_length == 0
            || self.batch_size == 0
            || self.max_use == 0
        {
            return Err("capacity, snippet_length, batch_size and max_use must be positive".into());
        }
        if self.max_trajectory_len > self.capacity {
            return Err("max_trajectory_len exceeds the buffer capacity".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Stored {
    traj: Trajectory,
    use_count: Vec<u32>,
    /// Sorted indices of retired transitions.
    retired: Vec<usize>,
    /// Windows of the configured length containing no retired step.
    eligible: usize,
}

impl Stored {
    fn new(traj: Trajectory, length: usize) -> Self {
        let n = traj.len();
        Self {
            use_count: vec![0; n],
            retired: Vec::new(),
            eligible: (n + 1).saturating_sub(length),
            traj,
        }
    }

    fn recount(&mut self, length: usize) {
        self.eligible = (0..(self.traj.len() + 1).saturating_sub(length))
            .filter(|&s| self.window_ok(s, length))
            .count();
    }

    fn window_ok(&self, start: usize, length: usize) -> bool {
        let end = start + length;
        let i = self.retired.partition_point(|&r| r < start);
        self.retired.get(i).is_none_or(|&r| r >= end)
    }

    /// Start index of the `k`-th eligible window.
    fn nth_window(&self, k: usize, length: usize) -> usize {
        if self.retired.is_empty() {
            return k;
        }
        (0..=self.traj.len() - length)
            .filter(|&s| self.window_ok(s, length))
            .nth(k)
            .expect("k below eligible count")
    }
}

/// FIFO trajectory store serving uniformly sampled fixed-length snippets.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    cfg: ReplayConfig,
    num_tasks: usize,
    action_dim: usize,
    items: VecDeque<Stored>,
    transitions: usize,
    eligible: usize,
    evicted: u64,
    retired: u64,
}

impl ReplayBuffer {
    pub fn new(cfg: ReplayConfig, num_tasks: usize, action_dim: usize) -> Result<Self> {
        cfg.validate().map_err(Error::InvalidConfig)?;
        Ok(Self {
            cfg,
            num_tasks,
            action_dim,
            items: VecDeque::new(),
            transitions: 0,
            eligible: 0,
            evicted: 0,
            retired: 0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn num_trajectories(&self) -> usize {
        self.items.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions
    }

    /// Eligible windows of the configured snippet length.
    pub fn num_windows(&self) -> usize {
        self.eligible
    }

    /// Trajectories dropped for capacity or because all windows retired.
    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    /// Transitions that reached the use limit.
    pub fn retired_transitions(&self) -> u64 {
        self.retired
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.items.iter().map(|s| &s.traj)
    }

    pub fn use_counts(&self, index: usize) -> Option<&[u32]> {
        self.items.get(index).map(|s| s.use_count.as_slice())
    }

    /// Stores a trajectory, evicting the oldest ones beyond capacity.
    pub fn append(&mut self, traj: Trajectory) -> Result<()> {
        traj.validate(self.num_tasks, self.action_dim, self.cfg.max_trajectory_len)?;
        let stored = Stored::new(traj, self.cfg.snippet_length);
        self.transitions += stored.traj.len();
        self.eligible += stored.eligible;
        self.items.push_back(stored);
        while self.transitions > self.cfg.capacity {
            self.pop_front();
        }
        Ok(())
    }

    fn pop_front(&mut self) {
        if let Some(old) = self.items.pop_front() {
            self.remove_counts(&old);
        }
    }

    fn remove_counts(&mut self, s: &Stored) {
        self.transitions -= s.traj.len();
        self.eligible -= s.eligible;
        self.evicted += 1;
    }

    /// Draws `batch` windows of the configured length uniformly (with
    /// replacement) among eligible ones, counting each served transition.
    pub fn sample_snippets<R: Rng + ?Sized>(
        &mut self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<Snippet>> {
        let length = self.cfg.snippet_length;
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            if self.eligible == 0 {
                return Err(Error::InsufficientData { length });
            }
            let mut k = rng.random_range(0..self.eligible);
            let idx = self
                .items
                .iter()
                .position(|s| {
                    if k < s.eligible {
                        true
                    } else {
                        k -= s.eligible;
                        false
                    }
                })
                .expect("eligible count is consistent");
            out.push(self.serve(idx, k, length));
        }
        Ok(out)
    }

    fn serve(&mut self, idx: usize, k: usize, length: usize) -> Snippet {
        let max_use = self.cfg.max_use;
        let s = &mut self.items[idx];
        let start = s.nth_window(k, length);
        let snippet = Snippet {
            episode: s.traj.episode,
            start,
            steps: s.traj.transitions[start..start + length].to_vec(),
            bootstrap: s.traj.next_obs(start + length - 1).clone(),
            terminal: s.traj.transitions[start + length - 1].terminal,
        };
        let mut newly_retired = 0;
        for i in start..start + length {
            s.use_count[i] += 1;
            if s.use_count[i] == max_use {
                let at = s.retired.partition_point(|&r| r < i);
                s.retired.insert(at, i);
                newly_retired += 1;
            }
        }
        if newly_retired > 0 {
            self.retired += newly_retired;
            let before = s.eligible;
            s.recount(length);
            self.eligible = self.eligible - before + s.eligible;
            if s.eligible == 0 {
                let gone = self.items.remove(idx).expect("index in range");
                self.remove_counts(&gone);
            }
        }
        snippet
    }
}

/// Replay shared between one writing actor and one reading learner. Whole
/// trajectories are appended under the lock, so readers never see a partial
/// one.
#[derive(Debug, Clone)]
pub struct SharedReplay(Arc<Mutex<ReplayBuffer>>);

impl SharedReplay {
    pub fn new(buffer: ReplayBuffer) -> Self {
        Self(Arc::new(Mutex::new(buffer)))
    }

    pub fn lock(&self) -> MutexGuard<'_, ReplayBuffer> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn append(&self, traj: Trajectory) -> Result<()> {
        self.lock().append(traj)
    }

    pub fn sample_snippets<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<Snippet>> {
        self.lock().sample_snippets(batch, rng)
    }
}
