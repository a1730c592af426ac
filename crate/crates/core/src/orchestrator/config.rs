use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::gated::{FilterVector, NetworkConfig, StateGroup, TaskSpec};
use crate::learner::LearnerConfig;
use crate::replay::ReplayConfig;

/// Predefined task sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// 1F..5F
    FeaturesOnly,
    /// 1P..5P
    PixelsOnly,
    /// 1F..5F and 1P..5P
    Mixed,
    /// Mixed, with every critic restricted to proprio and features.
    MixedAsymmetric,
    /// 1F..5F plus the useless 8F.
    Distractor,
    /// 5F, 6F, 7F, 5P, 6P, 7P with feature critics.
    Shaped,
    /// Only the explicit `tasks` list.
    Custom,
}

impl Arm {
    fn labels(self) -> &'static [&'static str] {
        match self {
            Arm::FeaturesOnly => &["1F", "2F", "3F", "4F", "5F"],
            Arm::PixelsOnly => &["1P", "2P", "3P", "4P", "5P"],
            Arm::Mixed | Arm::MixedAsymmetric => {
                &["1F", "2F", "3F", "4F", "5F", "1P", "2P", "3P", "4P", "5P"]
            }
            Arm::Distractor => &["1F", "2F", "3F", "4F", "5F", "8F"],
            Arm::Shaped => &["5F", "6F", "7F", "5P", "6P", "7P"],
            Arm::Custom => &[],
        }
    }

    pub fn forces_asymmetric(self) -> bool {
        matches!(self, Arm::MixedAsymmetric | Arm::Shaped)
    }
}

/// A validated filter vector for config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FilterVector", into = "FilterVector")]
pub struct MarkovFilter(pub FilterVector);

impl TryFrom<FilterVector> for MarkovFilter {
    type Error = String;
    fn try_from(f: FilterVector) -> Result<Self, String> {
        f.validate().map_err(|e| e.to_string())?;
        Ok(Self(f))
    }
}

impl From<MarkovFilter> for FilterVector {
    fn from(f: MarkovFilter) -> Self {
        f.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RewardId(pub u8);

impl TryFrom<u8> for RewardId {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        if (1..=crate::env::NUM_REWARDS as u8).contains(&v) {
            Ok(Self(v))
        } else {
            Err(format!(
                "reward id {v} out of range 1..={}",
                crate::env::NUM_REWARDS
            ))
        }
    }
}

impl From<RewardId> for u8 {
    fn from(r: RewardId) -> u8 {
        r.0
    }
}

/// One task in a config file: either a label such as `"5P"` or a table
/// `{ reward = 5, policy = [...], critic = [...] }`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum TaskEntry {
    Label(TaskLabel),
    Explicit {
        reward: RewardId,
        policy: MarkovFilter,
        critic: MarkovFilter,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplicitTask {
    reward: RewardId,
    policy: MarkovFilter,
    critic: MarkovFilter,
}

// Hand-written instead of `untagged` so errors inside an entry keep the
// entry's own position.
impl<'de> Deserialize<'de> for TaskEntry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> serde::de::Visitor<'de> for V {
            type Value = TaskEntry;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a task label like \"5F\" or a table { reward, policy, critic }")
            }
            fn visit_str<E: serde::de::Error>(self, s: &str) -> Result<TaskEntry, E> {
                TaskLabel::try_from(s.to_string())
                    .map(TaskEntry::Label)
                    .map_err(E::custom)
            }
            fn visit_map<A: serde::de::MapAccess<'de>>(
                self,
                map: A,
            ) -> Result<TaskEntry, A::Error> {
                let t =
                    ExplicitTask::deserialize(serde::de::value::MapAccessDeserializer::new(map))?;
                Ok(TaskEntry::Explicit {
                    reward: t.reward,
                    policy: t.policy,
                    critic: t.critic,
                })
            }
        }
        d.deserialize_any(V)
    }
}

/// `<reward><F|P>`: F tasks see proprio + features, P tasks proprio + image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TaskLabel {
    pub reward: u8,
    pub pixels: bool,
}

impl TryFrom<String> for TaskLabel {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        let bad =
            || format!("task label `{s}` must look like `5F` or `5P` with a reward id in 1..=8");
        let (num, space) = s.split_at(s.len().saturating_sub(1));
        let reward: u8 = num.parse().map_err(|_| bad())?;
        let pixels = match space {
            "F" | "f" => false,
            "P" | "p" => true,
            _ => return Err(bad()),
        };
        RewardId::try_from(reward).map_err(|_| bad())?;
        Ok(Self { reward, pixels })
    }
}

impl From<TaskLabel> for String {
    fn from(l: TaskLabel) -> String {
        l.to_string()
    }
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.reward, if self.pixels { 'P' } else { 'F' })
    }
}

impl TaskEntry {
    fn parts(&self) -> (u8, FilterVector, FilterVector) {
        match *self {
            TaskEntry::Label(l) => {
                let f = if l.pixels {
                    FilterVector::PROPRIO_IMAGE
                } else {
                    FilterVector::PROPRIO_FEATURES
                };
                (l.reward, f, f)
            }
            TaskEntry::Explicit {
                reward,
                policy,
                critic,
            } => (reward.0, policy.0, critic.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    /// Strict alternation of episodes and learner steps in one thread;
    /// bit-reproducible.
    Deterministic,
    /// Actor and learner threads sharing the replay and a published
    /// parameter snapshot.
    Concurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub arm: Arm,
    /// Overrides the arm's task list when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tasks: Option<Vec<TaskEntry>>,
    /// Restricts every critic filter to proprio and features.
    pub asymmetric: bool,
    pub episodes: usize,
    pub episode_length: usize,
    /// Steps between intention draws.
    pub switch_period: usize,
    pub learner_steps_per_env_step: f64,
    /// Evaluate after every `eval_every` episodes.
    pub eval_every: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub mode: ExecutionMode,
    /// Write a checkpoint every this many episodes (0: only at the end).
    pub checkpoint_every: usize,
    pub episode_log: bool,
    pub env: EnvConfig,
    pub network: NetworkConfig,
    pub learner: LearnerConfig,
    pub replay: ReplayConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            arm: Arm::FeaturesOnly,
            tasks: None,
            asymmetric: false,
            episodes: 3000,
            episode_length: 500,
            switch_period: 100,
            learner_steps_per_env_step: 1.0,
            eval_every: 1,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            mode: ExecutionMode::Concurrent,
            checkpoint_every: 0,
            episode_log: false,
            env: EnvConfig::default(),
            network: NetworkConfig::default(),
            learner: LearnerConfig::default(),
            replay: ReplayConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn for_arm(arm: Arm) -> Self {
        Self {
            arm,
            asymmetric: arm.forces_asymmetric(),
            ..Self::default()
        }
    }

    /// The task list with ids assigned in order.
    pub fn task_specs(&self) -> Result<Vec<TaskSpec>> {
        let entries: Vec<TaskEntry> = match &self.tasks {
            Some(t) => t.clone(),
            None => self
                .arm
                .labels()
                .iter()
                .map(|l| {
                    TaskEntry::Label(TaskLabel::try_from(l.to_string()).expect("built-in label"))
                })
                .collect(),
        };
        if entries.is_empty() {
            return Err(Error::InvalidConfig("the task list is empty".into()));
        }
        let asymmetric = self.asymmetric || self.arm.forces_asymmetric();
        entries
            .iter()
            .enumerate()
            .map(|(id, e)| {
                let (reward, policy, mut critic) = e.parts();
                if asymmetric {
                    critic = FilterVector::PROPRIO_FEATURES;
                }
                TaskSpec::new(id, reward, policy, critic)
            })
            .collect()
    }

    /// Tasks evaluated after each episode: the sparse catch task in every
    /// state space present.
    pub fn eval_tasks(&self) -> Result<Vec<TaskSpec>> {
        Ok(self
            .task_specs()?
            .into_iter()
            .filter(|t| t.reward_id == 5)
            .collect())
    }

    /// Groups any network needs to see.
    pub fn uses_image(&self) -> Result<bool> {
        Ok(self.task_specs()?.iter().any(|t| {
            t.policy_filter.is_enabled(StateGroup::Image)
                || t.critic_filter.is_enabled(StateGroup::Image)
        }))
    }

    /// Checks cross-field constraints; errors name the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.episode_length == 0 {
            return Err(("episode_length", "must be positive".into()));
        }
        if self.episode_length > self.replay.max_trajectory_len {
            return Err((
                "episode_length",
                format!(
                    "{} exceeds replay.max_trajectory_len {}",
                    self.episode_length, self.replay.max_trajectory_len
                ),
            ));
        }
        if self.switch_period == 0 || !self.episode_length.is_multiple_of(self.switch_period) {
            return Err((
                "switch_period",
                format!(
                    "{} must be positive and divide episode_length {}",
                    self.switch_period, self.episode_length
                ),
            ));
        }
        if !(self.learner_steps_per_env_step.is_finite() && self.learner_steps_per_env_step >= 0.0)
        {
            return Err((
                "learner_steps_per_env_step",
                "must be a non-negative number".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(("eval_every", "must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(("seeds", "at least one seed is required".into()));
        }
        if self.arm == Arm::Custom && self.tasks.is_none() {
            return Err((
                "arm",
                "the custom arm needs an explicit `tasks` list".into(),
            ));
        }
        if let Some(t) = &self.tasks {
            if t.is_empty() {
                return Err(("tasks", "the task list is empty".into()));
            }
        }
        self.env.validate().map_err(|e| ("env", e))?;
        self.network.validate().map_err(|e| ("network", e))?;
        self.learner
            .retrace
            .validate()
            .map_err(|e| ("learner", e))?;
        self.replay.validate().map_err(|e| ("replay", e))?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// Parses and validates a TOML config. Errors carry 1-based line and column.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        Error::Config {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    if let Err((key, message)) = cfg.validate() {
        let (line, column) = locate_key(text, key).unwrap_or((0, 0));
        return Err(Error::Config {
            line,
            column,
            message: format!("{key}: {message}"),
        });
    }
    cfg.task_specs().map_err(|e| Error::Config {
        line: locate_key(text, "tasks").map_or(0, |p| p.0),
        column: 1,
        message: e.to_string(),
    })?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Position of `key = ...` or a `[key]` table header, if the file names it.
fn locate_key(text: &str, key: &str) -> Option<(usize, usize)> {
    text.lines().enumerate().find_map(|(i, l)| {
        let t = l.trim_start();
        let indent = l.len() - t.len();
        let is_assign = t
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='));
        let is_table = t.starts_with('[') && t.trim_matches(|c| c == '[' || c == ']').trim() == key;
        (is_assign || is_table).then_some((i + 1, indent + 1))
    })
}
