use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The three observation groups a task may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateGroup {
    Proprio,
    Features,
    Image,
}

impl StateGroup {
    pub const ALL: [StateGroup; 3] = [StateGroup::Proprio, StateGroup::Features, StateGroup::Image];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            StateGroup::Proprio => "proprio",
            StateGroup::Features => "features",
            StateGroup::Image => "image",
        }
    }
}

/// Binary mask over [`StateGroup`]s selecting which encoders feed a network.
///
/// Serialised as a list of group names, e.g. `["proprio", "features"]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FilterVector {
    pub enabled: [bool; 3],
}

impl FilterVector {
    pub const PROPRIO_FEATURES: FilterVector = FilterVector {
        enabled: [true, true, false],
    };
    pub const PROPRIO_IMAGE: FilterVector = FilterVector {
        enabled: [true, false, true],
    };
    pub const ALL: FilterVector = FilterVector {
        enabled: [true, true, true],
    };

    /// Builds a filter and checks it describes a Markov state: proprioception
    /// plus at least one of features or image.
    pub fn new(enabled: [bool; 3]) -> Result<Self> {
        let f = Self { enabled };
        f.validate()?;
        Ok(f)
    }

    /// No validation; an empty filter is only useful in tests.
    pub const fn unchecked(enabled: [bool; 3]) -> Self {
        Self { enabled }
    }

    pub fn validate(&self) -> Result<()> {
        let [p, f, i] = self.enabled;
        if !p || !(f || i) {
            return Err(Error::InvalidFilter(format!(
                "{self} must enable proprio and at least one of features or image"
            )));
        }
        Ok(())
    }

    pub fn is_enabled(&self, group: StateGroup) -> bool {
        self.enabled[group.index()]
    }

    pub fn groups(&self) -> impl Iterator<Item = StateGroup> + '_ {
        StateGroup::ALL.into_iter().filter(|g| self.is_enabled(*g))
    }

    /// Union of two masks.
    pub fn union(self, other: FilterVector) -> FilterVector {
        let mut enabled = self.enabled;
        for (a, b) in enabled.iter_mut().zip(other.enabled) {
            *a |= b;
        }
        FilterVector { enabled }
    }
}

impl fmt::Display for FilterVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.groups().map(StateGroup::name).collect();
        write!(f, "[{}]", names.join(", "))
    }
}

impl Serialize for FilterVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let groups: Vec<StateGroup> = self.groups().collect();
        groups.serialize(s)
    }
}

impl<'de> Deserialize<'de> for FilterVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let groups = Vec::<StateGroup>::deserialize(d)?;
        let mut enabled = [false; 3];
        for g in groups {
            if enabled[g.index()] {
                return Err(serde::de::Error::custom(format!(
                    "group `{}` listed twice",
                    g.name()
                )));
            }
            enabled[g.index()] = true;
        }
        Ok(FilterVector { enabled })
    }
}

/// One intention: a reward plus the state spaces of its policy and critic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    /// 1-based reward index into the reward vector (1..=8).
    pub reward_id: u8,
    pub policy_filter: FilterVector,
    pub critic_filter: FilterVector,
}

impl TaskSpec {
    pub fn new(
        task_id: usize,
        reward_id: u8,
        policy_filter: FilterVector,
        critic_filter: FilterVector,
    ) -> Result<Self> {
        let t = Self {
            task_id,
            reward_id,
            policy_filter,
            critic_filter,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=crate::env::NUM_REWARDS as u8).contains(&self.reward_id) {
            return Err(Error::InvalidConfig(format!(
                "task {} has reward id {}, expected 1..={}",
                self.task_id,
                self.reward_id,
                crate::env::NUM_REWARDS
            )));
        }
        self.policy_filter.validate()?;
        self.critic_filter.validate()
    }

    /// Short name such as `5F` or `5P`, after the reward id and the policy's
    /// state space.
    pub fn label(&self) -> String {
        let space = match (
            self.policy_filter.is_enabled(StateGroup::Features),
            self.policy_filter.is_enabled(StateGroup::Image),
        ) {
            (true, true) => "FP",
            (false, true) => "P",
            _ => "F",
        };
        format!("{}{space}", self.reward_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markov_requirement() {
        assert!(FilterVector::new([true, true, false]).is_ok());
        assert!(FilterVector::new([true, false, true]).is_ok());
        assert!(FilterVector::new([true, false, false]).is_err());
        assert!(FilterVector::new([false, true, true]).is_err());
    }

    #[test]
    fn reward_id_range() {
        let f = FilterVector::PROPRIO_FEATURES;
        assert!(TaskSpec::new(0, 0, f, f).is_err());
        assert!(TaskSpec::new(0, 9, f, f).is_err());
        assert_eq!(
            TaskSpec::new(3, 5, FilterVector::PROPRIO_IMAGE, f)
                .unwrap()
                .label(),
            "5P"
        );
    }

    #[test]
    fn filter_serialises_as_group_names() {
        let json = serde_json::to_string(&FilterVector::PROPRIO_IMAGE).unwrap();
        assert_eq!(json, r#"["proprio","image"]"#);
        let back: FilterVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, FilterVector::PROPRIO_IMAGE);
        assert!(serde_json::from_str::<FilterVector>(r#"["proprio","proprio"]"#).is_err());
    }
}
