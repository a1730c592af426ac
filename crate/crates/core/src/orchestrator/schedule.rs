use rand::Rng;

use crate::gated::TaskSpec;

/// Uniform choice of the intention to execute next.
///
/// # Panics
/// On an empty task set; configs are validated to contain at least one task.
pub fn schedule_intention<R: Rng + ?Sized>(tasks: &[TaskSpec], rng: &mut R) -> usize {
    assert!(!tasks.is_empty(), "cannot schedule from an empty task set");
    tasks[rng.random_range(0..tasks.len())].task_id
}

/// Step indices at which a new intention is drawn.
pub fn segment_starts(episode_length: usize, switch_period: usize) -> Vec<usize> {
    (0..episode_length).step_by(switch_period.max(1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gated::FilterVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_task_is_always_chosen() {
        let t = [TaskSpec::new(
            0,
            5,
            FilterVector::PROPRIO_FEATURES,
            FilterVector::PROPRIO_FEATURES,
        )
        .unwrap()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| schedule_intention(&t, &mut rng) == 0));
    }

    #[test]
    fn five_segments_per_default_episode() {
        assert_eq!(segment_starts(500, 100), [0, 100, 200, 300, 400]);
    }
}
