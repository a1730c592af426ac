mod common;

use std::io::Cursor;

use common::*;
use rand::Rng;
use sacx::replay::{
    EpisodeLogReader, EpisodeLogWriter, EpisodeRecord, ReplayBuffer, ReplayConfig, SharedReplay,
    Trajectory, Transition,
};

fn trajectory(episode: u64, len: usize, num_tasks: usize, rng: &mut impl Rng) -> Trajectory {
    let transitions = (0..len)
        .map(|i| Transition {
            obs: random_observation(rng, 4),
            action: vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
            behavior_log_prob: rng.random_range(-3.0..0.0),
            rewards: (0..num_tasks).map(|_| rng.random()).collect(),
            executed_task: (i / 5) % num_tasks,
            terminal: false,
        })
        .collect();
    Trajectory {
        episode,
        transitions,
        final_obs: random_observation(rng, 4),
        segment_starts: (0..len).step_by(5).collect(),
    }
}

fn config(capacity: usize, length: usize) -> ReplayConfig {
    ReplayConfig {
        capacity,
        snippet_length: length,
        batch_size: 4,
        max_use: 2500,
        max_trajectory_len: capacity.min(500),
    }
}

#[test]
fn sample_returns_stored_data_exactly() {
    let mut r = rng(1);
    let mut buf = ReplayBuffer::new(config(100, 3), 2, 2).unwrap();
    let t = trajectory(7, 3, 2, &mut r);
    buf.append(t.clone()).unwrap();
    assert_eq!(buf.num_windows(), 1);
    let s = buf.sample_snippets(1, &mut r).unwrap().remove(0);
    assert_eq!(s.episode, 7);
    assert_eq!(s.start, 0);
    assert_eq!(s.steps, t.transitions);
    assert_eq!(s.bootstrap, t.final_obs);
    assert_eq!(s.next_obs(0), &t.transitions[1].obs);
}

#[test]
fn fifo_eviction_by_capacity() {
    let mut r = rng(2);
    let mut buf = ReplayBuffer::new(config(20, 2), 1, 2).unwrap();
    for e in 0..3 {
        buf.append(trajectory(e, 10, 1, &mut r)).unwrap();
        assert!(buf.num_transitions() <= 20);
    }
    let episodes: Vec<u64> = buf.trajectories().map(|t| t.episode).collect();
    assert_eq!(episodes, vec![1, 2]);
    assert_eq!(buf.evicted(), 1);
    for _ in 0..200 {
        let s = buf.sample_snippets(1, &mut r).unwrap().remove(0);
        assert_ne!(s.episode, 0);
    }
}

#[test]
fn malformed_trajectories_are_rejected() {
    let mut r = rng(3);
    let mut buf = ReplayBuffer::new(config(100, 2), 2, 2).unwrap();
    let mut t = trajectory(0, 4, 2, &mut r);
    t.transitions[1].rewards.pop();
    assert!(buf.append(t).is_err());
    let mut t = trajectory(0, 4, 2, &mut r);
    t.transitions[2].behavior_log_prob = f64::NAN;
    assert!(buf.append(t).is_err());
    let mut t = trajectory(0, 4, 2, &mut r);
    t.transitions[1].terminal = true;
    assert!(buf.append(t).is_err());
    assert!(buf.append(trajectory(0, 0, 2, &mut r)).is_err());
    assert_eq!(buf.num_transitions(), 0);
}

#[test]
fn snippets_stay_inside_one_episode() {
    let mut r = rng(4);
    let mut buf = ReplayBuffer::new(config(1000, 5), 1, 2).unwrap();
    let trajs: Vec<_> = (0..6)
        .map(|e| trajectory(e, 5 + e as usize * 3, 1, &mut r))
        .collect();
    for t in &trajs {
        buf.append(t.clone()).unwrap();
    }
    for s in buf.sample_snippets(500, &mut r).unwrap() {
        let t = &trajs[s.episode as usize];
        assert_eq!(s.steps.as_slice(), &t.transitions[s.start..s.start + 5]);
        assert_eq!(&s.bootstrap, t.next_obs(s.start + 4));
    }
}

#[test]
fn too_little_data_asks_to_wait() {
    let mut r = rng(5);
    let mut buf = ReplayBuffer::new(config(100, 10), 1, 2).unwrap();
    assert!(matches!(
        buf.sample_snippets(1, &mut r),
        Err(sacx::Error::InsufficientData { .. })
    ));
    buf.append(trajectory(0, 9, 1, &mut r)).unwrap();
    assert!(buf.sample_snippets(1, &mut r).is_err());
}

#[test]
fn transitions_retire_after_max_use() {
    let mut r = rng(6);
    let mut cfg = config(100, 2);
    cfg.max_use = 2500;
    let mut buf = ReplayBuffer::new(cfg, 1, 2).unwrap();
    // Windows: [0,1] and [1,2]; step 1 is in both.
    buf.append(trajectory(0, 3, 1, &mut r)).unwrap();
    let mut served_step1 = 0;
    while buf.num_windows() > 0 {
        let s = buf.sample_snippets(1, &mut r).unwrap().remove(0);
        served_step1 += 1;
        assert!(s.start <= 1);
    }
    assert_eq!(served_step1, 2500);
    assert_eq!(buf.num_trajectories(), 0);
    assert!(buf.sample_snippets(1, &mut r).is_err());
}

#[test]
fn retired_step_is_never_served_again() {
    let mut r = rng(7);
    let mut cfg = config(100, 1);
    cfg.max_use = 2500;
    let mut buf = ReplayBuffer::new(cfg, 1, 2).unwrap();
    buf.append(trajectory(0, 4, 1, &mut r)).unwrap();
    let mut counts = [0u32; 4];
    while let Ok(batch) = buf.sample_snippets(1, &mut r) {
        counts[batch[0].start] += 1;
        if let Some(uc) = buf.use_counts(0) {
            assert!(uc.iter().all(|&c| c <= 2500));
        }
    }
    assert_eq!(counts, [2500; 4]);
    assert_eq!(buf.retired_transitions(), 4);
}

#[test]
fn window_sampling_is_uniform() {
    let mut r = rng(8);
    let mut cfg = config(1000, 4);
    cfg.max_use = u32::MAX;
    let mut buf = ReplayBuffer::new(cfg, 1, 2).unwrap();
    let lens = [4, 7, 12, 20];
    for (e, &n) in lens.iter().enumerate() {
        buf.append(trajectory(e as u64, n, 1, &mut r)).unwrap();
    }
    let windows: Vec<(u64, usize)> = lens
        .iter()
        .enumerate()
        .flat_map(|(e, &n)| (0..=n - 4).map(move |s| (e as u64, s)))
        .collect();
    assert_eq!(windows.len(), buf.num_windows());
    let draws = 100_000;
    let mut counts = vec![0u64; windows.len()];
    for s in buf.sample_snippets(draws, &mut r).unwrap() {
        counts[windows
            .iter()
            .position(|&w| w == (s.episode, s.start))
            .unwrap()] += 1;
    }
    let expected = draws as f64 / windows.len() as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 31 degrees of freedom: mean 31, sd ≈ 7.9; 3σ ≈ 54.6.
    let dof = (windows.len() - 1) as f64;
    assert!(chi2 < dof + 3.0 * (2.0 * dof).sqrt(), "chi2 {chi2}");
}

#[test]
fn concurrent_writer_and_reader() {
    let shared = SharedReplay::new(ReplayBuffer::new(config(5000, 3), 1, 2).unwrap());
    let writer = {
        let shared = shared.clone();
        std::thread::spawn(move || {
            let mut r = rng(9);
            for e in 0..50 {
                shared.append(trajectory(e, 12, 1, &mut r)).unwrap();
            }
        })
    };
    let mut r = rng(10);
    let mut served = 0;
    while served < 200 {
        if let Ok(batch) = shared.sample_snippets(2, &mut r) {
            for s in batch {
                assert_eq!(s.len(), 3);
                served += 1;
            }
        } else {
            std::thread::yield_now();
        }
    }
    writer.join().unwrap();
    assert_eq!(shared.lock().num_transitions(), 600);
}

#[test]
fn episode_log_round_trip() {
    let mut r = rng(11);
    let trajs: Vec<_> = (0..3).map(|e| trajectory(e, 6, 3, &mut r)).collect();
    let mut w = EpisodeLogWriter::new(Vec::new(), 3).unwrap();
    for t in &trajs {
        w.write_trajectory(t).unwrap();
    }
    let bytes = w.into_inner();
    let reader = EpisodeLogReader::new(Cursor::new(&bytes)).unwrap();
    assert_eq!(reader.num_tasks(), 3);
    let back: Vec<EpisodeRecord> = reader.collect::<Result<_, _>>().unwrap();
    let expected: Vec<EpisodeRecord> = trajs
        .iter()
        .flat_map(EpisodeRecord::from_trajectory)
        .collect();
    assert_eq!(back, expected);
    for (a, b) in back.iter().zip(&expected) {
        assert_eq!(a.behavior_log_prob.to_bits(), b.behavior_log_prob.to_bits());
    }
}

#[test]
fn episode_log_rejects_other_versions() {
    let bad = b"{\"format\":\"sacx-episode-log\",\"version\":99,\"num_tasks\":1}\n";
    assert!(EpisodeLogReader::new(Cursor::new(&bad[..])).is_err());
    let garbage = b"{\"format\":\"sacx-episode-log\",\"version\":1,\"num_tasks\":1}\n{not json}\n";
    let mut rd = EpisodeLogReader::new(Cursor::new(&garbage[..])).unwrap();
    let err = rd.next().unwrap().unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
}
