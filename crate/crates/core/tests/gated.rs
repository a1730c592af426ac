mod common;

use common::*;
use rand::Rng;
use sacx::env::ObservationScaling;
use sacx::gated::{
    gate_and_merge, FilterVector, GatedParams, ObsBatch, StateGroup, TaskSpec, VarianceBounds,
    TARGET_SYNC_PERIOD,
};
use sacx::nn::{finite_diff_tree, ParamTree, Tensor};

fn batch(obs: &[sacx::env::Observation]) -> ObsBatch {
    ObsBatch::from_observations(obs, &ObservationScaling::default(), FilterVector::ALL).unwrap()
}

/// Replaces every disabled group of `filter` in the batch with fresh noise.
fn perturb_disabled(obs: &ObsBatch, filter: FilterVector, rng: &mut impl Rng) -> ObsBatch {
    let mut out = obs.clone();
    for g in StateGroup::ALL {
        if filter.is_enabled(g) {
            continue;
        }
        let t = out.group_mut(g).unwrap();
        for v in t.data_mut() {
            *v = rng.random_range(-5.0..5.0);
        }
    }
    out
}

fn encoder_is_zero(p: &GatedParams, g: StateGroup) -> bool {
    p.encoders[g.index()]
        .tensors()
        .iter()
        .all(|t| t.data().iter().all(|&v| v == 0.0))
}

#[test]
fn embeddings_are_bounded_and_path_independent() {
    let mut r = rng(1);
    let model = small_model(1);
    let p = model.actor.net.init_params(&mut r);
    let a = random_observation(&mut r, IMAGE);
    let mut b = a.clone();
    b.frames[1] = random_frame(&mut r, IMAGE);
    let enc = model
        .actor
        .net
        .encode(&p, &batch(&[a, b]), FilterVector::ALL, false)
        .unwrap();
    for g in StateGroup::ALL {
        let e = enc.embedding(g).unwrap();
        assert_eq!(e.row_len(), 6);
        assert!(e.data().iter().all(|v| v.abs() < 1.0));
        let same = e.row(0) == e.row(1);
        assert_eq!(same, g != StateGroup::Image, "{g:?}");
    }
}

#[test]
fn zero_encoder_gives_zero_embedding() {
    let mut r = rng(2);
    let model = small_model(1);
    let p = model.critic.net.zero_params();
    let obs = ObsBatch::from_tensors([
        Some(Tensor::zeros(&[1, 8])),
        Some(Tensor::zeros(&[1, 8])),
        Some(Tensor::zeros(&[1, 3, IMAGE, IMAGE])),
    ])
    .unwrap();
    let enc = model
        .critic
        .net
        .encode(&p, &obs, FilterVector::ALL, false)
        .unwrap();
    for g in StateGroup::ALL {
        assert!(enc.embedding(g).unwrap().data().iter().all(|&v| v == 0.0));
    }
    let _ = random_observation(&mut r, IMAGE);
}

#[test]
fn merge_sums_enabled_groups_only() {
    let mut r = rng(3);
    let e = [
        Some(random_tensor(&mut r, &[2, 4])),
        Some(random_tensor(&mut r, &[2, 4])),
        Some(random_tensor(&mut r, &[2, 4])),
    ];
    let all = gate_and_merge(&e, FilterVector::ALL, 2, 4).unwrap();
    for i in 0..8 {
        let expected = e[0].as_ref().unwrap().data()[i]
            + e[1].as_ref().unwrap().data()[i]
            + e[2].as_ref().unwrap().data()[i];
        assert_eq!(all.data()[i], expected);
    }
    let pi = gate_and_merge(&e, FilterVector::PROPRIO_IMAGE, 2, 4).unwrap();
    let mut e2 = e.clone();
    e2[1] = Some(random_tensor(&mut r, &[2, 4]));
    assert_eq!(
        pi,
        gate_and_merge(&e2, FilterVector::PROPRIO_IMAGE, 2, 4).unwrap()
    );
    let none = gate_and_merge(&e, FilterVector::unchecked([false; 3]), 2, 4).unwrap();
    assert!(none.data().iter().all(|&v| v == 0.0));
}

#[test]
fn disabled_groups_change_nothing_and_get_no_gradient() {
    let mut r = rng(4);
    let tasks = all_task_configs(5);
    let model = small_model(tasks.len());
    let store = model.init_store(&mut r);
    let obs: Vec<_> = (0..3).map(|_| random_observation(&mut r, IMAGE)).collect();
    let base = batch(&obs);
    let actions = random_actions(&mut r, 3, 2);
    for task in &tasks {
        let pf = perturb_disabled(&base, task.policy_filter, &mut r);
        let a0 = model.actor.forward(&store.actor, &base, task).unwrap();
        let a1 = model.actor.forward(&store.actor, &pf, task).unwrap();
        assert_eq!(a0.mean, a1.mean, "{}", task.label());
        assert_eq!(a0.std, a1.std);

        let cf = perturb_disabled(&base, task.critic_filter, &mut r);
        let q0 = model
            .critic
            .forward(&store.critic, &base, &actions, task)
            .unwrap();
        let q1 = model
            .critic
            .forward(&store.critic, &cf, &actions, task)
            .unwrap();
        assert_eq!(q0, q1);

        let ones = Tensor::filled(&[3, 2], 1.0);
        let ga = model
            .actor
            .vjp(&store.actor, &base, task, &ones, &ones)
            .unwrap();
        let (gc, _) = model
            .critic
            .vjp(
                &store.critic,
                &base,
                &actions,
                task,
                &Tensor::filled(&[3, 1], 1.0),
            )
            .unwrap();
        for g in StateGroup::ALL {
            assert_eq!(
                encoder_is_zero(&ga, g),
                !task.policy_filter.is_enabled(g),
                "actor {g:?} {}",
                task.label()
            );
            assert_eq!(
                encoder_is_zero(&gc, g),
                !task.critic_filter.is_enabled(g),
                "critic {g:?}"
            );
        }
    }
}

#[test]
fn variance_clamp_holds_for_extreme_parameters() {
    let mut r = rng(5);
    let model = small_model(1);
    let task = TaskSpec::new(0, 5, FilterVector::ALL, FilterVector::ALL).unwrap();
    let mut p = model.actor.net.init_params(&mut r);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v *= 50.0;
        }
    }
    let obs: Vec<_> = (0..8).map(|_| random_observation(&mut r, IMAGE)).collect();
    let g = model.actor.forward(&p, &batch(&obs), &task).unwrap();
    let VarianceBounds { min, max } = VarianceBounds::default();
    for s in g.std.data() {
        assert!((min..=max).contains(&(s * s)), "{}", s * s);
    }
    assert!(g.mean.data().iter().all(|m| m.abs() <= 1.0));
}

#[test]
fn identical_heads_give_identical_outputs() {
    let mut r = rng(6);
    let model = small_model(2);
    let mut p = model.actor.net.init_params(&mut r);
    p.heads[1] = p.heads[0].clone();
    let f = FilterVector::PROPRIO_FEATURES;
    let t0 = TaskSpec::new(0, 5, f, f).unwrap();
    let t1 = TaskSpec::new(1, 2, f, f).unwrap();
    let obs = batch(&[random_observation(&mut r, IMAGE)]);
    let a = model.actor.forward(&p, &obs, &t0).unwrap();
    let b = model.actor.forward(&p, &obs, &t1).unwrap();
    assert_eq!(a.mean, b.mean);
    assert_eq!(a.std, b.std);
}

#[test]
fn unknown_task_is_rejected() {
    let mut r = rng(7);
    let model = small_model(1);
    let p = model.actor.net.init_params(&mut r);
    let f = FilterVector::PROPRIO_FEATURES;
    let t = TaskSpec::new(3, 5, f, f).unwrap();
    let obs = batch(&[random_observation(&mut r, IMAGE)]);
    assert!(matches!(
        model.actor.forward(&p, &obs, &t),
        Err(sacx::Error::UnknownTask {
            task_id: 3,
            num_tasks: 1
        })
    ));
}

#[test]
fn critic_target_and_zero_head() {
    let mut r = rng(8);
    let model = small_model(1);
    let mut store = model.init_store(&mut r);
    let t = TaskSpec::new(
        0,
        5,
        FilterVector::PROPRIO_IMAGE,
        FilterVector::PROPRIO_FEATURES,
    )
    .unwrap();
    let obs = batch(&[
        random_observation(&mut r, IMAGE),
        random_observation(&mut r, IMAGE),
    ]);
    let a = random_actions(&mut r, 2, 2);
    assert_eq!(
        model.critic.forward(&store.critic, &obs, &a, &t).unwrap(),
        model
            .critic
            .forward(&store.target_critic, &obs, &a, &t)
            .unwrap()
    );
    let head = &mut store.critic.heads[0];
    let mut ts = head.tensors_mut();
    ts[0].fill(0.0);
    ts[1].fill(0.75);
    let q = model.critic.forward(&store.critic, &obs, &a, &t).unwrap();
    assert_eq!(q, vec![0.75, 0.75]);
}

#[test]
fn asymmetric_critic_ignores_pixels() {
    let mut r = rng(9);
    let model = small_model(1);
    let store = model.init_store(&mut r);
    let t = TaskSpec::new(
        0,
        5,
        FilterVector::PROPRIO_IMAGE,
        FilterVector::PROPRIO_FEATURES,
    )
    .unwrap();
    let o = random_observation(&mut r, IMAGE);
    let mut o2 = o.clone();
    o2.frames = std::array::from_fn(|_| random_frame(&mut r, IMAGE));
    let s = ObservationScaling::default();
    let q1 = model
        .critic
        .value(&store.critic, &o, &[0.1, 0.2], &t, &s)
        .unwrap();
    let q2 = model
        .critic
        .value(&store.critic, &o2, &[0.1, 0.2], &t, &s)
        .unwrap();
    assert_eq!(q1, q2);
}

#[test]
fn heads_are_independent_and_encoders_shared() {
    let mut r = rng(10);
    let model = small_model(2);
    let mut p = model.actor.net.init_params(&mut r);
    let f = FilterVector::PROPRIO_FEATURES;
    let t0 = TaskSpec::new(0, 5, f, f).unwrap();
    let t1 = TaskSpec::new(1, 1, f, f).unwrap();
    let obs = batch(&[random_observation(&mut r, IMAGE)]);
    let before = model.actor.forward(&p, &obs, &t1).unwrap();
    for t in p.heads[0].tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += 0.3);
    }
    let after = model.actor.forward(&p, &obs, &t1).unwrap();
    assert_eq!(before.mean, after.mean);

    let ones = Tensor::filled(&[1, 2], 1.0);
    let g = model.actor.vjp(&p, &obs, &t0, &ones, &ones).unwrap();
    assert!(!encoder_is_zero(&g, StateGroup::Proprio));
    assert!(!encoder_is_zero(&g, StateGroup::Features));
    assert!(g.heads[1]
        .tensors()
        .iter()
        .all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn target_sync_period() {
    let mut r = rng(11);
    let model = small_model(1);
    let mut store = model.init_store(&mut r);
    let mut syncs = 0;
    for step in 1..=3500u64 {
        // Stand-in for an optimiser update.
        store.actor.heads[0].tensors_mut()[1].data_mut()[0] += 1e-3;
        let before = store.target_actor.clone();
        if store.sync_targets(step, TARGET_SYNC_PERIOD) {
            syncs += 1;
            assert_eq!(store.target_actor, store.actor);
            assert_eq!(store.target_critic, store.critic);
        } else {
            assert_eq!(store.target_actor, before);
        }
    }
    assert_eq!(syncs, 3);
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let mut r = rng(12);
    let tasks = all_task_configs(5);
    let model = small_model(tasks.len());
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for instance in 0..20 {
        let task = &tasks[instance % tasks.len()];
        let store = model.init_store(&mut r);
        let obs: Vec<_> = (0..2).map(|_| random_observation(&mut r, IMAGE)).collect();
        let obs = batch(&obs);
        let actions = random_actions(&mut r, 2, 2);
        let w_mean = random_tensor(&mut r, &[2, 2]);
        let w_std = random_tensor(&mut r, &[2, 2]);
        let w_q = random_tensor(&mut r, &[2, 1]);

        let ga = model
            .actor
            .vjp(&store.actor, &obs, task, &w_mean, &w_std)
            .unwrap();
        let e = finite_diff_tree(&store.actor, &ga, eps, 1, |p| {
            let g = model.actor.forward(p, &obs, task)?;
            Ok(dot(&g.mean, &w_mean) + dot(&g.std, &w_std))
        })
        .unwrap();
        worst = worst.max(e);

        let (gc, da) = model
            .critic
            .vjp(&store.critic, &obs, &actions, task, &w_q)
            .unwrap();
        let e = finite_diff_tree(&store.critic, &gc, eps, 1, |p| {
            Ok(dot(
                &Tensor::from_vec(model.critic.forward(p, &obs, &actions, task)?),
                &w_q,
            ))
        })
        .unwrap();
        worst = worst.max(e);

        let mut a = actions.clone();
        for j in 0..a.len() {
            let orig = a.data()[j];
            a.data_mut()[j] = orig + eps;
            let plus = dot(
                &Tensor::from_vec(model.critic.forward(&store.critic, &obs, &a, task).unwrap()),
                &w_q,
            );
            a.data_mut()[j] = orig - eps;
            let minus = dot(
                &Tensor::from_vec(model.critic.forward(&store.critic, &obs, &a, task).unwrap()),
                &w_q,
            );
            a.data_mut()[j] = orig;
            worst = worst.max(sacx::nn::relative_error(
                da.data()[j],
                (plus - minus) / (2.0 * eps),
            ));
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst:e}");
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}
