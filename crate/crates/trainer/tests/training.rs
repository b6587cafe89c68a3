// Index loops mirror the subscripts of the formulas they check.
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

mod common;

use hwm_core::Tensor;
use hwm_envs::ReplayBuffer;
use hwm_trainer::agent::{segments_to_batch, Agent};
use hwm_trainer::train::{BUFFER_FILE, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE};
use hwm_trainer::{make_buffer, offline_train, read_metrics, train, ExperimentConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn zero_steps_leaves_empty_metrics_and_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::with(&common::tiny(), &[("total_steps", "0")]);
    let s = train(&cfg, dir.path()).unwrap();
    assert_eq!(s.updates, 0);
    assert!(read_metrics(&dir.path().join(METRICS_FILE))
        .unwrap()
        .is_empty());
    let other = Agent::new(&cfg, &mut ChaCha8Rng::seed_from_u64(98)).unwrap();
    let mut loaded = Agent::new(&cfg, &mut ChaCha8Rng::seed_from_u64(98)).unwrap();
    loaded.load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_ne!(other.wm.params.values(), loaded.wm.params.values());
    assert!(loaded.wm.params.all_finite());
    assert_eq!(
        ExperimentConfig::load(&dir.path().join(CONFIG_FILE)).unwrap(),
        cfg
    );
}

#[test]
fn same_seed_runs_are_identical_apart_from_the_clock() {
    let cfg = common::tiny();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sa = train(&cfg, a.path()).unwrap();
    let sb = train(&cfg, b.path()).unwrap();
    assert_eq!(sa, sb);
    let ra: Vec<_> = read_metrics(&a.path().join(METRICS_FILE))
        .unwrap()
        .iter()
        .map(|r| r.without_clock())
        .collect();
    let rb: Vec<_> = read_metrics(&b.path().join(METRICS_FILE))
        .unwrap()
        .iter()
        .map(|r| r.without_clock())
        .collect();
    assert_eq!(ra, rb);
    // (200 - 50) / 5 + 1 updates, from step 50 to 200 inclusive
    assert_eq!(ra.len(), 31);
    assert_eq!(ra[0].env_steps, 50);
    assert_eq!(ra.iter().filter(|r| r.eval_return.is_some()).count(), 2);
    assert_eq!(
        std::fs::read(a.path().join(CHECKPOINT_FILE)).unwrap(),
        std::fs::read(b.path().join(CHECKPOINT_FILE)).unwrap()
    );

    let other = tempfile::tempdir().unwrap();
    train(&common::with(&cfg, &[("seed", "1")]), other.path()).unwrap();
    let rc = read_metrics(&other.path().join(METRICS_FILE)).unwrap();
    assert_ne!(rc[0].loss_o, ra[0].loss_o);
}

#[test]
fn schemes_share_initial_losses_and_differ_only_in_weights() {
    let base = common::with(&common::tiny(), &[("total_steps", "50")]);
    let mut first = Vec::new();
    for scheme in [
        "fixed",
        "reciprocal",
        "harmony",
        "harmony-rectified",
        "uw",
        "dwa",
    ] {
        let dir = tempfile::tempdir().unwrap();
        train(&common::with(&base, &[("scheme", scheme)]), dir.path()).unwrap();
        let recs = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(recs.len(), 1);
        first.push((scheme, recs[0].clone()));
    }
    for (scheme, r) in &first[1..] {
        assert_eq!(r.losses(), first[0].1.losses(), "{scheme}");
    }
    let get = |name: &str| &first.iter().find(|(s, _)| *s == name).unwrap().1;
    let l = get("fixed").losses();
    // σ starts at 1 for every learned scheme
    assert_eq!(get("harmony").sigmas(), [1.0; 3]);
    assert_eq!(get("harmony").weights(), [1.0; 3]);
    for i in 0..3 {
        assert!((get("reciprocal").weights()[i] - 1.0 / l[i]).abs() < 1e-12 * (1.0 / l[i]));
    }
    assert_eq!(get("fixed").weights(), [1.0; 3]);
}

fn gradients(cfg: &ExperimentConfig) -> (Agent, Vec<Tensor<f64>>) {
    let dir = tempfile::tempdir().unwrap();
    let buffer_cfg = common::with(&common::tiny(), &[("total_steps", "120")]);
    let (_, buffer) = make_buffer(&buffer_cfg, dir.path()).unwrap();
    let segs = buffer
        .sample_segments(
            cfg.batch_size,
            cfg.seq_len,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
    let batch = segments_to_batch(&segs, buffer.obs_len());
    let agent = Agent::new(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let noise = Tensor::from_fn(&[batch.steps * batch.batch, cfg.model_stoch], |i| {
        ((i * 7919) % 13) as f64 / 6.0 - 1.0
    });
    let g = agent.gradients(&batch, &noise).unwrap();
    (agent, g.model)
}

fn by_prefix<'a>(
    agent: &'a Agent,
    grads: &'a [Tensor<f64>],
    prefix: &'a str,
) -> impl Iterator<Item = &'a Tensor<f64>> + 'a {
    agent
        .wm
        .params
        .iter()
        .zip(grads)
        .filter(move |((n, _), _)| n.starts_with(prefix))
        .map(|(_, g)| g)
}

#[test]
fn zero_observation_weight_cuts_the_decoder_off() {
    let (agent, g) = gradients(&common::with(&common::tiny(), &[("wo", "0")]));
    assert!(by_prefix(&agent, &g, "wm.decoder").all(|t| t.max_abs() == 0.0));
    assert!(by_prefix(&agent, &g, "wm.reward").any(|t| t.max_abs() > 0.0));
    let (agent, g) = gradients(&common::tiny());
    assert!(by_prefix(&agent, &g, "wm.decoder").any(|t| t.max_abs() > 0.0));
}

#[test]
fn reward_weight_scales_exactly_the_reward_gradient() {
    let base = common::tiny();
    let (_, g1) = gradients(&base);
    let (_, g100) = gradients(&common::with(&base, &[("wr", "100")]));
    let (_, gr) = gradients(&common::with(
        &base,
        &[("wo", "0"), ("wr", "1"), ("wd", "0")],
    ));
    for ((a, b), r) in g1.iter().zip(&g100).zip(&gr) {
        for ((&x, &y), &z) in a.data().iter().zip(b.data()).zip(r.data()) {
            let expect = x + 99.0 * z;
            assert!(
                (y - expect).abs() <= 1e-9 * expect.abs().max(1e-6),
                "{y} vs {expect}"
            );
        }
    }
}

#[test]
fn make_buffer_then_offline_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny();
    let (summary, buffer) = make_buffer(&cfg, dir.path()).unwrap();
    assert_eq!(summary.episodes as usize, buffer.len());
    assert_eq!(summary.episode_returns.len(), buffer.len());
    for (ep, r) in buffer.episodes().zip(&summary.episode_returns) {
        assert!((ep.total_return() - r).abs() < 1e-9);
    }
    let loaded = ReplayBuffer::load(&dir.path().join(BUFFER_FILE)).unwrap();
    assert_eq!(loaded.steps(), buffer.steps());
    assert!(loaded
        .episodes()
        .zip(buffer.episodes())
        .all(|(a, b)| a == b));

    let out = tempfile::tempdir().unwrap();
    let off = common::with(
        &cfg,
        &[("offline.updates", "7"), ("offline.behavior", "false")],
    );
    let s = offline_train(&off, &loaded, out.path()).unwrap();
    assert_eq!(s.updates, 7);
    let recs = read_metrics(&out.path().join(METRICS_FILE)).unwrap();
    assert_eq!(
        recs.iter().map(|r| r.env_steps).collect::<Vec<_>>(),
        [5, 10, 15, 20, 25, 30, 35]
    );
    assert!(recs
        .iter()
        .all(|r| r.actor_entropy.is_none() && r.eval_return.is_none()));
}

#[test]
fn offline_training_rejects_a_mismatched_buffer() {
    let buffer = ReplayBuffer::new(&[1, 4, 4], 4, 10);
    let err = offline_train(
        &common::tiny(),
        &buffer,
        tempfile::tempdir().unwrap().path(),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
