use hwm_envs::buffer::{BufferError, NO_ACTION};
use hwm_envs::{DistractorGrid, EnvStep, Episode, GridConfig, ReplayBuffer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OBS: [usize; 1] = [2];

/// Synthetic episode of `len` steps whose observation bytes encode the
/// episode tag and step index.
fn episode(tag: u8, len: usize) -> Episode {
    let step = |t: usize, done: bool| EnvStep {
        obs: vec![tag, t as u8],
        reward: t as f64,
        done,
        state: [t as f64, 0.0, 0.0, 0.0],
    };
    let mut e = Episode::start(&step(0, len == 1));
    for t in 1..len {
        e.push((t % 4) as u8, &step(t, t + 1 == len));
    }
    e
}

fn rollout(seed: u64) -> Episode {
    let mut env = DistractorGrid::new(GridConfig {
        max_steps: 30,
        ..GridConfig::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ep = Episode::start(&env.reset(seed));
    while !env.is_done() {
        let a = rng.random_range(0..4u8);
        ep.push(a, &env.step(a as usize).unwrap());
    }
    ep
}

#[test]
fn single_exact_length_episode_is_always_sampled_whole() {
    let mut buf = ReplayBuffer::new(&OBS, 4, 1000);
    buf.add(episode(7, 16)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seg in buf.sample_segments(64, 16, &mut rng).unwrap() {
        assert_eq!((seg.episode, seg.offset), (0, 0));
        assert_eq!(seg.actions, buf.episode(0).actions);
        assert_eq!(seg.obs, buf.episode(0).obs);
    }
}

#[test]
fn insufficient_data_reports_counts() {
    let mut buf = ReplayBuffer::new(&OBS, 4, 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        buf.sample_segments(1, 4, &mut rng),
        Err(BufferError::Insufficient {
            valid: 0,
            episodes: 0,
            ..
        })
    ));
    buf.add(episode(1, 3)).unwrap();
    let err = buf.sample_segments(1, 4, &mut rng).unwrap_err();
    assert!(matches!(
        err,
        BufferError::Insufficient {
            length: 4,
            valid: 0,
            episodes: 1
        }
    ));
    assert!(err
        .to_string()
        .contains("0 valid start offsets across 1 episodes"));
}

#[test]
fn offsets_uniform_over_valid_pairs() {
    let mut buf = ReplayBuffer::new(&OBS, 4, 10_000);
    let lens = [5usize, 9, 12, 20];
    for (i, &l) in lens.iter().enumerate() {
        buf.add(episode(i as u8, l)).unwrap();
    }
    let t = 4;
    let cells: Vec<(usize, usize)> = lens
        .iter()
        .enumerate()
        .flat_map(|(e, &l)| (0..=l - t).map(move |o| (e, o)))
        .collect();
    assert_eq!(cells.len(), buf.valid_offsets(t));
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut hist = vec![0usize; cells.len()];
    for seg in buf.sample_segments(draws, t, &mut rng).unwrap() {
        let k = cells
            .iter()
            .position(|&c| c == (seg.episode, seg.offset))
            .unwrap();
        hist[k] += 1;
    }
    let expected = draws as f64 / cells.len() as f64;
    let chi2: f64 = hist
        .iter()
        .map(|&h| (h as f64 - expected).powi(2) / expected)
        .sum();
    // 33 degrees of freedom; the 0.999 quantile is 63.87.
    assert_eq!(cells.len() - 1, 33);
    assert!(chi2 < 63.87, "chi-square {chi2}");
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let mut buf = ReplayBuffer::new(&[3, 16, 16], 4, 10_000);
    for s in 0..5 {
        buf.add(rollout(s)).unwrap();
    }
    let a = buf
        .sample_segments(8, 6, &mut ChaCha8Rng::seed_from_u64(4))
        .unwrap();
    let b = buf
        .sample_segments(8, 6, &mut ChaCha8Rng::seed_from_u64(4))
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn fifo_eviction_drops_whole_oldest_episodes() {
    let mut buf = ReplayBuffer::new(&OBS, 4, 25);
    for i in 0..5u8 {
        buf.add(episode(i, 10)).unwrap();
    }
    assert_eq!(buf.len(), 2);
    assert_eq!(buf.steps(), 20);
    assert_eq!(buf.total_episodes(), 5);
    assert_eq!(buf.episode(0).obs[0], 3);
    assert_eq!(buf.episode(1).obs[0], 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seg in buf.sample_segments(50, 10, &mut rng).unwrap() {
        assert!(seg.episode == 3 || seg.episode == 4);
        assert_eq!(seg.obs[0], seg.episode as u8);
    }
}

#[test]
fn rejects_malformed_episodes() {
    let mut buf = ReplayBuffer::new(&OBS, 4, 100);
    let mut e = episode(0, 4);
    e.dones[1] = 1;
    assert!(buf.add(e).is_err());
    let mut e = episode(0, 4);
    e.actions[2] = 9;
    assert!(buf.add(e).is_err());
    let mut e = episode(0, 4);
    e.obs.pop();
    assert!(buf.add(e).is_err());
    assert!(buf.is_empty());
}

#[test]
fn file_roundtrip_is_bitwise() {
    let mut buf = ReplayBuffer::new(&[3, 16, 16], 4, 10_000);
    for s in 0..6 {
        buf.add(rollout(s)).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("replay.bin");
    buf.save(&path).unwrap();
    // Capacity is a runtime setting and not stored.
    let back = ReplayBuffer::load(&path).unwrap();
    assert_eq!(back.capacity(), buf.steps());
    assert!(back.episodes().eq(buf.episodes()));
    let back = ReplayBuffer::read(
        &mut std::fs::File::open(&path).unwrap(),
        Some(buf.capacity()),
    )
    .unwrap();
    assert_eq!(back, buf);
    let mut bytes = Vec::new();
    buf.write(&mut bytes).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(&bytes[..8], b"HWMBUF\0\0");
    assert!(ReplayBuffer::read(&mut &bytes[..bytes.len() - 1], None).is_err());
}

proptest! {
    #[test]
    fn segments_respect_episode_boundaries(
        lens in prop::collection::vec(1usize..30, 1..8),
        t in 1usize..12,
        seed in any::<u64>(),
    ) {
        let mut buf = ReplayBuffer::new(&OBS, 4, 10_000);
        for (i, &l) in lens.iter().enumerate() {
            buf.add(episode(i as u8, l)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match buf.sample_segments(16, t, &mut rng) {
            Err(BufferError::Insufficient { valid, .. }) => {
                prop_assert_eq!(valid, 0);
                prop_assert!(lens.iter().all(|&l| l < t));
            }
            Err(e) => panic!("{e}"),
            Ok(segs) => for seg in segs {
                prop_assert_eq!(seg.len(), t);
                let ep = buf.episode(seg.episode);
                prop_assert!(seg.offset + t <= ep.len());
                // Every observation comes from the same episode, in order.
                for k in 0..t {
                    prop_assert_eq!(seg.obs[2 * k], seg.episode as u8);
                    prop_assert_eq!(seg.obs[2 * k + 1] as usize, seg.offset + k);
                }
                prop_assert!(seg.dones[..t - 1].iter().all(|&d| d == 0));
                prop_assert_eq!(seg.actions[0] == NO_ACTION, seg.offset == 0);
            },
        }
    }

    #[test]
    fn eviction_keeps_steps_within_capacity(
        lens in prop::collection::vec(1usize..40, 1..20),
        capacity in 1usize..120,
    ) {
        let mut buf = ReplayBuffer::new(&OBS, 4, capacity);
        for (i, &l) in lens.iter().enumerate() {
            buf.add(episode(i as u8, l)).unwrap();
            let total: usize = buf.episodes().map(|e| e.len()).sum();
            prop_assert_eq!(total, buf.steps());
            prop_assert!(buf.steps() <= capacity || buf.len() == 1);
            prop_assert_eq!(buf.total_episodes(), i + 1);
            // Stored episodes are the newest ones, contiguous.
            let first = buf.total_episodes() - buf.len();
            for (k, e) in buf.episodes().enumerate() {
                prop_assert_eq!(e.obs[0] as usize, first + k);
            }
        }
    }
}
