use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regent_core::codec::*;
use regent_core::distance::Metric;
use regent_core::envs::{generate_demos, EnvFamily, EnvOverrides};
use regent_core::retrieval::{designate_retrieval_set, preprocess};
use regent_core::types::*;

/// Awkward but finite reals: signed zeros, subnormals, huge magnitudes.
fn real(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..6) {
        0 => -0.0,
        1 => f64::MIN_POSITIVE / 3.0,
        2 => rng.gen_range(-1e300..1e300),
        _ => rng.gen_range(-2.0..2.0),
    }
}

fn random_demoset(rng: &mut ChaCha8Rng) -> DemoSet {
    let discrete = rng.gen_bool(0.5);
    let obs_len = rng.gen_range(1..6);
    let spec = EnvSpec {
        env_id: format!("synthetic-{}", rng.gen::<u16>()),
        obs_kind: ObsKind::Vector,
        obs_dims: vec![obs_len],
        act_kind: if discrete { ActKind::Discrete } else { ActKind::Continuous },
        act_dims: rng.gen_range(2..7),
        horizon: rng.gen_range(1..8),
        random_return: rng.gen_range(-1.0..0.0),
        expert_return: rng.gen_range(1.0..2.0),
    };
    let n_demos = rng.gen_range(2..6);
    let demos: Vec<Demonstration> = (0..n_demos)
        .map(|i| {
            let len = rng.gen_range(1..=spec.horizon as usize);
            let steps: Vec<Step> = (0..len)
                .map(|t| Step {
                    state: ObsValue((0..obs_len).map(|_| real(rng)).collect()),
                    prev_reward: if t == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) },
                    action: if discrete {
                        ActValue::Discrete(rng.gen_range(0..spec.act_dims))
                    } else {
                        ActValue::Continuous((0..spec.act_dims).map(|_| rng.gen_range(-1.0..=1.0)).collect())
                    },
                })
                .collect();
            let mut demo = Demonstration {
                demo_id: i * 3 + 1,
                level_seed: rng.gen(),
                steps,
                final_reward: rng.gen_range(-1.0..1.0),
                total_return: 0.0,
            };
            demo.total_return = demo.replayed_return();
            demo
        })
        .collect();
    let retrieval_ids = demos.iter().map(|d| d.demo_id).filter(|_| rng.gen_bool(0.7)).collect();
    let set = DemoSet { spec, demos, retrieval_ids };
    set.validate().unwrap();
    set
}

#[test]
fn random_demosets_round_trip_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let set = random_demoset(&mut rng);
        let bytes = encode_demoset(&set).unwrap();
        let back = decode_demoset(&bytes).unwrap();
        assert_eq!(back, set);
        // re-encoding proves every bit survived, including signed zeros
        assert_eq!(encode_demoset(&back).unwrap(), bytes);
    }
}

#[test]
fn random_ctxsets_round_trip_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut done = 0;
    while done < 100 {
        let mut set = random_demoset(&mut rng);
        // tame magnitudes so distances stay finite
        for d in &mut set.demos {
            for s in &mut d.steps {
                s.state.0.iter_mut().for_each(|v| *v = v.clamp(-2.0, 2.0));
            }
        }
        set.retrieval_ids = set.demos.iter().map(|d| d.demo_id).collect();
        let n = rng.gen_range(1..5);
        let ctx = preprocess(&set, Metric::L2, n).unwrap();
        let bytes = encode_ctxset(&ctx).unwrap();
        let back = decode_ctxset(&bytes).unwrap();
        assert_eq!(back, ctx);
        assert_eq!(encode_ctxset(&back).unwrap(), bytes);
        done += 1;
    }
}

#[test]
fn gridworld_files_round_trip() {
    let dir = std::env::temp_dir().join(format!("regent-codec-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let set = generate_demos(EnvFamily::Gridworld, &[1, 2], 4, &EnvOverrides::default(), 9).unwrap();
    let set = designate_retrieval_set(&set, 5, 3).unwrap();
    let path = dir.join("grid.demoset");
    write_demoset_file(&path, &set).unwrap();
    assert_eq!(read_demoset_file(&path).unwrap(), set);

    let ctx = preprocess(&set, EnvFamily::Gridworld.default_metric(), 4).unwrap();
    let path = dir.join("grid.ctxset");
    write_ctxset_file(&path, &ctx).unwrap();
    assert_eq!(read_ctxset_file(&path).unwrap(), ctx);
    std::fs::remove_dir_all(&dir).unwrap();
}
