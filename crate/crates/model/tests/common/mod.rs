#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regent_core::types::{ActKind, ActValue, ContextDatapoint, EnvSpec, ObsKind, ObsValue, Step, StepRef};
use regent_model::{ModelConfig, SeqModel};

pub fn spec(kind: ActKind) -> EnvSpec {
    EnvSpec {
        env_id: format!("toy-{kind:?}"),
        obs_kind: ObsKind::Vector,
        obs_dims: vec![3],
        act_kind: kind,
        act_dims: if kind == ActKind::Discrete { 4 } else { 2 },
        horizon: 10,
        random_return: 0.0,
        expert_return: 1.0,
    }
}

pub fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        hidden: 8,
        max_positions: 12,
        max_cont_input: 6,
        n_act_max: 5,
        seed,
    }
}

/// A model whose every parameter, heads included, is randomized.
pub fn random_model(seed: u64, scale: f64) -> SeqModel {
    let mut m = SeqModel::new(small_config(seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for p in m.params_mut() {
        *p += rng.gen_range(-scale..scale);
    }
    m
}

pub fn random_action(kind: ActKind, rng: &mut impl Rng) -> ActValue {
    match kind {
        ActKind::Discrete => ActValue::Discrete(rng.gen_range(0..4)),
        ActKind::Continuous => ActValue::Continuous(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]),
    }
}

/// Random datapoint with `n` neighbors and interior distances.
pub fn random_ctx(kind: ActKind, n: usize, rng: &mut impl Rng) -> ContextDatapoint {
    let obs = |rng: &mut dyn rand::RngCore| ObsValue((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let mut dists: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..0.4)).collect();
    dists[0] = 0.0;
    ContextDatapoint {
        env_id: format!("toy-{kind:?}"),
        neighbors: (0..n)
            .map(|_| Step {
                state: obs(rng),
                prev_reward: rng.gen_range(0.0..1.0),
                action: random_action(kind, rng),
            })
            .collect(),
        neighbor_refs: (0..n).map(|i| StepRef { demo_id: 1, step_idx: i as u32 }).collect(),
        neighbor_dists: dists,
        query_state: obs(rng),
        query_prev_reward: 0.0,
        query_action: Some(random_action(kind, rng)),
        query_ref: None,
        dist_first: rng.gen_range(0.02..0.4),
    }
}
