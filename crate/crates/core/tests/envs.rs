use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use regent_core::envs::gridworld::MOVES;
use regent_core::envs::*;
use regent_core::par::Execution;
use regent_core::types::ActValue;

/// Shortest path length from `start` to the goal, by a BFS written
/// independently of the environment's own planner.
fn bfs_steps(env: &EnvInstance, start: (usize, usize)) -> Option<u32> {
    let g = env.grid().unwrap();
    let n = g.size;
    let mut dist = vec![None; n * n];
    dist[start.0 * n + start.1] = Some(0u32);
    let mut queue = VecDeque::from([start]);
    while let Some((r, c)) = queue.pop_front() {
        let d = dist[r * n + c].unwrap();
        if (r, c) == g.goal {
            return Some(d);
        }
        for (dr, dc) in MOVES.iter().take(4) {
            let (nr, nc) = (r as i32 + dr, c as i32 + dc);
            if nr < 0 || nc < 0 || nr >= n as i32 || nc >= n as i32 {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            if g.walls[nr * n + nc] || dist[nr * n + nc].is_some() {
                continue;
            }
            dist[nr * n + nc] = Some(d + 1);
            queue.push_back((nr, nc));
        }
    }
    None
}

#[test]
fn expert_matches_bfs_optimum_on_twenty_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for level in 0..20 {
        let env = make_env(EnvFamily::Gridworld, 500 + level, 0.0, &EnvOverrides::default()).unwrap();
        let horizon = env.spec().horizon;
        for cell in env.grid().unwrap().start_cells() {
            let optimum = bfs_steps(&env, cell).expect("start cells reach the goal");
            let mut e = env.clone();
            e.reset_to_cell(cell).unwrap();
            let (mut ret, mut steps) = (0.0, 0);
            loop {
                let a = e.expert_action().unwrap();
                let out = e.step(&a, &mut rng).unwrap();
                ret += out.reward;
                steps += 1;
                if out.done {
                    break;
                }
            }
            let best = if optimum <= horizon { 1.0 } else { 0.0 };
            assert_eq!(ret, best, "level {level} cell {cell:?}");
            assert_eq!(steps, optimum, "level {level} cell {cell:?}");
        }
    }
}

#[test]
fn demos_replay_to_recorded_rewards() {
    let set = generate_demos(EnvFamily::Gridworld, &[3, 4], 5, &EnvOverrides::default(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for demo in &set.demos {
        let mut env = make_env(EnvFamily::Gridworld, demo.level_seed, 0.0, &EnvOverrides::default()).unwrap();
        let g = env.grid().unwrap().clone();
        let start = g
            .start_cells()
            .into_iter()
            .find(|&c| g.render(c) == demo.steps[0].state.0)
            .expect("first state is a start cell");
        env.reset_to_cell(start).unwrap();
        let mut total = 0.0;
        for (i, step) in demo.steps.iter().enumerate() {
            let out = env.step(&step.action, &mut rng).unwrap();
            total += out.reward;
            match demo.steps.get(i + 1) {
                Some(next) => {
                    assert_eq!(out.obs, next.state);
                    assert_eq!(out.reward, next.prev_reward);
                }
                None => {
                    assert!(out.done);
                    assert_eq!(out.reward, demo.final_reward);
                }
            }
        }
        assert_eq!(total, demo.total_return);
        assert_eq!(total, demo.replayed_return());
    }
}

#[test]
fn pointmass_demos_replay_exactly() {
    let set = generate_demos(EnvFamily::Pointmass, &[2], 3, &EnvOverrides::default(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for demo in &set.demos {
        let mut env = make_env(EnvFamily::Pointmass, 2, 0.0, &EnvOverrides::default()).unwrap();
        let s = &demo.steps[0].state.0;
        let goal = env.point().unwrap().goal;
        // observation is (position, goal - position)
        env.reset_to_point([s[0], s[1]]).unwrap();
        assert!((s[2] - (goal[0] - s[0])).abs() < 1e-12);
        let mut total = 0.0;
        for (i, step) in demo.steps.iter().enumerate() {
            let out = env.step(&step.action, &mut rng).unwrap();
            total += out.reward;
            if let Some(next) = demo.steps.get(i + 1) {
                assert_eq!(out.obs, next.state);
                assert_eq!(out.reward, next.prev_reward);
            }
        }
        assert_eq!(total, demo.total_return);
    }
}

#[test]
fn random_policy_return_is_near_reference() {
    let env = make_env(EnvFamily::Gridworld, 9, 0.0, &EnvOverrides::default()).unwrap();
    let r = rollout(&env, &RandomPolicy, 100, 77).unwrap();
    let m = r.mean();
    assert!((0.0..=1.0).contains(&m));
    // binomial standard error of a 100-episode mean is at most 0.05
    assert!((m - env.spec().random_return).abs() < 0.2, "{m} vs {}", env.spec().random_return);
}

#[test]
fn sticky_frequency_matches_probability() {
    let env = make_env(EnvFamily::Gridworld, 1, 0.2, &EnvOverrides::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (mut eligible, mut sticky) = (0usize, 0usize);
    while eligible < 10_000 {
        let mut e = env.clone();
        e.reset(&mut rng).unwrap();
        let mut first = true;
        loop {
            let a = ActValue::Discrete(4);
            let out = e.step(&a, &mut rng).unwrap();
            if first {
                assert!(!out.sticky);
                first = false;
            } else {
                eligible += 1;
                sticky += out.sticky as usize;
            }
            if out.done {
                break;
            }
        }
    }
    let f = sticky as f64 / eligible as f64;
    assert!((f - 0.2).abs() < 0.02, "{f}");
}

#[test]
fn rollouts_are_deterministic_and_schedule_independent() {
    let demos = generate_demos(EnvFamily::Gridworld, &[21], 5, &EnvOverrides::default(), 3).unwrap();
    let env = make_env(EnvFamily::Gridworld, 21, 0.1, &EnvOverrides::default()).unwrap();
    let policy = RnpPolicy::new(&demos, EnvFamily::Gridworld.default_metric()).unwrap();
    let a = rollout_with(&env, &policy, 20, 8, Execution::Sequential).unwrap();
    let b = rollout_with(&env, &policy, 20, 8, Execution::Parallel).unwrap();
    let c = rollout(&env, &policy, 20, 8).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn permuted_variant_changes_controls_not_layout() {
    let plain = make_env(EnvFamily::Gridworld, 5, 0.0, &EnvOverrides::default()).unwrap();
    let ov = EnvOverrides {
        variant: Some("perm".into()),
        action_permutation: Some(vec![1, 0, 3, 2, 4]),
        ..EnvOverrides::default()
    };
    let perm = make_env(EnvFamily::Gridworld, 5, 0.0, &ov).unwrap();
    assert_eq!(plain.layout_bytes(), perm.layout_bytes());
    assert_eq!(perm.spec().env_id, "gridworld-perm-L5");
    let cell = plain.grid().unwrap().start_cells()[0];
    let (mut a, mut b) = (plain.clone(), perm.clone());
    a.reset_to_cell(cell).unwrap();
    b.reset_to_cell(cell).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pa = a.step(&ActValue::Discrete(0), &mut rng).unwrap().obs;
    let pb = b.step(&ActValue::Discrete(1), &mut rng).unwrap().obs;
    assert_eq!(pa, pb);
}
