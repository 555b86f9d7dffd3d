//! Procedurally generated toy environment families, scripted experts,
//! demonstration generation and sticky-action rollouts.

pub mod gridworld;
pub mod pointmass;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distance::{calibrate_for_deployment, Metric, SsimParams, WindowMode};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::retrieval::StateIndex;
use crate::types::{ActKind, ActValue, DemoSet, Demonstration, EnvSpec, ObsKind, ObsValue, Step};
use gridworld::GridLevel;
use pointmass::PointLevel;

pub const DEFAULT_GRID_SIZE: u32 = 8;
pub const DEFAULT_WALL_DENSITY: f64 = 0.15;
pub const DEFAULT_GRID_HORIZON: u32 = 24;
pub const DEFAULT_POINT_HORIZON: u32 = 50;
/// Episodes used to estimate reference returns at level creation.
pub const CALIBRATION_EPISODES: usize = 1000;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for sub-stream `stream` of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    mix(mix(base) ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvFamily {
    Gridworld,
    Pointmass,
}

impl EnvFamily {
    pub fn name(self) -> &'static str {
        match self {
            EnvFamily::Gridworld => "gridworld",
            EnvFamily::Pointmass => "pointmass",
        }
    }

    /// Metric used for retrieval in this family: SSIM on the gridworld
    /// images, ℓ2 on pointmass vectors.
    pub fn default_metric(self) -> Metric {
        match self {
            EnvFamily::Gridworld => {
                Metric::Ssim(SsimParams { window: 3, mode: WindowMode::Full, ..SsimParams::default() })
            }
            EnvFamily::Pointmass => Metric::L2,
        }
    }
}

impl std::str::FromStr for EnvFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gridworld" => Ok(EnvFamily::Gridworld),
            "pointmass" => Ok(EnvFamily::Pointmass),
            other => Err(Error::Parameter(format!("unknown environment family `{other}`"))),
        }
    }
}

/// Per-family knobs; a named variant with different settings stands in for
/// an unseen environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvOverrides {
    /// Suffix added to the environment id, e.g. `dense`.
    pub variant: Option<String>,
    pub horizon: Option<u32>,
    pub grid_size: Option<u32>,
    pub wall_density: Option<f64>,
    /// Gridworld action `a` executes move `action_permutation[a]`
    /// (0 up, 1 down, 2 left, 3 right, 4 stay).
    pub action_permutation: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
enum World {
    Grid(GridLevel),
    Point(PointLevel),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Agent {
    Grid((usize, usize)),
    Point([f64; 2]),
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: ObsValue,
    pub reward: f64,
    pub done: bool,
    /// Whether the previous action was repeated instead of the commanded one.
    pub sticky: bool,
}

#[derive(Debug, Clone)]
pub struct EnvInstance {
    spec: EnvSpec,
    family: EnvFamily,
    level_seed: u64,
    sticky_p: f64,
    world: World,
    agent: Option<Agent>,
    t: u32,
    done: bool,
    prev_action: Option<ActValue>,
}

pub fn make_env(
    family: EnvFamily,
    level_seed: u64,
    sticky_p: f64,
    overrides: &EnvOverrides,
) -> Result<EnvInstance> {
    EnvInstance::new(family, level_seed, sticky_p, overrides)
}

impl EnvInstance {
    pub fn new(family: EnvFamily, level_seed: u64, sticky_p: f64, overrides: &EnvOverrides) -> Result<Self> {
        if !(0.0..1.0).contains(&sticky_p) {
            return Err(Error::Parameter(format!("sticky probability {sticky_p} outside [0, 1)")));
        }
        let variant = overrides.variant.as_deref().map(|v| format!("-{v}")).unwrap_or_default();
        let env_id = format!("{}{variant}-L{level_seed}", family.name());
        let (world, spec) = match family {
            EnvFamily::Gridworld => {
                let size = overrides.grid_size.unwrap_or(DEFAULT_GRID_SIZE) as usize;
                let horizon = overrides.horizon.unwrap_or(DEFAULT_GRID_HORIZON);
                let action_map = match &overrides.action_permutation {
                    None => (0..5).collect(),
                    Some(p) => {
                        let mut sorted = p.clone();
                        sorted.sort_unstable();
                        if sorted != [0, 1, 2, 3, 4] {
                            return Err(Error::Parameter(format!(
                                "action permutation {p:?} is not a permutation of 0..5"
                            )));
                        }
                        p.iter().map(|&m| m as usize).collect()
                    }
                };
                let level = GridLevel::generate(
                    level_seed,
                    size,
                    overrides.wall_density.unwrap_or(DEFAULT_WALL_DENSITY),
                    action_map,
                    horizon,
                )?;
                let spec = EnvSpec {
                    env_id,
                    obs_kind: ObsKind::Image,
                    obs_dims: vec![size as u32, size as u32, 3],
                    act_kind: ActKind::Discrete,
                    act_dims: 5,
                    horizon,
                    random_return: 0.0,
                    expert_return: 1.0,
                };
                (World::Grid(level), spec)
            }
            EnvFamily::Pointmass => {
                if overrides.grid_size.is_some()
                    || overrides.wall_density.is_some()
                    || overrides.action_permutation.is_some()
                {
                    return Err(Error::Parameter("gridworld overrides given for pointmass".into()));
                }
                let spec = EnvSpec {
                    env_id,
                    obs_kind: ObsKind::Vector,
                    obs_dims: vec![4],
                    act_kind: ActKind::Continuous,
                    act_dims: 2,
                    horizon: overrides.horizon.unwrap_or(DEFAULT_POINT_HORIZON),
                    random_return: 0.0,
                    expert_return: 1.0,
                };
                (World::Point(PointLevel::generate(level_seed)), spec)
            }
        };
        let mut env = EnvInstance {
            spec,
            family,
            level_seed,
            sticky_p,
            world,
            agent: None,
            t: 0,
            done: false,
            prev_action: None,
        };
        env.calibrate_returns()?;
        env.spec.validate()?;
        Ok(env)
    }

    /// Fills the reference returns: random-policy mean over calibration
    /// episodes; exact expert value on gridworld, expert mean on pointmass.
    fn calibrate_returns(&mut self) -> Result<()> {
        let mut probe = self.clone();
        probe.sticky_p = 0.0;
        let base = derive_seed(self.level_seed, 0xca1);
        let random = rollout_with(&probe, &RandomPolicy, CALIBRATION_EPISODES, base, Execution::Sequential)?;
        self.spec.random_return = random.mean();
        self.spec.expert_return = match &self.world {
            // every start cell reaches the goal within the horizon
            World::Grid(_) => 1.0,
            World::Point(_) => {
                rollout_with(&probe, &ExpertPolicy, CALIBRATION_EPISODES, base, Execution::Sequential)?.mean()
            }
        };
        Ok(())
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn family(&self) -> EnvFamily {
        self.family
    }

    pub fn level_seed(&self) -> u64 {
        self.level_seed
    }

    pub fn sticky_p(&self) -> f64 {
        self.sticky_p
    }

    pub fn with_sticky(mut self, sticky_p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&sticky_p) {
            return Err(Error::Parameter(format!("sticky probability {sticky_p} outside [0, 1)")));
        }
        self.sticky_p = sticky_p;
        Ok(self)
    }

    pub fn grid(&self) -> Option<&GridLevel> {
        match &self.world {
            World::Grid(g) => Some(g),
            World::Point(_) => None,
        }
    }

    pub fn point(&self) -> Option<&PointLevel> {
        match &self.world {
            World::Point(p) => Some(p),
            World::Grid(_) => None,
        }
    }

    pub fn time(&self) -> u32 {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn observe(&self) -> ObsValue {
        match (&self.world, self.agent.expect("episode started")) {
            (World::Grid(g), Agent::Grid(cell)) => ObsValue(g.render(cell)),
            (World::Point(p), Agent::Point(pos)) => ObsValue(p.observe(pos)),
            _ => unreachable!("agent matches world"),
        }
    }

    fn begin(&mut self, agent: Agent) -> ObsValue {
        self.agent = Some(agent);
        self.t = 0;
        self.done = false;
        self.prev_action = None;
        self.observe()
    }

    /// Starts an episode from a random start state.
    pub fn reset(&mut self, rng: &mut dyn RngCore) -> Result<ObsValue> {
        let agent = match &self.world {
            World::Grid(g) => Agent::Grid(g.sample_start(rng)),
            World::Point(p) => Agent::Point(p.sample_start(rng)?),
        };
        Ok(self.begin(agent))
    }

    /// Starts an episode with the gridworld agent at `cell`.
    pub fn reset_to_cell(&mut self, cell: (usize, usize)) -> Result<ObsValue> {
        match &self.world {
            World::Grid(g) if cell.0 < g.size && cell.1 < g.size && g.is_free(cell) && cell != g.goal => {
                Ok(self.begin(Agent::Grid(cell)))
            }
            _ => Err(Error::Parameter(format!("{cell:?} is not a valid start cell"))),
        }
    }

    /// Starts an episode with the pointmass agent at `pos`.
    pub fn reset_to_point(&mut self, pos: [f64; 2]) -> Result<ObsValue> {
        match &self.world {
            World::Point(_) => Ok(self.begin(Agent::Point(pos))),
            World::Grid(_) => Err(Error::Parameter("not a pointmass environment".into())),
        }
    }

    /// Executes `action`, or with probability `sticky_p` the previously
    /// executed action. The first step of an episode is never sticky.
    pub fn step(&mut self, action: &ActValue, rng: &mut dyn RngCore) -> Result<StepOutcome> {
        let agent = self.agent.ok_or_else(|| Error::Contract("step before reset".into()))?;
        if self.done {
            return Err(Error::Contract("step after episode end".into()));
        }
        self.spec.check_action(action)?;
        if let ActValue::Continuous(v) = action {
            if v.iter().any(|x| !(-1.0..=1.0).contains(x)) {
                return Err(Error::Contract(format!("continuous action {v:?} outside [-1, 1]")));
            }
        }
        let sticky = match &self.prev_action {
            Some(_) if self.sticky_p > 0.0 => rng.gen_bool(self.sticky_p),
            _ => false,
        };
        let executed = if sticky { self.prev_action.clone().expect("checked above") } else { action.clone() };
        let (next, reward, reached) = match (&self.world, agent, &executed) {
            (World::Grid(g), Agent::Grid(cell), ActValue::Discrete(a)) => {
                let next = g.apply(cell, *a);
                let reached = next == g.goal;
                (Agent::Grid(next), if reached { 1.0 } else { 0.0 }, reached)
            }
            (World::Point(p), Agent::Point(pos), ActValue::Continuous(a)) => {
                let (next, r) = p.apply(pos, a);
                (Agent::Point(next), r, p.reached(next))
            }
            _ => unreachable!("action kind checked against spec"),
        };
        self.agent = Some(next);
        self.t += 1;
        self.done = reached || self.t >= self.spec.horizon;
        self.prev_action = Some(executed);
        Ok(StepOutcome { obs: self.observe(), reward, done: self.done, sticky })
    }

    /// Scripted expert action for the current state.
    pub fn expert_action(&self) -> Result<ActValue> {
        match (&self.world, self.agent) {
            (World::Grid(g), Some(Agent::Grid(cell))) => Ok(ActValue::Discrete(g.expert_action(cell)?)),
            (World::Point(p), Some(Agent::Point(pos))) => Ok(ActValue::Continuous(p.expert_action(pos))),
            _ => Err(Error::Contract("expert queried before reset".into())),
        }
    }

    /// Every non-terminal gridworld state, row-major.
    pub fn enumerate_states(&self) -> Result<Vec<ObsValue>> {
        match &self.world {
            World::Grid(g) => Ok(g.start_cells().into_iter().map(|c| ObsValue(g.render(c))).collect()),
            World::Point(_) => Err(Error::Parameter("continuous state spaces cannot be enumerated".into())),
        }
    }

    /// Uniformly sampled valid pointmass states (an estimate of the state
    /// space for coverage measurements).
    pub fn sample_states(&self, count: usize, seed: u64) -> Result<Vec<ObsValue>> {
        match &self.world {
            World::Point(p) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut out = Vec::with_capacity(count);
                while out.len() < count {
                    let q = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                    if ((q[0] - p.obstacle[0]).powi(2) + (q[1] - p.obstacle[1]).powi(2)).sqrt() >= p.radius {
                        out.push(ObsValue(p.observe(q)));
                    }
                }
                Ok(out)
            }
            World::Grid(_) => self.enumerate_states(),
        }
    }

    /// Layout fingerprint used to tell levels apart.
    pub fn layout_bytes(&self) -> Vec<u8> {
        match &self.world {
            World::Grid(g) => {
                let mut b: Vec<u8> = g.walls.iter().map(|&w| w as u8).collect();
                b.extend([g.goal.0 as u8, g.goal.1 as u8]);
                b
            }
            World::Point(p) => [p.goal, p.obstacle]
                .iter()
                .flatten()
                .chain(std::iter::once(&p.radius))
                .flat_map(|v| v.to_le_bytes())
                .collect(),
        }
    }

    pub fn ascii(&self) -> Option<String> {
        match (&self.world, self.agent) {
            (World::Grid(g), Some(Agent::Grid(cell))) => Some(g.ascii(cell)),
            (World::Grid(g), None) => Some(g.ascii(g.goal)),
            _ => None,
        }
    }
}

/// A policy acting in an environment. `env` is available so scripted experts
/// can read the true state; learned and retrieval policies only use `obs`.
pub trait Policy: Sync {
    fn act(
        &self,
        env: &EnvInstance,
        obs: &ObsValue,
        prev_reward: f64,
        rng: &mut dyn RngCore,
    ) -> Result<ActValue>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(
        &self,
        env: &EnvInstance,
        obs: &ObsValue,
        prev_reward: f64,
        rng: &mut dyn RngCore,
    ) -> Result<ActValue> {
        (**self).act(env, obs, prev_reward, rng)
    }
}

/// Shortest-path mover on gridworld, proportional controller on pointmass.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn act(&self, env: &EnvInstance, _: &ObsValue, _: f64, _: &mut dyn RngCore) -> Result<ActValue> {
        env.expert_action()
    }
}

pub fn expert_policy(env: &EnvInstance) -> Result<ActValue> {
    env.expert_action()
}

/// Uniformly random actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&self, env: &EnvInstance, _: &ObsValue, _: f64, rng: &mut dyn RngCore) -> Result<ActValue> {
        let spec = env.spec();
        Ok(match spec.act_kind {
            ActKind::Discrete => ActValue::Discrete(rng.gen_range(0..spec.act_dims)),
            ActKind::Continuous => {
                ActValue::Continuous((0..spec.act_dims).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            }
        })
    }
}

/// Retrieve-and-play: the action of the closest retrieval state.
#[derive(Debug, Clone)]
pub struct RnpPolicy {
    index: StateIndex,
}

impl RnpPolicy {
    pub fn new(demoset: &DemoSet, metric: Metric) -> Result<Self> {
        let normalizer = calibrate_for_deployment(demoset, metric)?;
        Ok(RnpPolicy { index: StateIndex::build(demoset, metric, normalizer)? })
    }

    pub fn from_index(index: StateIndex) -> Self {
        RnpPolicy { index }
    }

    pub fn index(&self) -> &StateIndex {
        &self.index
    }
}

impl Policy for RnpPolicy {
    fn act(&self, _: &EnvInstance, obs: &ObsValue, _: f64, _: &mut dyn RngCore) -> Result<ActValue> {
        let nearest = self.index.knn_with(obs, 1, None, Execution::Sequential)?;
        let first = nearest.first().ok_or_else(|| Error::Retrieval("empty retrieval set".into()))?;
        Ok(self.index.step(first.step_ref()).expect("neighbors come from the index").action.clone())
    }
}

/// Per-episode undiscounted returns of a batch of rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollouts {
    pub returns: Vec<f64>,
}

impl Rollouts {
    pub fn mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len().max(1) as f64
    }

    pub fn std(&self) -> f64 {
        let n = self.returns.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

/// Seed of episode `episode` in a rollout batch seeded with `seed`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(seed, episode as u64)
}

/// Runs one episode from a random start.
pub fn run_episode(env: &EnvInstance, policy: &dyn Policy, episode_seed: u64) -> Result<f64> {
    let mut env = env.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let mut obs = env.reset(&mut rng)?;
    let mut prev_reward = 0.0;
    let mut ret = 0.0;
    loop {
        let action = policy.act(&env, &obs, prev_reward, &mut rng)?;
        let out = env.step(&action, &mut rng)?;
        ret += out.reward;
        if out.done {
            return Ok(ret);
        }
        obs = out.obs;
        prev_reward = out.reward;
    }
}

/// Runs `n_episodes` independent episodes; episode `i` uses
/// [`episode_seed`]`(seed, i)`, so results do not depend on scheduling.
pub fn rollout(env: &EnvInstance, policy: &dyn Policy, n_episodes: usize, seed: u64) -> Result<Rollouts> {
    rollout_with(env, policy, n_episodes, seed, Execution::default())
}

pub fn rollout_with(
    env: &EnvInstance,
    policy: &dyn Policy,
    n_episodes: usize,
    seed: u64,
    exec: Execution,
) -> Result<Rollouts> {
    let returns = exec
        .map_range(n_episodes, |i| run_episode(env, policy, episode_seed(seed, i)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Rollouts { returns })
}

/// `(raw - random) / (expert - random)`.
pub fn normalized_return(raw: f64, spec: &EnvSpec) -> Result<f64> {
    let span = spec.expert_return - spec.random_return;
    if span.is_nan() || span == 0.0 {
        return Err(Error::Parameter(format!("degenerate reference returns for `{}`", spec.env_id)));
    }
    Ok((raw - spec.random_return) / span)
}

/// Records `per_level` clean expert demonstrations in each level. Demo ids
/// are assigned densely from zero; every demo is designated for retrieval.
pub fn generate_demos(
    family: EnvFamily,
    level_seeds: &[u64],
    per_level: usize,
    overrides: &EnvOverrides,
    seed: u64,
) -> Result<DemoSet> {
    if per_level == 0 || level_seeds.is_empty() {
        return Err(Error::Parameter("need at least one level and one demo per level".into()));
    }
    let mut demos = Vec::new();
    let mut specs = Vec::new();
    for &level in level_seeds {
        let env = make_env(family, level, 0.0, overrides)?;
        for i in 0..per_level {
            let demo_id = demos.len() as u32;
            let episode = derive_seed(derive_seed(seed, level), i as u64);
            demos.push(record_demo(&env, demo_id, episode)?);
        }
        specs.push(env.spec.clone());
    }
    let spec = if specs.len() == 1 {
        specs.pop().expect("one spec")
    } else {
        let n = specs.len() as f64;
        let variant = overrides.variant.as_deref().map(|v| format!("-{v}")).unwrap_or_default();
        EnvSpec {
            env_id: format!("{}{variant}", family.name()),
            random_return: specs.iter().map(|s| s.random_return).sum::<f64>() / n,
            expert_return: specs.iter().map(|s| s.expert_return).sum::<f64>() / n,
            ..specs[0].clone()
        }
    };
    let retrieval_ids = (0..demos.len() as u32).collect();
    let set = DemoSet { spec, demos, retrieval_ids };
    set.validate()?;
    Ok(set)
}

fn record_demo(env: &EnvInstance, demo_id: u32, episode_seed: u64) -> Result<Demonstration> {
    let mut env = env.clone().with_sticky(0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let mut obs = env.reset(&mut rng)?;
    let mut prev_reward = 0.0;
    let mut steps = Vec::new();
    loop {
        let action = env.expert_action()?;
        steps.push(Step { state: obs, prev_reward, action: action.clone() });
        let out = env.step(&action, &mut rng)?;
        if out.done {
            let mut demo = Demonstration {
                demo_id,
                level_seed: env.level_seed,
                steps,
                final_reward: out.reward,
                total_return: 0.0,
            };
            demo.total_return = demo.replayed_return();
            return Ok(demo);
        }
        obs = out.obs;
        prev_reward = out.reward;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(seed: u64) -> EnvInstance {
        make_env(EnvFamily::Gridworld, seed, 0.0, &EnvOverrides::default()).unwrap()
    }

    #[test]
    fn levels_are_deterministic_and_distinct() {
        assert_eq!(grid(3).layout_bytes(), grid(3).layout_bytes());
        assert_ne!(grid(0).layout_bytes(), grid(1).layout_bytes());
        let p0 = make_env(EnvFamily::Pointmass, 0, 0.0, &EnvOverrides::default()).unwrap();
        let p1 = make_env(EnvFamily::Pointmass, 1, 0.0, &EnvOverrides::default()).unwrap();
        assert_ne!(p0.layout_bytes(), p1.layout_bytes());
    }

    #[test]
    fn bad_parameters() {
        assert!(make_env(EnvFamily::Gridworld, 0, 1.0, &EnvOverrides::default()).is_err());
        assert!(make_env(EnvFamily::Gridworld, 0, -0.1, &EnvOverrides::default()).is_err());
        let bad_perm = EnvOverrides { action_permutation: Some(vec![0, 0, 1, 2, 3]), ..Default::default() };
        assert!(make_env(EnvFamily::Gridworld, 0, 0.0, &bad_perm).is_err());
    }

    #[test]
    fn step_contracts() {
        let mut env = grid(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(env.step(&ActValue::Discrete(0), &mut rng), Err(Error::Contract(_))));
        env.reset(&mut rng).unwrap();
        assert!(env.step(&ActValue::Discrete(5), &mut rng).is_err());
        assert!(env.step(&ActValue::Continuous(vec![0.0]), &mut rng).is_err());
        while !env.is_done() {
            env.step(&ActValue::Discrete(4), &mut rng).unwrap();
        }
        assert_eq!(env.time(), env.spec().horizon);
        assert!(matches!(env.step(&ActValue::Discrete(4), &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_sticky_is_a_pure_function_of_state_and_action() {
        let env = grid(4);
        let mut a = env.clone();
        let mut b = env.clone();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(999);
        let cell = env.grid().unwrap().start_cells()[0];
        a.reset_to_cell(cell).unwrap();
        b.reset_to_cell(cell).unwrap();
        for t in 0..20u32 {
            let act = ActValue::Discrete(t % 5);
            if a.is_done() {
                break;
            }
            let oa = a.step(&act, &mut r1).unwrap();
            let ob = b.step(&act, &mut r2).unwrap();
            assert_eq!(oa, ob);
            assert!(!oa.sticky);
        }
    }

    #[test]
    fn first_step_is_never_sticky() {
        let env = grid(5).with_sticky(0.9).unwrap();
        for s in 0..200 {
            let mut e = env.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            e.reset(&mut rng).unwrap();
            assert!(!e.step(&ActValue::Discrete(1), &mut rng).unwrap().sticky);
        }
    }

    #[test]
    fn expert_moves_onto_adjacent_goal() {
        let env = grid(6);
        let g = env.grid().unwrap();
        let adjacent = g.start_cells().into_iter().find(|&c| g.dist[g.idx(c)] == Some(1)).unwrap();
        let mut e = env.clone();
        e.reset_to_cell(adjacent).unwrap();
        let a = e.expert_action().unwrap();
        let out = e.step(&a, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(out.done && out.reward == 1.0);
    }

    #[test]
    fn pointmass_expert_at_goal_is_zero() {
        let mut env = make_env(EnvFamily::Pointmass, 3, 0.0, &EnvOverrides::default()).unwrap();
        let goal = env.point().unwrap().goal;
        env.reset_to_point(goal).unwrap();
        assert_eq!(env.expert_action().unwrap(), ActValue::Continuous(vec![0.0, 0.0]));
    }

    #[test]
    fn normalized_return_examples() {
        let mut spec = grid(0).spec().clone();
        spec.random_return = 2.0;
        spec.expert_return = 6.0;
        assert_eq!(normalized_return(5.0, &spec).unwrap(), 0.75);
        assert_eq!(normalized_return(6.0, &spec).unwrap(), 1.0);
        assert_eq!(normalized_return(2.0, &spec).unwrap(), 0.0);
        spec.expert_return = 2.0;
        assert!(normalized_return(1.0, &spec).is_err());
    }

    #[test]
    fn demo_counts_and_first_rewards() {
        let set =
            generate_demos(EnvFamily::Gridworld, &[0, 1, 2, 3, 4], 1, &EnvOverrides::default(), 1).unwrap();
        assert_eq!(set.demos.len(), 5);
        assert!(set.demos.iter().all(|d| d.steps[0].prev_reward == 0.0));
        assert_eq!(set.demos.iter().map(|d| d.demo_id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }
}
