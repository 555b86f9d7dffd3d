//! Domain types shared across the workspace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsKind {
    Vector,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActKind {
    Discrete,
    Continuous,
}

/// Observation and action spaces of one environment, plus the reference
/// returns used by the normalized-return metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: String,
    pub obs_kind: ObsKind,
    /// `[len]` for vectors, `[height, width, channels]` for images.
    pub obs_dims: Vec<u32>,
    pub act_kind: ActKind,
    /// Number of actions (discrete) or action vector length (continuous).
    pub act_dims: u32,
    pub horizon: u32,
    pub random_return: f64,
    pub expert_return: f64,
}

impl EnvSpec {
    /// Flattened observation length.
    pub fn obs_len(&self) -> usize {
        self.obs_dims.iter().map(|&d| d as usize).product()
    }

    /// `(height, width, channels)` for image observations.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        match (self.obs_kind, self.obs_dims.as_slice()) {
            (ObsKind::Image, &[h, w, c]) => Some((h as usize, w as usize, c as usize)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.env_id.is_empty() {
            return Err(Error::validation("env_id", "must be non-empty"));
        }
        let expected_rank = match self.obs_kind {
            ObsKind::Vector => 1,
            ObsKind::Image => 3,
        };
        if self.obs_dims.len() != expected_rank || self.obs_dims.contains(&0) {
            return Err(Error::validation(
                "obs_dims",
                format!("expected {expected_rank} positive dims, got {:?}", self.obs_dims),
            ));
        }
        match self.act_kind {
            ActKind::Discrete if self.act_dims < 2 => {
                return Err(Error::validation("act_dims", "discrete spaces need at least 2 actions"))
            }
            ActKind::Continuous if self.act_dims < 1 => {
                return Err(Error::validation("act_dims", "must be positive"))
            }
            _ => {}
        }
        if self.horizon < 1 {
            return Err(Error::validation("horizon", "must be at least 1"));
        }
        if !self.random_return.is_finite() || !self.expert_return.is_finite() {
            return Err(Error::validation("expert_return", "reference returns must be finite"));
        }
        if self.expert_return <= self.random_return {
            return Err(Error::validation(
                "expert_return",
                format!(
                    "expert return {} must exceed random return {}",
                    self.expert_return, self.random_return
                ),
            ));
        }
        Ok(())
    }

    pub fn check_obs(&self, obs: &ObsValue) -> Result<()> {
        if obs.0.len() != self.obs_len() {
            return Err(Error::Dimension { expected: self.obs_len(), got: obs.0.len() });
        }
        Ok(())
    }

    pub fn check_action(&self, action: &ActValue) -> Result<()> {
        match (self.act_kind, action) {
            (ActKind::Discrete, ActValue::Discrete(a)) if *a < self.act_dims => Ok(()),
            (ActKind::Discrete, ActValue::Discrete(a)) => {
                Err(Error::Contract(format!("discrete action {a} out of range 0..{}", self.act_dims)))
            }
            (ActKind::Continuous, ActValue::Continuous(v)) if v.len() == self.act_dims as usize => Ok(()),
            (ActKind::Continuous, ActValue::Continuous(v)) => {
                Err(Error::Dimension { expected: self.act_dims as usize, got: v.len() })
            }
            _ => Err(Error::Contract(format!("action kind does not match {:?} space", self.act_kind))),
        }
    }
}

/// A flattened observation; images are stored height-major, channels last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsValue(pub Vec<f64>);

impl ObsValue {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActValue {
    Discrete(u32),
    Continuous(Vec<f64>),
}

impl ActValue {
    pub fn as_discrete(&self) -> Option<u32> {
        match self {
            ActValue::Discrete(a) => Some(*a),
            ActValue::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            ActValue::Continuous(v) => Some(v),
            ActValue::Discrete(_) => None,
        }
    }
}

/// One `(state, previous reward, action)` tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: ObsValue,
    /// Reward received on entering `state`; zero at episode start.
    pub prev_reward: f64,
    pub action: ActValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub demo_id: u32,
    /// Level the episode was recorded in.
    pub level_seed: u64,
    pub steps: Vec<Step>,
    /// Reward earned by the final action. The step tuples only carry rewards
    /// for entering states, so this one is kept separately.
    pub final_reward: f64,
    pub total_return: f64,
}

impl Demonstration {
    /// Sum of rewards earned by every action of the episode.
    pub fn replayed_return(&self) -> f64 {
        self.steps.iter().skip(1).map(|s| s.prev_reward).sum::<f64>() + self.final_reward
    }
}

/// A retrieval corpus: demonstrations for one environment plus the subset
/// designated for retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSet {
    pub spec: EnvSpec,
    pub demos: Vec<Demonstration>,
    /// Sorted ascending, unique.
    pub retrieval_ids: Vec<u32>,
}

impl DemoSet {
    pub fn demo(&self, demo_id: u32) -> Option<&Demonstration> {
        self.demos.iter().find(|d| d.demo_id == demo_id)
    }

    pub fn is_retrieval(&self, demo_id: u32) -> bool {
        self.retrieval_ids.binary_search(&demo_id).is_ok()
    }

    pub fn total_steps(&self) -> usize {
        self.demos.iter().map(|d| d.steps.len()).sum()
    }

    /// Returns a copy holding only the first `count` demonstrations, all of
    /// them designated for retrieval.
    pub fn prefix(&self, count: usize) -> DemoSet {
        let demos: Vec<_> = self.demos.iter().take(count).cloned().collect();
        let mut retrieval_ids: Vec<u32> = demos.iter().map(|d| d.demo_id).collect();
        retrieval_ids.sort_unstable();
        DemoSet { spec: self.spec.clone(), demos, retrieval_ids }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for (i, demo) in self.demos.iter().enumerate() {
            if !seen.insert(demo.demo_id) {
                return Err(Error::validation(
                    format!("demos[{i}].demo_id"),
                    format!("duplicate id {}", demo.demo_id),
                ));
            }
            validate_demo(&self.spec, demo).map_err(|e| prefix_field(e, &format!("demos[{i}]")))?;
        }
        let mut prev = None;
        for &id in &self.retrieval_ids {
            if prev.is_some_and(|p| p >= id) {
                return Err(Error::validation("retrieval_ids", "must be sorted and unique"));
            }
            if !seen.contains(&id) {
                return Err(Error::validation(
                    "retrieval_ids",
                    format!("id {id} does not name a demonstration"),
                ));
            }
            prev = Some(id);
        }
        Ok(())
    }
}

fn prefix_field(err: Error, prefix: &str) -> Error {
    match err {
        Error::Validation { field, reason } => {
            Error::Validation { field: format!("{prefix}.{field}"), reason }
        }
        other => other,
    }
}

fn validate_demo(spec: &EnvSpec, demo: &Demonstration) -> Result<()> {
    if demo.steps.is_empty() || demo.steps.len() > spec.horizon as usize {
        return Err(Error::validation(
            "steps",
            format!("length {} outside 1..={}", demo.steps.len(), spec.horizon),
        ));
    }
    if demo.steps[0].prev_reward != 0.0 {
        return Err(Error::validation("steps[0].prev_reward", "first step must have zero reward"));
    }
    for (t, step) in demo.steps.iter().enumerate() {
        if step.state.0.len() != spec.obs_len() {
            return Err(Error::validation(
                format!("steps[{t}].state"),
                format!("length {} != {}", step.state.0.len(), spec.obs_len()),
            ));
        }
        if step.state.0.iter().any(|v| !v.is_finite()) || !step.prev_reward.is_finite() {
            return Err(Error::validation(format!("steps[{t}]"), "non-finite value"));
        }
        spec.check_action(&step.action)
            .map_err(|e| Error::validation(format!("steps[{t}].action"), e.to_string()))?;
        if let ActValue::Continuous(v) = &step.action {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation(format!("steps[{t}].action"), "non-finite value"));
            }
        }
    }
    let replayed = demo.replayed_return();
    if !demo.total_return.is_finite() || (replayed - demo.total_return).abs() > 1e-9 * (1.0 + replayed.abs())
    {
        return Err(Error::validation(
            "total_return",
            format!("{} disagrees with summed rewards {replayed}", demo.total_return),
        ));
    }
    Ok(())
}

/// Identifies one step of one demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StepRef {
    pub demo_id: u32,
    pub step_idx: u32,
}

/// Retrieved neighbors (closest first) followed by a query; the unit of
/// training and inference for the sequence policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDatapoint {
    pub env_id: String,
    pub neighbors: Vec<Step>,
    /// Provenance of each neighbor.
    pub neighbor_refs: Vec<StepRef>,
    /// Normalized distance used when predicting each neighbor's own action.
    pub neighbor_dists: Vec<f64>,
    pub query_state: ObsValue,
    pub query_prev_reward: f64,
    /// Training target; `None` at inference.
    pub query_action: Option<ActValue>,
    /// Provenance of the query when it came from a demonstration.
    pub query_ref: Option<StepRef>,
    /// Normalized distance from the query to `neighbors[0]`.
    pub dist_first: f64,
}

impl ContextDatapoint {
    pub fn context_len(&self) -> usize {
        self.neighbors.len()
    }

    /// The retrieved action `a'` of the closest neighbor.
    pub fn first_action(&self) -> Result<&ActValue> {
        self.neighbors
            .first()
            .map(|s| &s.action)
            .ok_or_else(|| Error::Contract("context has no neighbors".into()))
    }

    /// Interpolation distance for each prediction position: one per neighbor,
    /// then the query.
    pub fn position_dists(&self) -> impl Iterator<Item = f64> + '_ {
        self.neighbor_dists.iter().copied().chain(std::iter::once(self.dist_first))
    }

    pub fn validate(&self, spec: &EnvSpec) -> Result<()> {
        let n = self.neighbors.len();
        if n == 0 {
            return Err(Error::validation("neighbors", "must be non-empty"));
        }
        if self.neighbor_refs.len() != n || self.neighbor_dists.len() != n {
            return Err(Error::validation(
                "neighbor_refs",
                "provenance and distance lists must match neighbor count",
            ));
        }
        spec.check_obs(&self.query_state).map_err(|e| Error::validation("query_state", e.to_string()))?;
        for (i, s) in self.neighbors.iter().enumerate() {
            spec.check_obs(&s.state)
                .map_err(|e| Error::validation(format!("neighbors[{i}].state"), e.to_string()))?;
            spec.check_action(&s.action)
                .map_err(|e| Error::validation(format!("neighbors[{i}].action"), e.to_string()))?;
        }
        if let Some(a) = &self.query_action {
            spec.check_action(a).map_err(|e| Error::validation("query_action", e.to_string()))?;
        }
        if !(0.0..=1.0).contains(&self.dist_first)
            || self.neighbor_dists.iter().any(|d| !(0.0..=1.0).contains(d))
        {
            return Err(Error::validation("dist_first", "normalized distances must lie in [0, 1]"));
        }
        Ok(())
    }
}
