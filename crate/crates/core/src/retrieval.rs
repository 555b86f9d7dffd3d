//! Exact nearest-neighbor retrieval over demonstration states and assembly
//! of [`ContextDatapoint`]s.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distance::{calibrate_with, BoundMetric, Metric, Normalizer, PreparedState};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::types::{ContextDatapoint, DemoSet, EnvSpec, ObsValue, Step, StepRef};

/// Default number of retrieved neighbors.
pub const DEFAULT_CONTEXT: usize = 19;

/// Which reference state sets the interpolation distance when predicting the
/// action of a retrieved (non-query) context entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextDistMode {
    /// Distance from the entry's state to the first retrieved state.
    #[default]
    FirstNeighbor,
    /// Distance from the entry's state to its nearest other context state.
    OwnNearest,
}

/// Picks `count` demonstrations uniformly at random for retrieval.
pub fn designate_retrieval_set(demoset: &DemoSet, count: usize, seed: u64) -> Result<DemoSet> {
    let total = demoset.demos.len();
    if count == 0 || count > total {
        return Err(Error::Parameter(format!("cannot designate {count} of {total} demonstrations")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u32> = rand::seq::index::sample(&mut rng, total, count)
        .into_iter()
        .map(|i| demoset.demos[i].demo_id)
        .collect();
    ids.sort_unstable();
    Ok(DemoSet { retrieval_ids: ids, ..demoset.clone() })
}

/// One retrieval result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub demo_id: u32,
    pub step_idx: u32,
    pub raw_dist: f64,
}

impl Neighbor {
    pub fn step_ref(&self) -> StepRef {
        StepRef { demo_id: self.demo_id, step_idx: self.step_idx }
    }
}

/// Total order used for ranking: distance, then demo, then step.
pub fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.raw_dist.total_cmp(&b.raw_dist).then(a.demo_id.cmp(&b.demo_id)).then(a.step_idx.cmp(&b.step_idx))
}

/// Flat exact index over every step of the designated retrieval demos.
#[derive(Debug, Clone)]
pub struct StateIndex {
    env_id: String,
    refs: Vec<StepRef>,
    steps: Vec<Step>,
    prepared: Vec<PreparedState>,
    metric: BoundMetric,
    normalizer: Normalizer,
    dist_mode: ContextDistMode,
}

pub fn build_index(demoset: &DemoSet, metric: Metric, normalizer: Normalizer) -> Result<StateIndex> {
    StateIndex::build(demoset, metric, normalizer)
}

impl StateIndex {
    pub fn build(demoset: &DemoSet, metric: Metric, normalizer: Normalizer) -> Result<Self> {
        if demoset.retrieval_ids.is_empty() {
            return Err(Error::Retrieval("cannot index an empty retrieval set".into()));
        }
        if normalizer.metric != metric {
            return Err(Error::Parameter(format!(
                "normalizer was calibrated for {:?}, index uses {metric:?}",
                normalizer.metric
            )));
        }
        let bound = metric.bind(&demoset.spec)?;
        let mut demos: Vec<_> = demoset.demos.iter().filter(|d| demoset.is_retrieval(d.demo_id)).collect();
        // entries stay sorted by provenance so lookups can bisect
        demos.sort_by_key(|d| d.demo_id);
        let mut refs = Vec::new();
        let mut steps = Vec::new();
        let mut prepared = Vec::new();
        for demo in demos {
            for (t, step) in demo.steps.iter().enumerate() {
                refs.push(StepRef { demo_id: demo.demo_id, step_idx: t as u32 });
                prepared.push(bound.prepare(&step.state.0)?);
                steps.push(step.clone());
            }
        }
        Ok(StateIndex {
            env_id: demoset.spec.env_id.clone(),
            refs,
            steps,
            prepared,
            metric: bound,
            normalizer,
            dist_mode: ContextDistMode::default(),
        })
    }

    pub fn with_dist_mode(mut self, mode: ContextDistMode) -> Self {
        self.dist_mode = mode;
        self
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn metric(&self) -> &BoundMetric {
        &self.metric
    }

    pub fn entry(&self, i: usize) -> (StepRef, &Step) {
        (self.refs[i], &self.steps[i])
    }

    /// Looks up a stored step by provenance.
    pub fn step(&self, r: StepRef) -> Option<&Step> {
        let i = self.refs.binary_search(&r).ok()?;
        Some(&self.steps[i])
    }

    pub fn knn(&self, query: &ObsValue, k: usize, exclude_demo: Option<u32>) -> Result<Vec<Neighbor>> {
        self.knn_with(query, k, exclude_demo, Execution::default())
    }

    /// The `k` closest entries after excluding `exclude_demo`, ordered by
    /// [`neighbor_order`]. Returns fewer than `k` when fewer are eligible.
    pub fn knn_with(
        &self,
        query: &ObsValue,
        k: usize,
        exclude_demo: Option<u32>,
        exec: Execution,
    ) -> Result<Vec<Neighbor>> {
        let q = self.metric.prepare(&query.0)?;
        self.knn_prepared(&q, k, exclude_demo, exec)
    }

    fn knn_prepared(
        &self,
        q: &PreparedState,
        k: usize,
        exclude_demo: Option<u32>,
        exec: Execution,
    ) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::Parameter("k must be positive".into()));
        }
        let dists = exec.map_range(self.len(), |i| {
            if Some(self.refs[i].demo_id) == exclude_demo {
                None
            } else {
                Some(self.metric.distance(q, &self.prepared[i]))
            }
        });
        let mut cands: Vec<Neighbor> = dists
            .into_iter()
            .zip(&self.refs)
            .filter_map(|(d, r)| {
                d.map(|raw_dist| Neighbor { demo_id: r.demo_id, step_idx: r.step_idx, raw_dist })
            })
            .collect();
        if cands.is_empty() {
            return Err(Error::Retrieval("no eligible entries after exclusion".into()));
        }
        if cands.len() > k {
            cands.select_nth_unstable_by(k - 1, neighbor_order);
            cands.truncate(k);
        }
        cands.sort_by(neighbor_order);
        Ok(cands)
    }

    /// Retrieves up to `n` neighbors and assembles them, closest first, into a
    /// context for the given query. The target action is left empty.
    pub fn build_context(
        &self,
        query_state: &ObsValue,
        query_prev_reward: f64,
        n: usize,
        exclude_demo: Option<u32>,
    ) -> Result<ContextDatapoint> {
        let q = self.metric.prepare(&query_state.0)?;
        self.context_prepared(&q, query_state, query_prev_reward, n, exclude_demo, Execution::default())
    }

    fn context_prepared(
        &self,
        q: &PreparedState,
        query_state: &ObsValue,
        query_prev_reward: f64,
        n: usize,
        exclude_demo: Option<u32>,
        exec: Execution,
    ) -> Result<ContextDatapoint> {
        let hits = self.knn_prepared(q, n, exclude_demo, exec)?;
        let idx: Vec<usize> = hits
            .iter()
            .map(|h| self.refs.binary_search(&h.step_ref()).expect("hit came from the index"))
            .collect();
        let neighbor_dists = self.context_dists(&idx)?;
        Ok(ContextDatapoint {
            env_id: self.env_id.clone(),
            neighbors: idx.iter().map(|&i| self.steps[i].clone()).collect(),
            neighbor_refs: hits.iter().map(Neighbor::step_ref).collect(),
            neighbor_dists,
            query_state: query_state.clone(),
            query_prev_reward,
            query_action: None,
            query_ref: None,
            dist_first: self.normalizer.normalize(hits[0].raw_dist)?,
        })
    }

    fn context_dists(&self, idx: &[usize]) -> Result<Vec<f64>> {
        let d = |i: usize, j: usize| self.metric.distance(&self.prepared[i], &self.prepared[j]);
        idx.iter()
            .enumerate()
            .map(|(pos, &i)| {
                let raw = match self.dist_mode {
                    ContextDistMode::FirstNeighbor => {
                        if pos == 0 {
                            0.0
                        } else {
                            d(i, idx[0])
                        }
                    }
                    ContextDistMode::OwnNearest => idx
                        .iter()
                        .enumerate()
                        .filter(|&(other, _)| other != pos)
                        .map(|(_, &j)| d(i, j))
                        .min_by(f64::total_cmp)
                        .unwrap_or(0.0),
                };
                self.normalizer.normalize(raw)
            })
            .collect()
    }
}

/// A preprocessed training corpus for one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct CtxSet {
    pub spec: EnvSpec,
    pub normalizer: Normalizer,
    pub n: u32,
    pub datapoints: Vec<ContextDatapoint>,
}

/// Converts every step of every demonstration into a context datapoint whose
/// target is that step's action. Queries from retrieval demos never see their
/// own demonstration.
pub fn preprocess(demoset: &DemoSet, metric: Metric, n: usize) -> Result<CtxSet> {
    preprocess_with(demoset, metric, n, ContextDistMode::default(), Execution::default())
}

pub fn preprocess_with(
    demoset: &DemoSet,
    metric: Metric,
    n: usize,
    dist_mode: ContextDistMode,
    exec: Execution,
) -> Result<CtxSet> {
    if n == 0 {
        return Err(Error::Parameter("context size must be positive".into()));
    }
    demoset.validate()?;
    let normalizer = calibrate_with(demoset, metric, exec)?;
    let index = StateIndex::build(demoset, metric, normalizer.clone())?.with_dist_mode(dist_mode);

    // A demo needs at least one eligible neighbor for its queries.
    for demo in &demoset.demos {
        let eligible = index.refs.iter().any(|r| r.demo_id != demo.demo_id);
        if !eligible {
            return Err(Error::Preprocess { demo_id: demo.demo_id });
        }
    }

    let queries: Vec<(StepRef, &Step)> = demoset
        .demos
        .iter()
        .flat_map(|d| {
            d.steps
                .iter()
                .enumerate()
                .map(move |(t, s)| (StepRef { demo_id: d.demo_id, step_idx: t as u32 }, s))
        })
        .collect();

    let out = exec.map_slice(&queries, |(r, step)| -> Result<ContextDatapoint> {
        let q = index.metric.prepare(&step.state.0)?;
        let mut dp = index.context_prepared(
            &q,
            &step.state,
            step.prev_reward,
            n,
            Some(r.demo_id),
            Execution::Sequential,
        )?;
        dp.query_action = Some(step.action.clone());
        dp.query_ref = Some(*r);
        Ok(dp)
    });
    let datapoints = out.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CtxSet { spec: demoset.spec.clone(), normalizer, n: n as u32, datapoints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ActKind, ActValue, Demonstration, ObsKind};
    use rand::Rng;

    fn line_set(points: &[Vec<f64>]) -> DemoSet {
        let demos = points
            .iter()
            .enumerate()
            .map(|(i, xs)| Demonstration {
                demo_id: i as u32,
                level_seed: 0,
                steps: xs
                    .iter()
                    .enumerate()
                    .map(|(t, &x)| Step {
                        state: ObsValue(vec![x]),
                        prev_reward: 0.0,
                        action: ActValue::Discrete((t % 3) as u32),
                    })
                    .collect(),
                final_reward: 0.0,
                total_return: 0.0,
            })
            .collect();
        DemoSet {
            spec: EnvSpec {
                env_id: "line".into(),
                obs_kind: ObsKind::Vector,
                obs_dims: vec![1],
                act_kind: ActKind::Discrete,
                act_dims: 3,
                horizon: 100,
                random_return: 0.0,
                expert_return: 1.0,
            },
            retrieval_ids: (0..points.len() as u32).collect(),
            demos,
        }
    }

    fn unit_norm() -> Normalizer {
        Normalizer::new("line", Metric::L2, 1.0).unwrap()
    }

    #[test]
    fn designation() {
        let set = line_set(&vec![vec![0.0]; 10]);
        let all = designate_retrieval_set(&set, 10, 1).unwrap();
        assert_eq!(all.retrieval_ids, (0..10).collect::<Vec<_>>());
        let a = designate_retrieval_set(&set, 3, 7).unwrap();
        let b = designate_retrieval_set(&set, 3, 7).unwrap();
        assert_eq!(a.retrieval_ids, b.retrieval_ids);
        assert_eq!(a.retrieval_ids.len(), 3);
        let differs = (0..100u64).any(|s| {
            designate_retrieval_set(&set, 3, 2 * s).unwrap().retrieval_ids
                != designate_retrieval_set(&set, 3, 2 * s + 1).unwrap().retrieval_ids
        });
        assert!(differs);
        assert!(matches!(designate_retrieval_set(&set, 11, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn index_counts_designated_steps_only() {
        let mut set = line_set(&[vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 5.0], vec![9.0]]);
        set.retrieval_ids = vec![0, 1];
        let index = build_index(&set, Metric::L2, unit_norm()).unwrap();
        assert_eq!(index.len(), 6);
        assert!((0..index.len()).all(|i| index.entry(i).0.demo_id != 2));
        set.retrieval_ids.clear();
        assert!(matches!(build_index(&set, Metric::L2, unit_norm()), Err(Error::Retrieval(_))));
    }

    #[test]
    fn knn_hand_example() {
        let set = line_set(&[vec![0.0, 1.0, 5.0]]);
        let index = build_index(&set, Metric::L2, unit_norm()).unwrap();
        let hits = index.knn(&ObsValue(vec![0.9]), 2, None).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].step_idx, 1);
        assert!((hits[0].raw_dist - 0.1).abs() < 1e-15);
        assert_eq!(hits[1].step_idx, 0);
        assert!((hits[1].raw_dist - 0.9).abs() < 1e-15);

        let exact = index.knn(&ObsValue(vec![5.0]), 1, None).unwrap();
        assert_eq!((exact[0].step_idx, exact[0].raw_dist), (2, 0.0));

        assert!(matches!(index.knn(&ObsValue(vec![0.0]), 1, Some(0)), Err(Error::Retrieval(_))));
        assert!(index.knn(&ObsValue(vec![0.0]), 0, None).is_err());
    }

    #[test]
    fn knn_ties_break_by_provenance() {
        let set = line_set(&[vec![1.0, -1.0], vec![1.0]]);
        let index = build_index(&set, Metric::L2, unit_norm()).unwrap();
        let hits = index.knn(&ObsValue(vec![0.0]), 3, None).unwrap();
        let order: Vec<_> = hits.iter().map(|h| (h.demo_id, h.step_idx)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0)]);
    }

    #[test]
    fn knn_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let demos: Vec<Vec<f64>> =
            (0..20).map(|_| (0..10).map(|_| rng.gen_range(0..30) as f64 / 3.0).collect()).collect();
        let set = line_set(&demos);
        let index = build_index(&set, Metric::L2, unit_norm()).unwrap();
        for _ in 0..50 {
            let q = rng.gen_range(0.0..10.0);
            let excl = if rng.gen_bool(0.5) { Some(rng.gen_range(0..20)) } else { None };
            let mut oracle: Vec<Neighbor> = Vec::new();
            for (d, xs) in demos.iter().enumerate() {
                for (t, &x) in xs.iter().enumerate() {
                    if Some(d as u32) != excl {
                        oracle.push(Neighbor {
                            demo_id: d as u32,
                            step_idx: t as u32,
                            raw_dist: (q - x).abs(),
                        });
                    }
                }
            }
            oracle.sort_by(neighbor_order);
            oracle.truncate(19);
            let seq = index.knn_with(&ObsValue(vec![q]), 19, excl, Execution::Sequential).unwrap();
            let par = index.knn_with(&ObsValue(vec![q]), 19, excl, Execution::Parallel).unwrap();
            assert_eq!(seq, oracle);
            assert_eq!(par, oracle);
        }
    }

    #[test]
    fn short_contexts_are_not_padded() {
        let set = line_set(&[(0..12).map(f64::from).collect(), vec![100.0]]);
        let mut set = set;
        set.retrieval_ids = vec![0];
        let index = build_index(&set, Metric::L2, unit_norm()).unwrap();
        let ctx = index.build_context(&ObsValue(vec![3.0]), 0.0, 19, None).unwrap();
        assert_eq!(ctx.context_len(), 12);
        assert_eq!(ctx.dist_first, 0.0);
        let recomputed: Vec<f64> = ctx.neighbors.iter().map(|s| (s.state.0[0] - 3.0).abs()).collect();
        assert!(recomputed.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(ctx.neighbor_dists[0], 0.0);
    }

    #[test]
    fn own_nearest_mode_uses_closest_other_neighbor() {
        let set = line_set(&[vec![0.0, 0.25, 0.75]]);
        let index =
            build_index(&set, Metric::L2, unit_norm()).unwrap().with_dist_mode(ContextDistMode::OwnNearest);
        let ctx = index.build_context(&ObsValue(vec![0.0]), 0.0, 3, None).unwrap();
        assert_eq!(ctx.neighbor_dists, vec![0.25, 0.25, 0.5]);
        let first = build_index(&set, Metric::L2, unit_norm()).unwrap();
        let ctx = first.build_context(&ObsValue(vec![0.0]), 0.0, 3, None).unwrap();
        assert_eq!(ctx.neighbor_dists, vec![0.0, 0.25, 0.75]);
    }

    #[test]
    fn preprocess_three_designated_demos() {
        let set = line_set(&[
            vec![0.0, 1.0, 2.0, 3.0, 4.0],
            vec![0.5, 1.5, 2.5, 3.5, 4.5],
            vec![0.2, 1.2, 2.2, 3.2, 4.2],
        ]);
        let out = preprocess(&set, Metric::L2, 4).unwrap();
        assert_eq!(out.datapoints.len(), 15);
        for dp in &out.datapoints {
            let q = dp.query_ref.unwrap();
            assert!(dp.neighbor_refs.iter().all(|r| r.demo_id != q.demo_id));
            assert!((0.0..=1.0).contains(&dp.dist_first));
            assert_eq!(dp.context_len(), 4);
        }
    }

    #[test]
    fn held_out_queries_use_designated_demo_only() {
        let mut set = line_set(&[vec![0.0, 1.0], vec![0.1, 1.1], vec![0.3, 1.3]]);
        set.retrieval_ids = vec![0, 2];
        let out = preprocess(&set, Metric::L2, 5).unwrap();
        assert_eq!(out.datapoints.len(), 6);
        for dp in &out.datapoints {
            let own = dp.query_ref.unwrap().demo_id;
            assert!(dp.neighbor_refs.iter().all(|r| r.demo_id != 1 && r.demo_id != own));
        }
    }

    #[test]
    fn preprocess_rejects_demo_without_neighbors() {
        let mut set = line_set(&[vec![0.0, 1.0], vec![3.0]]);
        set.retrieval_ids = vec![0];
        // demo 0 can only retrieve from itself, which is excluded
        assert!(matches!(preprocess(&set, Metric::L2, 3), Err(Error::Preprocess { demo_id: 0 })));
    }

    #[test]
    fn preprocess_is_deterministic_across_execution_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let demos: Vec<Vec<f64>> =
            (0..5).map(|_| (0..8).map(|_| rng.gen_range(0.0..4.0)).collect()).collect();
        let set = line_set(&demos);
        let a = preprocess_with(&set, Metric::L2, 6, ContextDistMode::FirstNeighbor, Execution::Sequential)
            .unwrap();
        let b = preprocess_with(&set, Metric::L2, 6, ContextDistMode::FirstNeighbor, Execution::Parallel)
            .unwrap();
        assert_eq!(a, b);
    }
}
