//! One function per subcommand. Each reads its inputs from the layout,
//! fails with a dependency error when an upstream artifact is missing, and
//! records what it writes in the manifest.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use regent_core::codec::{read_ctxset_file, read_demoset_file, write_ctxset_file, write_demoset_file};
use regent_core::envs::{
    derive_seed, generate_demos, make_env, normalized_return, rollout, Policy, RnpPolicy,
};
use regent_core::retrieval::{designate_retrieval_set, preprocess, CtxSet};
use regent_core::types::DemoSet;
use regent_model::checkpoint::{read_checkpoint, write_checkpoint};
use regent_model::train::{finetune, pretrain};
use regent_model::{ModelConfig, RegentPolicy, SeqModel};
use regent_theory::{bound_experiment, BoundReport, BoundSweep};

use crate::artifacts::{ensure_parent, require, write_csv, Layout, Manifest};
use crate::config::{ExperimentConfig, HeldoutTier, PolicyKind};

// Independent random streams under the master seed.
const STREAM_TRAIN_DEMOS: u64 = 1;
const STREAM_HELDOUT_DEMOS: u64 = 2;
const STREAM_DESIGNATION: u64 = 3;
const STREAM_MODEL_INIT: u64 = 4;
const STREAM_TRAIN: u64 = 5;
const STREAM_EVAL: u64 = 6;
const STREAM_BOUND: u64 = 7;

/// Configuration plus where its artifacts live.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub layout: Layout,
    pub hash: String,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Self {
        let hash = config.hash();
        let layout = Layout::new(config.out_dir.clone());
        Experiment { config, layout, hash }
    }

    fn stream(&self, stream: u64) -> u64 {
        derive_seed(self.config.seed, stream)
    }

    fn manifest(&self) -> Result<Manifest> {
        Manifest::load(&self.layout, &self.hash)
    }

    /// `(env_id, set, level)` of every pretraining level.
    fn train_envs(&self) -> Result<Vec<(String, &crate::config::PretrainSet, u64)>> {
        let mut out = Vec::new();
        for set in &self.config.pretrain {
            for &level in &set.levels {
                let env = make_env(set.family, level, 0.0, &set.overrides)?;
                out.push((env.spec().env_id.clone(), set, level));
            }
        }
        Ok(out)
    }

    fn heldout_envs(&self) -> Result<Vec<(String, &HeldoutTier, u64)>> {
        let mut out = Vec::new();
        for tier in &self.config.heldout {
            for &level in &tier.levels {
                let env = make_env(tier.family, level, 0.0, &tier.overrides)?;
                out.push((env.spec().env_id.clone(), tier, level));
            }
        }
        Ok(out)
    }

    fn largest_count(&self) -> usize {
        *self.config.eval.demo_counts.last().expect("validated non-empty")
    }

    fn model_config(&self, sets: &[CtxSet]) -> ModelConfig {
        let mut mc = ModelConfig::for_specs(sets.iter().map(|s| &s.spec), self.config.n);
        let m = self.config.model;
        mc.n_layers = m.n_layers;
        mc.n_heads = m.n_heads;
        mc.hidden = m.hidden;
        mc.seed = self.stream(STREAM_MODEL_INIT);
        mc
    }

    fn train_config(&self) -> regent_model::TrainConfig {
        regent_model::TrainConfig {
            seed: derive_seed(self.stream(STREAM_TRAIN), self.config.train.seed),
            interp: self.config.interp,
            ..self.config.train.clone()
        }
    }
}

/// Records demonstrations for every pretraining level and every held-out
/// level. Held-out levels get the largest demo count of the sweep; smaller
/// counts are prefixes.
pub fn cmd_gen(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let mut manifest = exp.manifest()?;
    let mut written = Vec::new();
    for (env_id, set, level) in exp.train_envs()? {
        let seed = derive_seed(exp.stream(STREAM_TRAIN_DEMOS), level);
        let mut demos = generate_demos(set.family, &[level], set.demos_per_level, &set.overrides, seed)?;
        if let Some(r) = set.retrieval_demos {
            demos = designate_retrieval_set(&demos, r, derive_seed(exp.stream(STREAM_DESIGNATION), level))?;
        }
        let path = exp.layout.train_demos(&env_id);
        write_demos(&path, &demos)?;
        manifest.record(&exp.layout, &path)?;
        written.push(path);
    }
    for (env_id, tier, level) in exp.heldout_envs()? {
        let seed = derive_seed(exp.stream(STREAM_HELDOUT_DEMOS), level);
        let demos = generate_demos(tier.family, &[level], exp.largest_count(), &tier.overrides, seed)?;
        let path = exp.layout.heldout_demos(&tier.name, &env_id);
        write_demos(&path, &demos)?;
        manifest.record(&exp.layout, &path)?;
        written.push(path);
    }
    manifest.save(&exp.layout)?;
    Ok(written)
}

fn write_demos(path: &std::path::Path, demos: &DemoSet) -> Result<()> {
    ensure_parent(path)?;
    write_demoset_file(path, demos).with_context(|| format!("writing {}", path.display()))
}

/// Turns every pretraining demoset into context datapoints.
pub fn cmd_preprocess(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let mut manifest = exp.manifest()?;
    let mut written = Vec::new();
    for (env_id, set, _) in exp.train_envs()? {
        let src = exp.layout.train_demos(&env_id);
        require(&src, "gen")?;
        let demos = read_demoset_file(&src)?;
        let ctx = preprocess(&demos, set.family.default_metric(), exp.config.n)?;
        let path = exp.layout.train_ctx(&env_id);
        ensure_parent(&path)?;
        write_ctxset_file(&path, &ctx)?;
        manifest.record(&exp.layout, &path)?;
        written.push(path);
    }
    manifest.save(&exp.layout)?;
    Ok(written)
}

#[derive(Debug, Serialize)]
struct LossRow<'a> {
    config_hash: &'a str,
    step: usize,
    env_id: &'a str,
    loss: f64,
    lr: f64,
}

fn load_train_ctx(exp: &Experiment) -> Result<Vec<CtxSet>> {
    exp.train_envs()?
        .into_iter()
        .map(|(env_id, _, _)| {
            let path = exp.layout.train_ctx(&env_id);
            require(&path, "preprocess")?;
            Ok(read_ctxset_file(&path)?)
        })
        .collect()
}

/// Trains one model on every pretraining environment; writes the checkpoint
/// and the per-step loss log.
pub fn cmd_pretrain(exp: &Experiment) -> Result<PathBuf> {
    let sets = load_train_ctx(exp)?;
    let (model, log) = pretrain(&sets, exp.model_config(&sets), &exp.train_config())?;
    let mut manifest = exp.manifest()?;
    let path = exp.layout.pretrained();
    ensure_parent(&path)?;
    write_checkpoint(&path, &model)?;
    manifest.record(&exp.layout, &path)?;
    let rows: Vec<LossRow> = log
        .iter()
        .map(|r| LossRow { config_hash: &exp.hash, step: r.step, env_id: &r.env_id, loss: r.loss, lr: r.lr })
        .collect();
    let log_path = exp.layout.report("loss_log.csv");
    write_csv(&log_path, &rows)?;
    manifest.record(&exp.layout, &log_path)?;
    manifest.save(&exp.layout)?;
    Ok(path)
}

fn load_pretrained(exp: &Experiment) -> Result<SeqModel> {
    let path = exp.layout.pretrained();
    require(&path, "pretrain")?;
    Ok(read_checkpoint(&path)?)
}

fn load_heldout(exp: &Experiment, tier: &HeldoutTier, env_id: &str) -> Result<DemoSet> {
    let path = exp.layout.heldout_demos(&tier.name, env_id);
    require(&path, "gen")?;
    let demos = read_demoset_file(&path)?;
    if demos.demos.len() < exp.largest_count() {
        bail!(
            "{} holds {} demos but the sweep needs {}; rerun `regent gen`",
            path.display(),
            demos.demos.len(),
            exp.largest_count()
        );
    }
    Ok(demos)
}

/// Demo counts that can be finetuned on: contexts exclude the query's own
/// demonstration, so a single demonstration yields no training data.
fn finetune_counts(exp: &Experiment) -> impl Iterator<Item = usize> + '_ {
    exp.config.eval.demo_counts.iter().copied().filter(|&k| k >= 2)
}

/// Finetunes the pretrained model on each held-out environment's demos, for
/// every demo count of the sweep.
pub fn cmd_finetune(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let model = load_pretrained(exp)?;
    let mut manifest = exp.manifest()?;
    let mut written = Vec::new();
    for (env_id, tier, _) in exp.heldout_envs()? {
        let demos = load_heldout(exp, tier, &env_id)?;
        for k in finetune_counts(exp) {
            let ctx = preprocess(&demos.prefix(k), tier.family.default_metric(), exp.config.n)?;
            let (tuned, _) = finetune(&model, &ctx, &exp.train_config())?;
            let path = exp.layout.finetuned(&tier.name, &env_id, k);
            ensure_parent(&path)?;
            write_checkpoint(&path, &tuned)?;
            manifest.record(&exp.layout, &path)?;
            written.push(path);
        }
    }
    manifest.save(&exp.layout)?;
    Ok(written)
}

/// One evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRow {
    pub config_hash: String,
    pub tier: String,
    pub env_id: String,
    pub level_seed: u64,
    pub policy: String,
    pub n_demos: usize,
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub normalized_return: f64,
}

/// Mean and standard deviation of normalized returns for one cell of the
/// sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub tier: String,
    pub env_id: String,
    pub policy: String,
    pub n_demos: usize,
    pub episodes: usize,
    pub mean_normalized_return: f64,
    pub std_normalized_return: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Rolls out every requested policy on every held-out environment for every
/// demo count. Episodes are seeded identically across policies and counts.
pub fn cmd_eval(exp: &Experiment) -> Result<(Vec<RolloutRow>, Vec<SummaryRow>)> {
    let policies = &exp.config.eval.policies;
    let pretrained = if policies.iter().any(|p| *p != PolicyKind::Rnp) {
        Some(Arc::new(load_pretrained(exp)?))
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (env_id, tier, level) in exp.heldout_envs()? {
        let env = make_env(tier.family, level, tier.sticky_p, &tier.overrides)?;
        let demos = load_heldout(exp, tier, &env_id)?;
        let metric = tier.family.default_metric();
        let seed = derive_seed(exp.stream(STREAM_EVAL), level);
        for &k in &exp.config.eval.demo_counts {
            let subset = demos.prefix(k);
            for &kind in policies {
                let policy: Box<dyn Policy> = match kind {
                    PolicyKind::Rnp => Box::new(RnpPolicy::new(&subset, metric)?),
                    PolicyKind::Regent => Box::new(RegentPolicy::new(
                        pretrained.clone().expect("loaded above"),
                        &subset,
                        metric,
                        exp.config.n,
                        exp.config.interp,
                    )?),
                    PolicyKind::RegentFinetuned => {
                        if k < 2 {
                            // nothing to finetune on
                            continue;
                        }
                        let path = exp.layout.finetuned(&tier.name, &env_id, k);
                        require(&path, "finetune")?;
                        Box::new(RegentPolicy::new(
                            Arc::new(read_checkpoint(&path)?),
                            &subset,
                            metric,
                            exp.config.n,
                            exp.config.interp,
                        )?)
                    }
                };
                let result = rollout(&env, policy.as_ref(), exp.config.eval.episodes, seed)?;
                let mut normalized = Vec::with_capacity(result.returns.len());
                for (episode, &ret) in result.returns.iter().enumerate() {
                    let nr = normalized_return(ret, env.spec())?;
                    normalized.push(nr);
                    rows.push(RolloutRow {
                        config_hash: exp.hash.clone(),
                        tier: tier.name.clone(),
                        env_id: env_id.clone(),
                        level_seed: level,
                        policy: kind.name().to_string(),
                        n_demos: k,
                        episode,
                        ret,
                        normalized_return: nr,
                    });
                }
                let (mean, std) = mean_std(&normalized);
                summary.push(SummaryRow {
                    config_hash: exp.hash.clone(),
                    tier: tier.name.clone(),
                    env_id: env_id.clone(),
                    policy: kind.name().to_string(),
                    n_demos: k,
                    episodes: normalized.len(),
                    mean_normalized_return: mean,
                    std_normalized_return: std,
                });
            }
        }
    }
    let mut manifest = exp.manifest()?;
    for (name, written) in [
        ("rollouts.csv", write_csv(&exp.layout.report("rollouts.csv"), &rows)),
        ("summary.csv", write_csv(&exp.layout.report("summary.csv"), &summary)),
    ] {
        written?;
        manifest.record(&exp.layout, &exp.layout.report(name))?;
    }
    manifest.save(&exp.layout)?;
    Ok((rows, summary))
}

#[derive(Debug, Serialize)]
struct BoundRow<'a> {
    config_hash: &'a str,
    env_id: &'a str,
    n_demos: usize,
    sticky_p: f64,
    d_isolated: f64,
    d_estimated: bool,
    lambda: f64,
    horizon: u32,
    bound: f64,
    empirical_gap: f64,
    gap_se: f64,
    within_bound: bool,
}

/// Runs the coverage-bound sweep with retrieve-and-play. Fails after writing
/// the report if any clean (no sticky actions) row exceeds its bound.
pub fn cmd_bound(exp: &Experiment) -> Result<Vec<BoundReport>> {
    let Some(b) = &exp.config.bound else {
        bail!("configuration has no [bound] section");
    };
    let metric = b.family.default_metric();
    let build =
        |d: &DemoSet| -> regent_core::Result<Box<dyn Policy>> { Ok(Box::new(RnpPolicy::new(d, metric)?)) };
    let mut sweep = BoundSweep {
        family: b.family,
        level_seed: b.level_seed,
        overrides: b.overrides.clone(),
        demo_counts: b.demo_counts.clone(),
        episodes: b.episodes,
        sticky_p: 0.0,
        interp: exp.config.interp,
        seed: exp.stream(STREAM_BOUND),
    };
    let mut reports = bound_experiment(&sweep, build)?;
    let violations = reports.iter().filter(|r| !r.within_bound).count();
    if let Some(p) = b.sticky_p {
        sweep.sticky_p = p;
        reports.extend(bound_experiment(&sweep, build)?);
    }
    let path = exp.layout.report("bound.csv");
    let rows: Vec<BoundRow> = reports
        .iter()
        .map(|r| BoundRow {
            config_hash: &exp.hash,
            env_id: &r.env_id,
            n_demos: r.n_demos,
            sticky_p: r.sticky_p,
            d_isolated: r.d_isolated,
            d_estimated: r.d_estimated,
            lambda: r.lambda,
            horizon: r.horizon,
            bound: r.bound,
            empirical_gap: r.empirical_gap,
            gap_se: r.gap_se,
            within_bound: r.within_bound,
        })
        .collect();
    write_csv(&path, &rows)?;
    let mut manifest = exp.manifest()?;
    manifest.record(&exp.layout, &path)?;
    manifest.save(&exp.layout)?;
    if violations > 0 {
        bail!("{violations} demo count(s) exceed the sub-optimality bound; see {}", path.display());
    }
    Ok(reports)
}

/// Tier-level aggregate of the rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub config_hash: String,
    pub tier: String,
    pub policy: String,
    pub n_demos: usize,
    pub levels: usize,
    pub episodes: usize,
    pub mean_normalized_return: f64,
    pub std_normalized_return: f64,
}

/// (tier, policy, n_demos)
type ReportKey = (String, String, usize);

/// Pools `rollouts.csv` over the levels of each tier.
pub fn cmd_report(exp: &Experiment) -> Result<Vec<ReportRow>> {
    let src = exp.layout.report("rollouts.csv");
    require(&src, "eval")?;
    let mut reader = csv::Reader::from_path(&src)?;
    let mut cells: BTreeMap<ReportKey, (Vec<u64>, Vec<f64>)> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: RolloutRow = row?;
        if row.config_hash != exp.hash {
            bail!("{} was produced by a different configuration; rerun `regent eval`", src.display());
        }
        let cell = cells.entry((row.tier, row.policy, row.n_demos)).or_default();
        if !cell.0.contains(&row.level_seed) {
            cell.0.push(row.level_seed);
        }
        cell.1.push(row.normalized_return);
    }
    let rows: Vec<ReportRow> = cells
        .into_iter()
        .map(|((tier, policy, n_demos), (levels, returns))| {
            let (mean, std) = mean_std(&returns);
            ReportRow {
                config_hash: exp.hash.clone(),
                tier,
                policy,
                n_demos,
                levels: levels.len(),
                episodes: returns.len(),
                mean_normalized_return: mean,
                std_normalized_return: std,
            }
        })
        .collect();
    let path = exp.layout.report("report.csv");
    write_csv(&path, &rows)?;
    let mut manifest = exp.manifest()?;
    manifest.record(&exp.layout, &path)?;
    manifest.save(&exp.layout)?;
    Ok(rows)
}
