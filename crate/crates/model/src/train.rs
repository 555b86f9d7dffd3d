//! Pretraining across environments and per-environment finetuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use regent_core::par::Execution;
use regent_core::retrieval::CtxSet;
use regent_core::types::{ContextDatapoint, EnvSpec};
use regent_core::{Error, Result};

use crate::config::{ModelConfig, TrainConfig};
use crate::loss::LossConfig;
use crate::model::SeqModel;

/// One optimizer step in the loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    /// Environment of the batch, or `mixed`.
    pub env_id: String,
    pub loss: f64,
    pub lr: f64,
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n_params: usize, cfg: &TrainConfig) -> Self {
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

/// Mean loss and mean parameter gradient over a batch. Per-sample gradients
/// may be computed in parallel; they are summed in batch order so the result
/// does not depend on the execution mode.
pub fn batch_gradient(
    model: &SeqModel,
    batch: &[(&ContextDatapoint, &EnvSpec)],
    cfg: &LossConfig,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    let per_sample = exec.map_slice(batch, |(ctx, spec)| model.loss_and_grad(ctx, spec, cfg));
    let mut grad = vec![0.0; model.param_count()];
    let mut total = 0.0;
    for r in per_sample {
        let (l, g) = r?;
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((total * scale, grad))
}

/// (dataset index, datapoint index) pairs forming each batch of one epoch.
fn epoch_batches(datasets: &[&CtxSet], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<(usize, usize)>> {
    let mut batches = Vec::new();
    if cfg.single_env_batches {
        for (e, set) in datasets.iter().enumerate() {
            let mut idx: Vec<usize> = (0..set.datapoints.len()).collect();
            idx.shuffle(rng);
            for chunk in idx.chunks(cfg.batch_size) {
                batches.push(chunk.iter().map(|&i| (e, i)).collect());
            }
        }
        // interleaving whole batches visits each environment in proportion
        // to its dataset size
        batches.shuffle(rng);
    } else {
        let mut all: Vec<(usize, usize)> = datasets
            .iter()
            .enumerate()
            .flat_map(|(e, s)| (0..s.datapoints.len()).map(move |i| (e, i)))
            .collect();
        all.shuffle(rng);
        batches = all.chunks(cfg.batch_size).map(<[_]>::to_vec).collect();
    }
    batches
}

fn steps_per_epoch(datasets: &[&CtxSet], cfg: &TrainConfig) -> usize {
    if cfg.single_env_batches {
        datasets.iter().map(|s| s.datapoints.len().div_ceil(cfg.batch_size)).sum()
    } else {
        datasets.iter().map(|s| s.datapoints.len()).sum::<usize>().div_ceil(cfg.batch_size)
    }
}

fn train_loop(
    model: &mut SeqModel,
    datasets: &[&CtxSet],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if datasets.is_empty() || datasets.iter().any(|s| s.datapoints.is_empty()) {
        return Err(Error::Parameter("every training dataset must be non-empty".into()));
    }
    for set in datasets {
        model.config().check_spec(&set.spec)?;
    }
    let loss_cfg = LossConfig { interp: cfg.interp, through_interpolation: cfg.interpolate_in_loss };
    let per_epoch = steps_per_epoch(datasets, cfg);
    let schedule = per_epoch * cfg.epochs as usize;
    let mut budget = per_epoch * cfg.stop_after_epochs as usize;
    if let Some(cap) = cfg.max_steps {
        budget = budget.min(cap);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(model.param_count(), cfg);
    let mut log = Vec::with_capacity(budget);
    let mut step = 0;
    'epochs: while step < budget {
        for batch in epoch_batches(datasets, cfg, &mut rng) {
            if step >= budget {
                break 'epochs;
            }
            let items: Vec<(&ContextDatapoint, &EnvSpec)> =
                batch.iter().map(|&(e, i)| (&datasets[e].datapoints[i], &datasets[e].spec)).collect();
            let env_id = if batch.iter().all(|&(e, _)| e == batch[0].0) {
                datasets[batch[0].0].spec.env_id.clone()
            } else {
                "mixed".to_string()
            };
            let lr = cfg.lr_start * (1.0 - step as f64 / schedule as f64);
            let (loss, grad) = batch_gradient(model, &items, &loss_cfg, exec)?;
            if !loss.is_finite() {
                return Err(Error::Domain(format!("non-finite loss at step {step}")));
            }
            opt.step(model.params_mut(), &grad, lr);
            log.push(LossRecord { step, env_id, loss, lr });
            step += 1;
        }
    }
    Ok(log)
}

/// Trains a freshly initialized model on several environments' datasets.
pub fn pretrain(
    datasets: &[CtxSet],
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(SeqModel, Vec<LossRecord>)> {
    pretrain_with(datasets, model_cfg, train_cfg, Execution::default())
}

pub fn pretrain_with(
    datasets: &[CtxSet],
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    exec: Execution,
) -> Result<(SeqModel, Vec<LossRecord>)> {
    if datasets.is_empty() {
        return Err(Error::Parameter("no training datasets".into()));
    }
    let mut ids: Vec<&str> = datasets.iter().map(|s| s.spec.env_id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Parameter("duplicate environment id among datasets".into()));
    }
    let mut model = SeqModel::new(model_cfg)?;
    let refs: Vec<&CtxSet> = datasets.iter().collect();
    let log = train_loop(&mut model, &refs, train_cfg, exec)?;
    Ok((model, log))
}

/// Continues training on one environment's dataset with a tenth of the
/// learning rate for three full epochs, from a fresh optimizer state.
pub fn finetune(
    model: &SeqModel,
    dataset: &CtxSet,
    train_cfg: &TrainConfig,
) -> Result<(SeqModel, Vec<LossRecord>)> {
    finetune_with(model, dataset, &train_cfg.finetuning(), Execution::default())
}

/// Finetunes with `cfg` used as given.
pub fn finetune_with(
    model: &SeqModel,
    dataset: &CtxSet,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<(SeqModel, Vec<LossRecord>)> {
    let mut tuned = model.clone();
    if cfg.max_steps == Some(0) {
        model.config().check_spec(&dataset.spec)?;
        return Ok((tuned, Vec::new()));
    }
    let log = train_loop(&mut tuned, &[dataset], cfg, exec)?;
    Ok((tuned, log))
}

/// Mean loss of a model over a dataset.
pub fn mean_loss(model: &SeqModel, dataset: &CtxSet, cfg: &LossConfig) -> Result<f64> {
    let losses =
        Execution::default().map_slice(&dataset.datapoints, |dp| model.loss_value(dp, &dataset.spec, cfg));
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / dataset.datapoints.len().max(1) as f64)
}
