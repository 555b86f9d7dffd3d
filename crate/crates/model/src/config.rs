use serde::{Deserialize, Serialize};

use regent_core::agents::InterpConfig;
use regent_core::types::{ActKind, EnvSpec};
use regent_core::{Error, Result};

/// Shape of the sequence model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden: usize,
    /// Token positions; at least `2 * (n + 1)` for `n` retrieved neighbors.
    pub max_positions: usize,
    /// Width of the shared continuous encoder input (largest observation
    /// length plus one for the reward) and of the continuous head.
    pub max_cont_input: usize,
    /// Width of the discrete action table and head.
    pub n_act_max: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale default: 2 layers, 2 heads, hidden 64.
    pub fn desk(n: usize, max_cont_input: usize, n_act_max: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            hidden: 64,
            max_positions: 2 * (n + 1),
            max_cont_input,
            n_act_max,
            seed: 0,
        }
    }

    /// Desk config sized to cover every environment in `specs`.
    pub fn for_specs<'a>(specs: impl IntoIterator<Item = &'a EnvSpec>, n: usize) -> Self {
        let mut cont = 1;
        let mut act = 1;
        for s in specs {
            cont = cont.max(s.obs_len() + 1);
            match s.act_kind {
                ActKind::Discrete => act = act.max(s.act_dims as usize),
                ActKind::Continuous => cont = cont.max(s.act_dims as usize),
            }
        }
        ModelConfig::desk(n, cont, act)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("hidden", self.hidden),
            ("max_positions", self.max_positions),
            ("max_cont_input", self.max_cont_input),
            ("n_act_max", self.n_act_max),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.hidden.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden {} not divisible by n_heads {}",
                self.hidden, self.n_heads
            )));
        }
        if self.max_positions < 2 {
            return Err(Error::Config("max_positions must allow one neighbor".into()));
        }
        Ok(())
    }

    /// Largest context that fits the position table.
    pub fn max_context(&self) -> usize {
        self.max_positions / 2 - 1
    }

    /// Number of parameters:
    /// `(C+1)H + AH + MH + layers(12H² + 13H) + 2H + (HA + A) + (HC + C)`
    /// with `C = max_cont_input`, `A = n_act_max`, `M = max_positions`.
    pub fn param_count(&self) -> usize {
        let (h, c, a, m) = (self.hidden, self.max_cont_input, self.n_act_max, self.max_positions);
        (c + 1) * h
            + a * h
            + m * h
            + self.n_layers * (12 * h * h + 13 * h)
            + 2 * h
            + (h * a + a)
            + (h * c + c)
    }

    /// Checks that an environment's observations and actions fit the heads.
    pub fn check_spec(&self, spec: &EnvSpec) -> Result<()> {
        if spec.obs_len() + 1 > self.max_cont_input {
            return Err(Error::Config(format!(
                "observation length {} exceeds max_cont_input - 1 = {}",
                spec.obs_len(),
                self.max_cont_input - 1
            )));
        }
        let (limit, what) = match spec.act_kind {
            ActKind::Discrete => (self.n_act_max, "n_act_max"),
            ActKind::Continuous => (self.max_cont_input, "max_cont_input"),
        };
        if spec.act_dims as usize > limit {
            return Err(Error::Config(format!(
                "`{}` has {} action dims, model {what} is {limit}",
                spec.env_id, spec.act_dims
            )));
        }
        Ok(())
    }
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_start: f64,
    /// Length of the linear decay schedule, in epochs.
    pub epochs: u32,
    /// Training stops after this many epochs of the schedule.
    pub stop_after_epochs: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub single_env_batches: bool,
    /// Cross-entropy / squared error on the interpolated policy rather than
    /// the raw model output.
    pub interpolate_in_loss: bool,
    pub interp: InterpConfig,
    /// Hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr_start: 5e-5,
            epochs: 3,
            stop_after_epochs: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            single_env_batches: true,
            interpolate_in_loss: true,
            interp: InterpConfig::default(),
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr_start > 0.0 && self.lr_start.is_finite()) {
            return Err(Error::Config(format!("lr_start {} must be positive", self.lr_start)));
        }
        if self.epochs == 0 || self.stop_after_epochs == 0 || self.stop_after_epochs > self.epochs {
            return Err(Error::Config(format!(
                "need 0 < stop_after_epochs ({}) <= epochs ({})",
                self.stop_after_epochs, self.epochs
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} {b} outside (0, 1)")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("eps must be positive and weight_decay non-negative".into()));
        }
        self.interp.validate()
    }

    /// Settings for adapting a pretrained model: a tenth of the learning rate
    /// over a full three-epoch run.
    pub fn finetuning(&self) -> TrainConfig {
        TrainConfig { lr_start: self.lr_start / 10.0, epochs: 3, stop_after_epochs: 3, ..self.clone() }
    }
}
