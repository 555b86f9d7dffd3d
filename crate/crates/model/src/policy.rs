//! The interpolated policy deployed in an environment.

use std::sync::Arc;

use rand::RngCore;

use regent_core::agents::{greedy_action, regent_continuous, regent_discrete, InterpConfig};
use regent_core::distance::{calibrate_for_deployment, Metric};
use regent_core::envs::{EnvInstance, Policy};
use regent_core::retrieval::StateIndex;
use regent_core::types::{ActKind, ActValue, ContextDatapoint, DemoSet, EnvSpec, ObsValue};
use regent_core::{Error, Result};

use crate::model::SeqModel;

/// Retrieves `n` neighbors from the environment's demonstrations, runs the
/// model on them, and blends its query prediction with the retrieved action.
/// Discrete actions are chosen greedily; continuous ones are clipped to the
/// action box.
#[derive(Debug, Clone)]
pub struct RegentPolicy {
    model: Arc<SeqModel>,
    index: StateIndex,
    spec: EnvSpec,
    n: usize,
    interp: InterpConfig,
}

impl RegentPolicy {
    pub fn new(
        model: Arc<SeqModel>,
        demoset: &DemoSet,
        metric: Metric,
        n: usize,
        interp: InterpConfig,
    ) -> Result<Self> {
        model.config().check_spec(&demoset.spec)?;
        if n == 0 || n > model.config().max_context() {
            return Err(Error::Config(format!(
                "context size {n} outside 1..={}",
                model.config().max_context()
            )));
        }
        interp.validate()?;
        let normalizer = calibrate_for_deployment(demoset, metric)?;
        Ok(RegentPolicy {
            index: StateIndex::build(demoset, metric, normalizer)?,
            spec: demoset.spec.clone(),
            model,
            n,
            interp,
        })
    }

    pub fn model(&self) -> &SeqModel {
        &self.model
    }

    pub fn context(&self, obs: &ObsValue, prev_reward: f64) -> Result<ContextDatapoint> {
        self.index.build_context(obs, prev_reward, self.n, None)
    }

    /// Action for an assembled context.
    pub fn act_on(&self, ctx: &ContextDatapoint) -> Result<ActValue> {
        let enc = self.model.encode_sequence(ctx, &self.spec)?;
        let preds = self.model.forward(&enc)?;
        let query = preds.values.last().expect("at least one prediction");
        Ok(match self.spec.act_kind {
            ActKind::Discrete => {
                let p = regent_discrete(query, ctx, self.spec.act_dims as usize, &self.interp)?;
                ActValue::Discrete(greedy_action(&p))
            }
            ActKind::Continuous => ActValue::Continuous(
                regent_continuous(query, ctx, &self.interp)?
                    .into_iter()
                    .map(|a| a.clamp(-1.0, 1.0))
                    .collect(),
            ),
        })
    }
}

impl Policy for RegentPolicy {
    fn act(
        &self,
        _: &EnvInstance,
        obs: &ObsValue,
        prev_reward: f64,
        _: &mut dyn RngCore,
    ) -> Result<ActValue> {
        let ctx = self.context(obs, prev_reward)?;
        self.act_on(&ctx)
    }
}
