//! Supervised loss over every action prediction of a context, optionally
//! taken through the retrieval interpolation.

use regent_core::agents::{mixed_relu, mixed_relu_grad, rnp_distribution, softmax, InterpConfig};
use regent_core::types::{ActKind, ActValue, ContextDatapoint, EnvSpec};
use regent_core::{Error, Result};

use crate::model::{Predictions, SeqModel};

/// Floor on the probability of the target action, so a retrieved action that
/// disagrees with the target at zero distance costs `-ln(1e-12)` rather than
/// infinity.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub interp: InterpConfig,
    pub through_interpolation: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { interp: InterpConfig::default(), through_interpolation: true }
    }
}

/// Target action for every prediction position: each neighbor's own action,
/// then the query's.
pub fn targets(ctx: &ContextDatapoint) -> Result<Vec<&ActValue>> {
    let query =
        ctx.query_action.as_ref().ok_or_else(|| Error::Contract("datapoint has no target action".into()))?;
    Ok(ctx.neighbors.iter().map(|s| &s.action).chain(std::iter::once(query)).collect())
}

/// Summed loss over all positions and its gradient with respect to each
/// prediction vector.
pub fn loss(
    preds: &Predictions,
    ctx: &ContextDatapoint,
    spec: &EnvSpec,
    cfg: &LossConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let targets = targets(ctx)?;
    if preds.values.len() != targets.len() {
        return Err(Error::Dimension { expected: targets.len(), got: preds.values.len() });
    }
    let a_prime = ctx.first_action()?;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(targets.len());
    for ((out, target), d) in preds.values.iter().zip(&targets).zip(ctx.position_dists()) {
        let w = if cfg.through_interpolation { cfg.interp.retrieval_weight(d) } else { 0.0 };
        let (l, g) = match (spec.act_kind, target, a_prime) {
            (ActKind::Discrete, ActValue::Discrete(y), ActValue::Discrete(ap)) => {
                discrete_term(out, *y as usize, *ap, d, w)?
            }
            (ActKind::Continuous, ActValue::Continuous(y), ActValue::Continuous(ap)) => {
                continuous_term(out, y, ap, w, cfg.interp.l_scale)?
            }
            _ => return Err(Error::Contract("action kinds disagree with the environment".into())),
        };
        total += l;
        grads.push(g);
    }
    Ok((total, grads))
}

fn discrete_term(logits: &[f64], y: usize, a_prime: u32, d: f64, w: f64) -> Result<(f64, Vec<f64>)> {
    if y >= logits.len() {
        return Err(Error::Dimension { expected: logits.len(), got: y + 1 });
    }
    let s = softmax(logits);
    let r = if w > 0.0 { rnp_distribution(a_prime, d, logits.len())?[y] } else { 0.0 };
    let p = w * r + (1.0 - w) * s[y];
    if p < PROB_FLOOR {
        return Ok((-PROB_FLOOR.ln(), vec![0.0; logits.len()]));
    }
    // dp/dz_k = (1 - w) s_y (delta_yk - s_k)
    let coef = -(1.0 - w) * s[y] / p;
    let g = (0..logits.len()).map(|k| coef * (if k == y { 1.0 } else { 0.0 } - s[k])).collect();
    Ok((-p.ln(), g))
}

fn continuous_term(raw: &[f64], y: &[f64], a_prime: &[f64], w: f64, l_scale: f64) -> Result<(f64, Vec<f64>)> {
    if raw.len() != y.len() || a_prime.len() != y.len() {
        return Err(Error::Dimension { expected: y.len(), got: raw.len() });
    }
    let n = y.len() as f64;
    let mut l = 0.0;
    let mut g = Vec::with_capacity(raw.len());
    for j in 0..raw.len() {
        let out = w * a_prime[j] + (1.0 - w) * l_scale * mixed_relu(raw[j]);
        let e = out - y[j];
        l += e * e / n;
        g.push(2.0 * e / n * (1.0 - w) * l_scale * mixed_relu_grad(raw[j]));
    }
    Ok((l, g))
}

impl SeqModel {
    /// Loss of one datapoint and its gradient with respect to the parameters.
    pub fn loss_and_grad(
        &self,
        ctx: &ContextDatapoint,
        spec: &EnvSpec,
        cfg: &LossConfig,
    ) -> Result<(f64, Vec<f64>)> {
        let enc = self.encode_sequence(ctx, spec)?;
        let (preds, cache) = self.forward_cached(&enc)?;
        let (l, dpred) = loss(&preds, ctx, spec, cfg)?;
        Ok((l, self.backward(&enc, &cache, &dpred)?))
    }

    pub fn loss_value(&self, ctx: &ContextDatapoint, spec: &EnvSpec, cfg: &LossConfig) -> Result<f64> {
        let enc = self.encode_sequence(ctx, spec)?;
        let preds = self.forward(&enc)?;
        Ok(loss(&preds, ctx, spec, cfg)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use regent_core::types::{ObsKind, ObsValue, Step, StepRef};

    fn spec(kind: ActKind) -> EnvSpec {
        EnvSpec {
            env_id: "toy".into(),
            obs_kind: ObsKind::Vector,
            obs_dims: vec![2],
            act_kind: kind,
            act_dims: if kind == ActKind::Discrete { 3 } else { 2 },
            horizon: 5,
            random_return: 0.0,
            expert_return: 1.0,
        }
    }

    fn ctx(actions: Vec<ActValue>, query: ActValue, dists: Vec<f64>, dist_first: f64) -> ContextDatapoint {
        let n = actions.len();
        ContextDatapoint {
            env_id: "toy".into(),
            neighbors: actions
                .into_iter()
                .map(|a| Step { state: ObsValue(vec![0.0, 1.0]), prev_reward: 0.0, action: a })
                .collect(),
            neighbor_refs: (0..n).map(|i| StepRef { demo_id: 1, step_idx: i as u32 }).collect(),
            neighbor_dists: dists,
            query_state: ObsValue(vec![0.5, 0.5]),
            query_prev_reward: 0.0,
            query_action: Some(query),
            query_ref: None,
            dist_first,
        }
    }

    #[test]
    fn one_hot_on_target_is_zero_loss() {
        let c = ctx(
            vec![ActValue::Discrete(2), ActValue::Discrete(2)],
            ActValue::Discrete(2),
            vec![0.0, 0.0],
            0.0,
        );
        let preds = Predictions { act_kind: ActKind::Discrete, values: vec![vec![0.3, -1.0, 0.2]; 3] };
        let (l, g) = loss(&preds, &c, &spec(ActKind::Discrete), &LossConfig::default()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_continuous_prediction_is_zero_loss() {
        let a = vec![0.2, -0.4];
        let c = ctx(vec![ActValue::Continuous(a.clone())], ActValue::Continuous(a.clone()), vec![0.0], 0.5);
        // query: w a' + (1-w) L x = a' needs x = a' / L
        let preds =
            Predictions { act_kind: ActKind::Continuous, values: vec![vec![5.0, 5.0], vec![0.02, -0.04]] };
        let (l, _) = loss(&preds, &c, &spec(ActKind::Continuous), &LossConfig::default()).unwrap();
        assert!(l.abs() < 1e-28);
    }

    #[test]
    fn mismatched_action_at_zero_distance_is_finite() {
        let c = ctx(vec![ActValue::Discrete(0)], ActValue::Discrete(1), vec![0.0], 0.0);
        let preds = Predictions { act_kind: ActKind::Discrete, values: vec![vec![0.0; 3]; 2] };
        let (l, _) = loss(&preds, &c, &spec(ActKind::Discrete), &LossConfig::default()).unwrap();
        assert!((l + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn raw_mode_is_plain_cross_entropy() {
        let c = ctx(vec![ActValue::Discrete(0)], ActValue::Discrete(1), vec![0.0], 0.0);
        let preds = Predictions { act_kind: ActKind::Discrete, values: vec![vec![0.0; 3]; 2] };
        let cfg = LossConfig { through_interpolation: false, ..LossConfig::default() };
        let (l, _) = loss(&preds, &c, &spec(ActKind::Discrete), &cfg).unwrap();
        assert!((l - 2.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn missing_target_is_contract_violation() {
        let mut c = ctx(vec![ActValue::Discrete(0)], ActValue::Discrete(1), vec![0.0], 0.0);
        c.query_action = None;
        let preds = Predictions { act_kind: ActKind::Discrete, values: vec![vec![0.0; 3]; 2] };
        assert!(matches!(
            loss(&preds, &c, &spec(ActKind::Discrete), &LossConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn output_gradients_match_finite_differences() {
        let c = ctx(
            vec![ActValue::Discrete(0), ActValue::Discrete(2)],
            ActValue::Discrete(1),
            vec![0.0, 0.15],
            0.07,
        );
        let base = vec![vec![0.3, -0.2, 0.9], vec![-1.0, 0.4, 0.1], vec![0.0, 0.5, -0.5]];
        let s = spec(ActKind::Discrete);
        let cfg = LossConfig::default();
        let f = |v: &Vec<Vec<f64>>| {
            loss(&Predictions { act_kind: ActKind::Discrete, values: v.clone() }, &c, &s, &cfg).unwrap()
        };
        let (_, g) = f(&base);
        for i in 0..3 {
            for j in 0..3 {
                let mut up = base.clone();
                up[i][j] += 1e-6;
                let mut dn = base.clone();
                dn[i][j] -= 1e-6;
                let fd = (f(&up).0 - f(&dn).0) / 2e-6;
                assert!((fd - g[i][j]).abs() < 1e-7, "{i},{j}: {fd} vs {}", g[i][j]);
            }
        }
    }
}
