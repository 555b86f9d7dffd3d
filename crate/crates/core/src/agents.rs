//! Retrieve-and-play, its softened distribution, and the distance-weighted
//! interpolation between retrieval and a parametric policy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ActValue, ContextDatapoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpConfig {
    /// Decay rate of the retrieval weight `exp(-lambda * d)`.
    pub lambda: f64,
    /// Output scale for continuous actions.
    pub l_scale: f64,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig { lambda: 10.0, l_scale: 10.0 }
    }
}

impl InterpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.l_scale > 0.0) {
            return Err(Error::Parameter("lambda and l_scale must be positive".into()));
        }
        Ok(())
    }

    /// Weight on the retrieval term for a normalized distance.
    pub fn retrieval_weight(&self, d: f64) -> f64 {
        (-self.lambda * d).exp()
    }
}

/// Identity on `[-1, 1]`, clipped outside. NaN propagates.
pub fn mixed_relu(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// `2 (relu((x+1)/2) - relu((x-1)/2)) - 1`, the ReLU composition that
/// [`mixed_relu`] simplifies.
pub fn mixed_relu_composed(x: f64) -> f64 {
    let relu = |v: f64| v.max(0.0);
    2.0 * (relu((x + 1.0) / 2.0) - relu((x - 1.0) / 2.0)) - 1.0
}

/// Derivative of [`mixed_relu`] away from the kinks at `±1`.
pub fn mixed_relu_grad(x: f64) -> f64 {
    if (-1.0..=1.0).contains(&x) {
        1.0
    } else {
        0.0
    }
}

/// Plays the action of the closest retrieved state.
pub fn rnp_action(ctx: &ContextDatapoint) -> Result<ActValue> {
    ctx.first_action().cloned()
}

/// Softened retrieve-and-play distribution: all mass on `a_prime` at `d = 0`,
/// uniform at `d = 1`.
pub fn rnp_distribution(a_prime: u32, d: f64, n_act: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::Domain(format!("distance {d} outside [0, 1]")));
    }
    if n_act < 2 {
        return Err(Error::Parameter(format!("need at least 2 actions, got {n_act}")));
    }
    if a_prime as usize >= n_act {
        return Err(Error::Parameter(format!("action {a_prime} out of range 0..{n_act}")));
    }
    let n = n_act as f64;
    let mut p = vec![d / n; n_act];
    p[a_prime as usize] = (1.0 + (n - 1.0) * (1.0 - d)) / n;
    Ok(p)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Interpolated distribution for one prediction, given the retrieved action
/// and the normalized distance that governs it.
pub fn interpolate_discrete(logits: &[f64], a_prime: u32, d: f64, cfg: &InterpConfig) -> Result<Vec<f64>> {
    if logits.iter().any(|z| z.is_nan()) {
        return Err(Error::Domain("NaN logits".into()));
    }
    let rnp = rnp_distribution(a_prime, d, logits.len())?;
    let w = cfg.retrieval_weight(d);
    Ok(rnp.iter().zip(softmax(logits)).map(|(r, s)| w * r + (1.0 - w) * s).collect())
}

/// Interpolated continuous action for one prediction.
pub fn interpolate_continuous(
    raw_out: &[f64],
    a_prime: &[f64],
    d: f64,
    cfg: &InterpConfig,
) -> Result<Vec<f64>> {
    if raw_out.len() != a_prime.len() {
        return Err(Error::Dimension { expected: a_prime.len(), got: raw_out.len() });
    }
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::Domain(format!("distance {d} outside [0, 1]")));
    }
    let w = cfg.retrieval_weight(d);
    Ok(a_prime.iter().zip(raw_out).map(|(&a, &x)| w * a + (1.0 - w) * cfg.l_scale * mixed_relu(x)).collect())
}

/// Query-position distribution of the interpolated policy.
pub fn regent_discrete(
    logits: &[f64],
    ctx: &ContextDatapoint,
    n_act: usize,
    cfg: &InterpConfig,
) -> Result<Vec<f64>> {
    if logits.len() != n_act {
        return Err(Error::Dimension { expected: n_act, got: logits.len() });
    }
    let a_prime = ctx
        .first_action()?
        .as_discrete()
        .ok_or_else(|| Error::Contract("retrieved action is not discrete".into()))?;
    interpolate_discrete(logits, a_prime, ctx.dist_first, cfg)
}

/// Query-position action of the interpolated policy.
pub fn regent_continuous(raw_out: &[f64], ctx: &ContextDatapoint, cfg: &InterpConfig) -> Result<Vec<f64>> {
    let a_prime = ctx
        .first_action()?
        .as_continuous()
        .ok_or_else(|| Error::Contract("retrieved action is not continuous".into()))?;
    interpolate_continuous(raw_out, a_prime, ctx.dist_first, cfg)
}

/// Greedy action; ties go to the lowest index.
pub fn greedy_action(probs: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best as u32
}
