//! Pre-LN causal transformer over interleaved (state+reward, action) tokens,
//! with forward caches and exact reverse-mode gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use regent_core::types::{ActKind, ActValue, ContextDatapoint, EnvSpec, ObsValue};
use regent_core::{Error, Result};

use crate::config::ModelConfig;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    w_qkv: usize,
    b_qkv: usize,
    w_o: usize,
    b_o: usize,
    ln2_g: usize,
    ln2_b: usize,
    w_1: usize,
    b_1: usize,
    w_2: usize,
    b_2: usize,
}

/// Offsets of each parameter group in the flat array.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    cont_w: usize,
    cont_b: usize,
    act_emb: usize,
    pos_emb: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    head_d_w: usize,
    head_d_b: usize,
    head_c_w: usize,
    head_c_b: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let cont_w = take(cfg.max_cont_input * h);
        let cont_b = take(h);
        let act_emb = take(cfg.n_act_max * h);
        let pos_emb = take(cfg.max_positions * h);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerOffsets {
                ln1_g: take(h),
                ln1_b: take(h),
                w_qkv: take(h * 3 * h),
                b_qkv: take(3 * h),
                w_o: take(h * h),
                b_o: take(h),
                ln2_g: take(h),
                ln2_b: take(h),
                w_1: take(h * 4 * h),
                b_1: take(4 * h),
                w_2: take(4 * h * h),
                b_2: take(h),
            })
            .collect();
        let lnf_g = take(h);
        let lnf_b = take(h);
        let head_d_w = take(h * cfg.n_act_max);
        let head_d_b = take(cfg.n_act_max);
        let head_c_w = take(h * cfg.max_cont_input);
        let head_c_b = take(cfg.max_cont_input);
        Layout {
            cont_w,
            cont_b,
            act_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            head_d_w,
            head_d_b,
            head_c_w,
            head_c_b,
            total: at,
        }
    }

    /// Ranges initialized as unit gains.
    fn gains(&self, h: usize) -> Vec<std::ops::Range<usize>> {
        let mut g: Vec<_> =
            self.layers.iter().flat_map(|l| [l.ln1_g..l.ln1_g + h, l.ln2_g..l.ln2_g + h]).collect();
        g.push(self.lnf_g..self.lnf_g + h);
        g
    }

    /// Ranges drawn from the initial normal distribution.
    fn weights(&self, cfg: &ModelConfig) -> Vec<std::ops::Range<usize>> {
        let h = cfg.hidden;
        let mut w = vec![
            self.cont_w..self.cont_w + cfg.max_cont_input * h,
            self.act_emb..self.act_emb + cfg.n_act_max * h,
            self.pos_emb..self.pos_emb + cfg.max_positions * h,
        ];
        for l in &self.layers {
            w.push(l.w_qkv..l.w_qkv + 3 * h * h);
            w.push(l.w_o..l.w_o + h * h);
            w.push(l.w_1..l.w_1 + 4 * h * h);
            w.push(l.w_2..l.w_2 + 4 * h * h);
        }
        w
    }
}

/// Input of one token before embedding.
#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    /// Cyclically padded continuous vector for the shared linear encoder.
    Cont(Vec<f64>),
    /// Discrete action index into the lookup table.
    Discrete(u32),
    /// The query's action slot, unknown at inference; embeds as its position only.
    Blank,
}

/// Interleaved tokens `[s0 r0, a0, s1 r1, a1, ..., s_q r_q, a_q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub tokens: Vec<Token>,
    pub act_kind: ActKind,
    pub act_dims: usize,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of action predictions (one per state token).
    pub fn predictions(&self) -> usize {
        self.tokens.len() / 2
    }
}

/// Repeats `values` cyclically to `width` entries.
pub fn cyclic_pad(values: &[f64], width: usize) -> Vec<f64> {
    values.iter().copied().cycle().take(width).collect()
}

/// Action predictions at each state-token position: logits over the
/// environment's actions, or raw pre-activation continuous outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub act_kind: ActKind,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: LnCache,
    h1: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    attn: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

/// Activations saved by [`SeqModel::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    t: usize,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    y: Vec<f64>,
}

// y[rows x out] = x[rows x inp] W[inp x out] + b
fn linear(x: &[f64], w: &[f64], b: &[f64], rows: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * out);
    for r in 0..rows {
        y.extend_from_slice(b);
        let yr = &mut y[r * out..(r + 1) * out];
        for (k, &xv) in x[r * inp..(r + 1) * inp].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (yv, &wv) in yr.iter_mut().zip(&w[k * out..(k + 1) * out]) {
                *yv += xv * wv;
            }
        }
    }
    y
}

// Accumulates dW, db and returns dx.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    inp: usize,
    out: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * inp];
    for r in 0..rows {
        let dyr = &dy[r * out..(r + 1) * out];
        for (d, &g) in db.iter_mut().zip(dyr) {
            *d += g;
        }
        let xr = &x[r * inp..(r + 1) * inp];
        let dxr = &mut dx[r * inp..(r + 1) * inp];
        for k in 0..inp {
            let wk = &w[k * out..(k + 1) * out];
            let dwk = &mut dw[k * out..(k + 1) * out];
            let xv = xr[k];
            let mut acc = 0.0;
            for j in 0..out {
                dwk[j] += xv * dyr[j];
                acc += wk[j] * dyr[j];
            }
            dxr[k] = acc;
        }
    }
    dx
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], h: usize) -> (Vec<f64>, LnCache) {
    let rows = x.len() / h;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * h..(r + 1) * h];
        let mean = xr.iter().sum::<f64>() / h as f64;
        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / h as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = inv;
        for j in 0..h {
            let xh = (xr[j] - mean) * inv;
            xhat[r * h + j] = xh;
            y[r * h + j] = g[j] * xh + b[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    g: &[f64],
    h: usize,
    dg: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let rows = dy.len() / h;
    let mut dx = vec![0.0; dy.len()];
    for r in 0..rows {
        let dyr = &dy[r * h..(r + 1) * h];
        let xh = &cache.xhat[r * h..(r + 1) * h];
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for j in 0..h {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            let d = dyr[j] * g[j];
            mean_d += d;
            mean_dx += d * xh[j];
        }
        mean_d /= h as f64;
        mean_dx /= h as f64;
        for j in 0..h {
            let d = dyr[j] * g[j];
            dx[r * h + j] = cache.inv_std[r] * (d - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl SeqModel {
    /// Builds a model with seeded initialization: normal(0, 1/sqrt(hidden))
    /// for embeddings and trunk weights, unit layer-norm gains, zero biases
    /// and zero output heads.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, 1.0 / (config.hidden as f64).sqrt())
            .map_err(|e| Error::Config(e.to_string()))?;
        for range in layout.weights(&config) {
            for p in &mut params[range] {
                *p = normal.sample(&mut rng);
            }
        }
        for range in layout.gains(config.hidden) {
            params[range].fill(1.0);
        }
        debug_assert_eq!(params.len(), config.param_count());
        Ok(SeqModel { config, layout, params })
    }

    /// Rebuilds a model from a flat parameter array.
    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::Dimension { expected: config.param_count(), got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("non-finite parameter".into()));
        }
        Ok(SeqModel { layout: Layout::new(&config), config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Sets every trunk parameter (everything but embeddings and heads,
    /// final layer norm included) to zero.
    pub fn zero_trunk(&mut self) {
        let start = self.layout.layers.first().map_or(self.layout.lnf_g, |l| l.ln1_g);
        self.params[start..self.layout.head_d_w].fill(0.0);
    }

    fn p(&self, at: usize, len: usize) -> &[f64] {
        &self.params[at..at + len]
    }

    /// Tokenizes a context and its query. The query action slot carries the
    /// target when present.
    pub fn encode_sequence(&self, ctx: &ContextDatapoint, spec: &EnvSpec) -> Result<Encoded> {
        self.config.check_spec(spec)?;
        let n_tokens = 2 * (ctx.context_len() + 1);
        if n_tokens > self.config.max_positions {
            return Err(Error::Config(format!(
                "{} tokens exceed max_positions {}",
                n_tokens, self.config.max_positions
            )));
        }
        let c = self.config.max_cont_input;
        let state_token = |s: &ObsValue, r: f64| -> Result<Token> {
            spec.check_obs(s)?;
            let mut v = s.0.clone();
            v.push(r);
            Ok(Token::Cont(cyclic_pad(&v, c)))
        };
        let action_token = |a: &ActValue| -> Result<Token> {
            spec.check_action(a)?;
            Ok(match a {
                ActValue::Discrete(i) => Token::Discrete(*i),
                ActValue::Continuous(v) => Token::Cont(cyclic_pad(v, c)),
            })
        };
        let mut tokens = Vec::with_capacity(n_tokens);
        for step in &ctx.neighbors {
            tokens.push(state_token(&step.state, step.prev_reward)?);
            tokens.push(action_token(&step.action)?);
        }
        tokens.push(state_token(&ctx.query_state, ctx.query_prev_reward)?);
        tokens.push(match &ctx.query_action {
            Some(a) => action_token(a)?,
            None => Token::Blank,
        });
        Ok(Encoded { tokens, act_kind: spec.act_kind, act_dims: spec.act_dims as usize })
    }

    /// Token embeddings plus positions, `T x hidden` row-major.
    pub fn embed(&self, enc: &Encoded) -> Vec<f64> {
        let h = self.config.hidden;
        let c = self.config.max_cont_input;
        let l = &self.layout;
        let mut x = vec![0.0; enc.len() * h];
        for (t, tok) in enc.tokens.iter().enumerate() {
            let row = &mut x[t * h..(t + 1) * h];
            match tok {
                Token::Cont(v) => {
                    let e = linear(v, self.p(l.cont_w, c * h), self.p(l.cont_b, h), 1, c, h);
                    row.copy_from_slice(&e);
                }
                Token::Discrete(a) => row.copy_from_slice(self.p(l.act_emb + *a as usize * h, h)),
                Token::Blank => {}
            }
            add_into(row, self.p(l.pos_emb + t * h, h));
        }
        x
    }

    pub fn forward(&self, enc: &Encoded) -> Result<Predictions> {
        Ok(self.forward_cached(enc)?.0)
    }

    pub fn forward_cached(&self, enc: &Encoded) -> Result<(Predictions, ForwardCache)> {
        self.check_encoded(enc)?;
        let cfg = &self.config;
        let h = cfg.hidden;
        let t = enc.len();
        let mut x = self.embed(enc);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lo in &self.layout.layers {
            let (h1, ln1) = layer_norm(&x, self.p(lo.ln1_g, h), self.p(lo.ln1_b, h), h);
            let qkv = linear(&h1, self.p(lo.w_qkv, 3 * h * h), self.p(lo.b_qkv, 3 * h), t, h, 3 * h);
            let (attn, probs) = self.attention(&qkv, t);
            let o = linear(&attn, self.p(lo.w_o, h * h), self.p(lo.b_o, h), t, h, h);
            add_into(&mut x, &o);
            let (h2, ln2) = layer_norm(&x, self.p(lo.ln2_g, h), self.p(lo.ln2_b, h), h);
            let pre = linear(&h2, self.p(lo.w_1, 4 * h * h), self.p(lo.b_1, 4 * h), t, h, 4 * h);
            let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
            let f = linear(&act, self.p(lo.w_2, 4 * h * h), self.p(lo.b_2, h), t, 4 * h, h);
            add_into(&mut x, &f);
            layers.push(LayerCache { ln1, h1, qkv, probs, attn, ln2, h2, pre, act });
        }
        let (y, lnf) = layer_norm(&x, self.p(self.layout.lnf_g, h), self.p(self.layout.lnf_b, h), h);
        let values = (0..enc.predictions())
            .map(|i| self.head(&y[2 * i * h..(2 * i + 1) * h], enc.act_kind, enc.act_dims))
            .collect();
        Ok((Predictions { act_kind: enc.act_kind, values }, ForwardCache { t, layers, lnf, y }))
    }

    fn check_encoded(&self, enc: &Encoded) -> Result<()> {
        if enc.is_empty() || !enc.len().is_multiple_of(2) || enc.len() > self.config.max_positions {
            return Err(Error::Dimension { expected: self.config.max_positions, got: enc.len() });
        }
        let width = match enc.act_kind {
            ActKind::Discrete => self.config.n_act_max,
            ActKind::Continuous => self.config.max_cont_input,
        };
        if enc.act_dims == 0 || enc.act_dims > width {
            return Err(Error::Dimension { expected: width, got: enc.act_dims });
        }
        for tok in &enc.tokens {
            match tok {
                Token::Cont(v) if v.len() != self.config.max_cont_input => {
                    return Err(Error::Dimension { expected: self.config.max_cont_input, got: v.len() })
                }
                Token::Discrete(a) if *a as usize >= self.config.n_act_max => {
                    return Err(Error::Dimension { expected: self.config.n_act_max, got: *a as usize + 1 })
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Head output for one final hidden row, sliced to `dims` outputs.
    fn head(&self, y: &[f64], kind: ActKind, dims: usize) -> Vec<f64> {
        let h = self.config.hidden;
        let (w, b, width) = match kind {
            ActKind::Discrete => (self.layout.head_d_w, self.layout.head_d_b, self.config.n_act_max),
            ActKind::Continuous => (self.layout.head_c_w, self.layout.head_c_b, self.config.max_cont_input),
        };
        (0..dims)
            .map(|j| self.params[b + j] + (0..h).map(|k| y[k] * self.params[w + k * width + j]).sum::<f64>())
            .collect()
    }

    /// Causal multi-head attention. Returns the concatenated head outputs
    /// (`T x hidden`) and the attention probabilities (`heads x T x T`).
    #[allow(clippy::needless_range_loop)]
    fn attention(&self, qkv: &[f64], t: usize) -> (Vec<f64>, Vec<f64>) {
        let h = self.config.hidden;
        let nh = self.config.n_heads;
        let dh = h / nh;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; t * h];
        let mut probs = vec![0.0; nh * t * t];
        for head in 0..nh {
            let q = |i: usize| &qkv[i * 3 * h + head * dh..i * 3 * h + (head + 1) * dh];
            let k = |i: usize| &qkv[i * 3 * h + h + head * dh..i * 3 * h + h + (head + 1) * dh];
            let v = |i: usize| &qkv[i * 3 * h + 2 * h + head * dh..i * 3 * h + 2 * h + (head + 1) * dh];
            for i in 0..t {
                let p = &mut probs[(head * t + i) * t..(head * t + i + 1) * t];
                let qi = q(i);
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    let s = qi.iter().zip(k(j)).map(|(a, b)| a * b).sum::<f64>() * scale;
                    p[j] = s;
                    max = max.max(s);
                }
                let mut sum = 0.0;
                for pj in p.iter_mut().take(i + 1) {
                    *pj = (*pj - max).exp();
                    sum += *pj;
                }
                let o = &mut out[i * h + head * dh..i * h + (head + 1) * dh];
                for j in 0..=i {
                    p[j] /= sum;
                    for (ov, vv) in o.iter_mut().zip(v(j)) {
                        *ov += p[j] * vv;
                    }
                }
            }
        }
        (out, probs)
    }

    fn attention_backward(&self, qkv: &[f64], probs: &[f64], dout: &[f64], t: usize) -> Vec<f64> {
        let h = self.config.hidden;
        let nh = self.config.n_heads;
        let dh = h / nh;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dqkv = vec![0.0; t * 3 * h];
        let qo = |i: usize, head: usize| i * 3 * h + head * dh;
        let ko = |i: usize, head: usize| i * 3 * h + h + head * dh;
        let vo = |i: usize, head: usize| i * 3 * h + 2 * h + head * dh;
        let mut dp = vec![0.0; t];
        for head in 0..nh {
            for i in 0..t {
                let p = &probs[(head * t + i) * t..(head * t + i + 1) * t];
                let d_o = &dout[i * h + head * dh..i * h + (head + 1) * dh];
                let mut dot = 0.0;
                for j in 0..=i {
                    // dV_j += p_ij dO_i ; dP_ij = dO_i . V_j
                    let mut s = 0.0;
                    for c in 0..dh {
                        dqkv[vo(j, head) + c] += p[j] * d_o[c];
                        s += d_o[c] * qkv[vo(j, head) + c];
                    }
                    dp[j] = s;
                    dot += s * p[j];
                }
                for j in 0..=i {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dqkv[qo(i, head) + c] += ds * qkv[ko(j, head) + c];
                        dqkv[ko(j, head) + c] += ds * qkv[qo(i, head) + c];
                    }
                }
            }
        }
        dqkv
    }

    /// Gradient of a scalar loss with respect to all parameters, given the
    /// loss gradient with respect to each prediction.
    pub fn backward(&self, enc: &Encoded, cache: &ForwardCache, dpred: &[Vec<f64>]) -> Result<Vec<f64>> {
        if dpred.len() != enc.predictions() {
            return Err(Error::Dimension { expected: enc.predictions(), got: dpred.len() });
        }
        let cfg = &self.config;
        let h = cfg.hidden;
        let t = cache.t;
        let lay = &self.layout;
        let mut grad = vec![0.0; self.params.len()];

        // heads
        let mut dy = vec![0.0; t * h];
        let (w, b, width) = match enc.act_kind {
            ActKind::Discrete => (lay.head_d_w, lay.head_d_b, cfg.n_act_max),
            ActKind::Continuous => (lay.head_c_w, lay.head_c_b, cfg.max_cont_input),
        };
        for (i, d) in dpred.iter().enumerate() {
            if d.len() != enc.act_dims {
                return Err(Error::Dimension { expected: enc.act_dims, got: d.len() });
            }
            let row = 2 * i;
            let y = &cache.y[row * h..(row + 1) * h];
            for (j, &g) in d.iter().enumerate() {
                grad[b + j] += g;
                for k in 0..h {
                    grad[w + k * width + j] += y[k] * g;
                    dy[row * h + k] += self.params[w + k * width + j] * g;
                }
            }
        }

        let (g_gf, g_bf) = split_pair(&mut grad, lay.lnf_g, h, lay.lnf_b, h);
        let mut dx = layer_norm_backward(&dy, &cache.lnf, self.p(lay.lnf_g, h), h, g_gf, g_bf);

        for (lo, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            // MLP branch
            let (g_w2, g_b2) = split_pair(&mut grad, lo.w_2, 4 * h * h, lo.b_2, h);
            let dact = linear_backward(&lc.act, self.p(lo.w_2, 4 * h * h), &dx, t, 4 * h, h, g_w2, g_b2);
            let dpre: Vec<f64> = dact.iter().zip(&lc.pre).map(|(d, &p)| d * gelu_grad(p)).collect();
            let (g_w1, g_b1) = split_pair(&mut grad, lo.w_1, 4 * h * h, lo.b_1, 4 * h);
            let dh2 = linear_backward(&lc.h2, self.p(lo.w_1, 4 * h * h), &dpre, t, h, 4 * h, g_w1, g_b1);
            let (g_g2, g_bb2) = split_pair(&mut grad, lo.ln2_g, h, lo.ln2_b, h);
            let dmid = layer_norm_backward(&dh2, &lc.ln2, self.p(lo.ln2_g, h), h, g_g2, g_bb2);
            add_into(&mut dx, &dmid);

            // attention branch
            let (g_wo, g_bo) = split_pair(&mut grad, lo.w_o, h * h, lo.b_o, h);
            let dattn = linear_backward(&lc.attn, self.p(lo.w_o, h * h), &dx, t, h, h, g_wo, g_bo);
            let dqkv = self.attention_backward(&lc.qkv, &lc.probs, &dattn, t);
            let (g_wqkv, g_bqkv) = split_pair(&mut grad, lo.w_qkv, 3 * h * h, lo.b_qkv, 3 * h);
            let dh1 =
                linear_backward(&lc.h1, self.p(lo.w_qkv, 3 * h * h), &dqkv, t, h, 3 * h, g_wqkv, g_bqkv);
            let (g_g1, g_bb1) = split_pair(&mut grad, lo.ln1_g, h, lo.ln1_b, h);
            let din = layer_norm_backward(&dh1, &lc.ln1, self.p(lo.ln1_g, h), h, g_g1, g_bb1);
            add_into(&mut dx, &din);
        }

        // embeddings
        let c = cfg.max_cont_input;
        for (ti, tok) in enc.tokens.iter().enumerate() {
            let d = &dx[ti * h..(ti + 1) * h];
            add_into(&mut grad[lay.pos_emb + ti * h..lay.pos_emb + (ti + 1) * h], d);
            match tok {
                Token::Cont(v) => {
                    add_into(&mut grad[lay.cont_b..lay.cont_b + h], d);
                    for (k, &xv) in v.iter().enumerate().take(c) {
                        if xv == 0.0 {
                            continue;
                        }
                        let at = lay.cont_w + k * h;
                        for (g, &dv) in grad[at..at + h].iter_mut().zip(d) {
                            *g += xv * dv;
                        }
                    }
                }
                Token::Discrete(a) => {
                    let at = lay.act_emb + *a as usize * h;
                    add_into(&mut grad[at..at + h], d);
                }
                Token::Blank => {}
            }
        }
        Ok(grad)
    }
}

/// Two disjoint mutable windows `[a, a+la)` and `[b, b+lb)` with `a + la <= b`.
fn split_pair(v: &mut [f64], a: usize, la: usize, b: usize, lb: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + la <= b);
    let (left, right) = v.split_at_mut(b);
    (&mut left[a..a + la], &mut right[..lb])
}
