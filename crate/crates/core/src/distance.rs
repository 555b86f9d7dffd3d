//! State distances and their per-environment normalization into `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::types::{DemoSet, EnvSpec, ObsKind};

/// How SSIM windows are placed over the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    /// Only windows lying fully inside the image.
    Valid,
    /// Every window overlapping the image, zero-padded outside it. Each pixel
    /// is covered by exactly `window²` windows.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: u32,
    pub c1: f64,
    pub c2: f64,
    pub mode: WindowMode,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 7, c1: 0.01 * 0.01, c2: 0.03 * 0.03, mode: WindowMode::Valid }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "SSIM window must be a positive odd integer, got {}",
                self.window
            )));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::Parameter("SSIM stabilizers must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Metric {
    L2,
    Ssim(SsimParams),
}

impl Metric {
    /// Binds the metric to an environment's observation shape.
    pub fn bind(&self, spec: &EnvSpec) -> Result<BoundMetric> {
        match self {
            Metric::L2 => Ok(BoundMetric { metric: *self, len: spec.obs_len(), ssim: None }),
            Metric::Ssim(params) => {
                if spec.obs_kind != ObsKind::Image {
                    return Err(Error::Parameter(format!(
                        "SSIM needs image observations, `{}` has vectors",
                        spec.env_id
                    )));
                }
                let (h, w, c) = spec.image_shape().expect("image spec has three dims");
                Ok(BoundMetric {
                    metric: *self,
                    len: spec.obs_len(),
                    ssim: Some(SsimLayout::new(h, w, c, *params)?),
                })
            }
        }
    }
}

/// Euclidean distance between two equal-length vectors.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), got: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// `1 - mean SSIM` between two `height × width × channels` images, using
/// uniform windows. SSIM is evaluated per channel and averaged.
pub fn ssim_distance(a: &[f64], b: &[f64], shape: (usize, usize, usize), params: SsimParams) -> Result<f64> {
    let layout = SsimLayout::new(shape.0, shape.1, shape.2, params)?;
    let len = layout.pixels * layout.channels;
    for img in [a, b] {
        if img.len() != len {
            return Err(Error::Dimension { expected: len, got: img.len() });
        }
    }
    let pa = layout.prepare(a);
    let pb = layout.prepare(b);
    Ok(layout.distance(a, &pa, b, &pb))
}

/// Window geometry for one image shape.
#[derive(Debug, Clone)]
struct SsimLayout {
    height: usize,
    width: usize,
    channels: usize,
    pixels: usize,
    params: SsimParams,
    /// Clipped rectangles `(y0, y1, x0, x1)`, half-open, one per window.
    rects: Vec<(usize, usize, usize, usize)>,
    inv_area: f64,
}

impl SsimLayout {
    fn new(height: usize, width: usize, channels: usize, params: SsimParams) -> Result<Self> {
        params.validate()?;
        let w = params.window as usize;
        let starts = |extent: usize| -> Result<Vec<(usize, usize)>> {
            let range: Vec<isize> = match params.mode {
                WindowMode::Valid => {
                    if w > extent {
                        return Err(Error::Parameter(format!(
                            "SSIM window {w} exceeds image extent {extent}"
                        )));
                    }
                    (0..=(extent - w) as isize).collect()
                }
                WindowMode::Full => (-(w as isize - 1)..extent as isize).collect(),
            };
            Ok(range
                .into_iter()
                .map(|s| {
                    let lo = s.max(0) as usize;
                    let hi = ((s + w as isize).min(extent as isize)) as usize;
                    (lo, hi)
                })
                .collect())
        };
        let ys = starts(height)?;
        let xs = starts(width)?;
        let rects =
            ys.iter().flat_map(|&(y0, y1)| xs.iter().map(move |&(x0, x1)| (y0, y1, x0, x1))).collect();
        Ok(SsimLayout {
            height,
            width,
            channels,
            pixels: height * width,
            params,
            rects,
            inv_area: 1.0 / (w * w) as f64,
        })
    }

    /// Window sums of `f(pixel)` for every channel, laid out `[channel][window]`.
    fn window_sums(&self, img: &[f64], f: impl Fn(usize) -> f64) -> Vec<f64> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let stride = w + 1;
        let mut integral = vec![0.0; (h + 1) * stride];
        let mut out = Vec::with_capacity(c * self.rects.len());
        for ch in 0..c {
            for y in 0..h {
                let mut row = 0.0;
                for x in 0..w {
                    row += f((y * w + x) * c + ch);
                    integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
                }
            }
            out.extend(self.rects.iter().map(|&(y0, y1, x0, x1)| {
                integral[y1 * stride + x1] - integral[y0 * stride + x1] - integral[y1 * stride + x0]
                    + integral[y0 * stride + x0]
            }));
        }
        debug_assert!(img.len() == h * w * c);
        out
    }

    fn prepare(&self, img: &[f64]) -> SsimStats {
        SsimStats {
            sums: self.window_sums(img, |i| img[i]),
            sq_sums: self.window_sums(img, |i| img[i] * img[i]),
        }
    }

    fn distance(&self, a: &[f64], sa: &SsimStats, b: &[f64], sb: &SsimStats) -> f64 {
        let cross = self.window_sums(a, |i| a[i] * b[i]);
        let SsimParams { c1, c2, .. } = self.params;
        let inv = self.inv_area;
        let mut total = 0.0;
        #[allow(clippy::needless_range_loop)]
        for k in 0..cross.len() {
            let mu_a = sa.sums[k] * inv;
            let mu_b = sb.sums[k] * inv;
            let var_a = sa.sq_sums[k] * inv - mu_a * mu_a;
            let var_b = sb.sq_sums[k] * inv - mu_b * mu_b;
            let cov = cross[k] * inv - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
        }
        1.0 - total / cross.len() as f64
    }
}

#[derive(Debug, Clone)]
struct SsimStats {
    sums: Vec<f64>,
    sq_sums: Vec<f64>,
}

/// An observation with any per-state precomputation its metric needs.
#[derive(Debug, Clone)]
pub struct PreparedState {
    data: Vec<f64>,
    ssim: Option<SsimStats>,
}

impl PreparedState {
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// A metric bound to one observation shape.
#[derive(Debug, Clone)]
pub struct BoundMetric {
    metric: Metric,
    len: usize,
    ssim: Option<SsimLayout>,
}

impl BoundMetric {
    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn prepare(&self, obs: &[f64]) -> Result<PreparedState> {
        if obs.len() != self.len {
            return Err(Error::Dimension { expected: self.len, got: obs.len() });
        }
        Ok(PreparedState { data: obs.to_vec(), ssim: self.ssim.as_ref().map(|l| l.prepare(obs)) })
    }

    pub fn distance(&self, a: &PreparedState, b: &PreparedState) -> f64 {
        match &self.ssim {
            None => a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Some(layout) => layout.distance(
                &a.data,
                a.ssim.as_ref().expect("prepared with SSIM stats"),
                &b.data,
                b.ssim.as_ref().expect("prepared with SSIM stats"),
            ),
        }
    }

    pub fn raw_distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(self.distance(&self.prepare(a)?, &self.prepare(b)?))
    }
}

/// Maps raw distances of one environment into `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub env_id: String,
    pub metric: Metric,
    /// 95th-percentile calibration distance.
    pub scale: f64,
}

impl Normalizer {
    pub fn new(env_id: impl Into<String>, metric: Metric, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Parameter(format!("normalizer scale must be positive, got {scale}")));
        }
        Ok(Normalizer { env_id: env_id.into(), metric, scale })
    }

    /// `min(raw / scale, 1)`.
    pub fn normalize(&self, raw: f64) -> Result<f64> {
        if raw.is_nan() || raw < 0.0 {
            return Err(Error::Domain(format!("distance must be non-negative, got {raw}")));
        }
        Ok((raw / self.scale).min(1.0))
    }
}

/// Nearest-rank percentile of an ascending-sorted, non-empty slice.
pub fn nearest_rank(sorted: &[f64], percent: usize) -> f64 {
    let m = sorted.len();
    let rank = (percent * m).div_ceil(100).max(1);
    sorted[rank - 1]
}

/// Calibrates a normalizer: the 95th percentile (nearest rank) over all
/// states of the distance to their closest legal retrieval state.
pub fn calibrate(demoset: &DemoSet, metric: Metric) -> Result<Normalizer> {
    calibrate_with(demoset, metric, Execution::default())
}

pub fn calibrate_with(demoset: &DemoSet, metric: Metric, exec: Execution) -> Result<Normalizer> {
    let dists = calibration_distances(demoset, metric, exec)?;
    let scale = scale_from_distances(dists)?;
    Normalizer::new(demoset.spec.env_id.clone(), metric, scale)
}

/// Like [`calibrate`], but when the retrieval set is a single demonstration
/// (no cross-demo pairs exist) falls back to each state's closest other step
/// within that demonstration.
pub fn calibrate_for_deployment(demoset: &DemoSet, metric: Metric) -> Result<Normalizer> {
    match calibrate(demoset, metric) {
        Err(Error::Calibration(_)) if !demoset.retrieval_ids.is_empty() => {
            let bound = metric.bind(&demoset.spec)?;
            let mut prepared = Vec::new();
            for demo in demoset.demos.iter().filter(|d| demoset.is_retrieval(d.demo_id)) {
                for step in &demo.steps {
                    prepared.push(bound.prepare(&step.state.0)?);
                }
            }
            let dists = (0..prepared.len())
                .filter_map(|i| {
                    (0..prepared.len())
                        .filter(|&j| j != i)
                        .map(|j| bound.distance(&prepared[i], &prepared[j]))
                        .min_by(f64::total_cmp)
                })
                .collect::<Vec<_>>();
            let scale = if dists.is_empty() { 1.0 } else { scale_from_distances(dists)? };
            Normalizer::new(demoset.spec.env_id.clone(), metric, scale)
        }
        other => other,
    }
}

/// Scale rule: nearest-rank 95th percentile; if zero, the smallest positive
/// distance; if none exists, 1.
pub fn scale_from_distances(mut dists: Vec<f64>) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::Calibration("no legal query/neighbor pairs".into()));
    }
    dists.sort_by(f64::total_cmp);
    let p95 = nearest_rank(&dists, 95);
    if p95 > 0.0 {
        return Ok(p95);
    }
    Ok(dists.iter().copied().find(|&d| d > 0.0).unwrap_or(1.0))
}

/// Closest-legal-neighbor distance for every state that has one, in
/// demonstration order.
pub fn calibration_distances(demoset: &DemoSet, metric: Metric, exec: Execution) -> Result<Vec<f64>> {
    if demoset.retrieval_ids.is_empty() {
        return Err(Error::Calibration("retrieval set is empty".into()));
    }
    let bound = metric.bind(&demoset.spec)?;
    let mut retrieval: Vec<(u32, PreparedState)> = Vec::new();
    let mut queries: Vec<(u32, PreparedState)> = Vec::new();
    for demo in &demoset.demos {
        for step in &demo.steps {
            let p = bound.prepare(&step.state.0)?;
            if demoset.is_retrieval(demo.demo_id) {
                retrieval.push((demo.demo_id, p.clone()));
            }
            queries.push((demo.demo_id, p));
        }
    }
    let nearest = exec.map_slice(&queries, |(qid, q)| {
        retrieval
            .iter()
            .filter(|(rid, _)| rid != qid)
            .map(|(_, r)| bound.distance(q, r))
            .min_by(f64::total_cmp)
    });
    Ok(nearest.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ActKind, ActValue, Demonstration, ObsValue, Step};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Per-window SSIM with explicit zero padding, no integral images.
    fn ssim_oracle(a: &[f64], b: &[f64], (h, w, c): (usize, usize, usize), p: SsimParams) -> f64 {
        let win = p.window as isize;
        let (lo_y, hi_y, lo_x, hi_x) = match p.mode {
            WindowMode::Valid => (0, h as isize - win, 0, w as isize - win),
            WindowMode::Full => (1 - win, h as isize - 1, 1 - win, w as isize - 1),
        };
        let px = |img: &[f64], y: isize, x: isize, ch: usize| {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                img[(y as usize * w + x as usize) * c + ch]
            }
        };
        let n = (win * win) as f64;
        let mut total = 0.0;
        let mut count = 0;
        for ch in 0..c {
            for y0 in lo_y..=hi_y {
                for x0 in lo_x..=hi_x {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for y in y0..y0 + win {
                        for x in x0..x0 + win {
                            ma += px(a, y, x, ch);
                            mb += px(b, y, x, ch);
                        }
                    }
                    ma /= n;
                    mb /= n;
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for y in y0..y0 + win {
                        for x in x0..x0 + win {
                            let da = px(a, y, x, ch) - ma;
                            let db = px(b, y, x, ch) - mb;
                            va += da * da;
                            vb += db * db;
                            cov += da * db;
                        }
                    }
                    va /= n;
                    vb /= n;
                    cov /= n;
                    total += ((2.0 * ma * mb + p.c1) * (2.0 * cov + p.c2))
                        / ((ma * ma + mb * mb + p.c1) * (va + vb + p.c2));
                    count += 1;
                }
            }
        }
        1.0 - total / count as f64
    }

    #[test]
    fn single_demo_falls_back_to_within_demo_distances() {
        let spec = EnvSpec {
            env_id: "line".into(),
            obs_kind: ObsKind::Vector,
            obs_dims: vec![1],
            act_kind: ActKind::Discrete,
            act_dims: 2,
            horizon: 10,
            random_return: 0.0,
            expert_return: 1.0,
        };
        let steps = [0.0, 1.0, 3.0]
            .iter()
            .map(|&x| Step { state: ObsValue(vec![x]), prev_reward: 0.0, action: ActValue::Discrete(0) })
            .collect();
        let set = DemoSet {
            spec,
            demos: vec![Demonstration {
                demo_id: 0,
                level_seed: 0,
                steps,
                final_reward: 0.0,
                total_return: 0.0,
            }],
            retrieval_ids: vec![0],
        };
        assert!(matches!(calibrate(&set, Metric::L2), Err(Error::Calibration(_))));
        // nearest others: 1, 1, 2
        assert_eq!(calibrate_for_deployment(&set, Metric::L2).unwrap().scale, 2.0);
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        let x = [0.3, -1.2, 7.0];
        assert_eq!(l2_distance(&x, &x).unwrap(), 0.0);
        assert!(matches!(l2_distance(&[1.0], &[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn l2_matches_naive_loop_on_39_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a: Vec<f64> = (0..39).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..39).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut acc = 0.0f64;
            for i in 0..39 {
                let d = a[i] - b[i];
                acc += d * d;
            }
            let naive = acc.sqrt();
            let got = l2_distance(&a, &b).unwrap();
            assert!(((got - naive) / naive).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_identity_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img: Vec<f64> = (0..8 * 8 * 3).map(|_| rng.gen::<f64>()).collect();
        for mode in [WindowMode::Valid, WindowMode::Full] {
            let p = SsimParams { window: 3, mode, ..Default::default() };
            assert_eq!(ssim_distance(&img, &img, (8, 8, 3), p).unwrap(), 0.0);
        }
        assert_eq!(ssim_distance(&img, &img, (8, 8, 3), SsimParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn ssim_constant_images_match_scalar_formula() {
        // Every valid window of zeros vs ones: mu=(0,1), zero variances, so
        // SSIM = c1 / (1 + c1) * (c2 / c2).
        let p = SsimParams::default();
        let zeros = vec![0.0; 64];
        let ones = vec![1.0; 64];
        let got = ssim_distance(&zeros, &ones, (8, 8, 1), p).unwrap();
        let expected = 1.0 - p.c1 / (1.0 + p.c1);
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn ssim_matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mode in [WindowMode::Valid, WindowMode::Full] {
            for window in [1, 3, 7] {
                let p = SsimParams { window, mode, ..Default::default() };
                let a: Vec<f64> = (0..16 * 16 * 2).map(|_| rng.gen::<f64>()).collect();
                let b: Vec<f64> = (0..16 * 16 * 2).map(|_| rng.gen::<f64>()).collect();
                let got = ssim_distance(&a, &b, (16, 16, 2), p).unwrap();
                let want = ssim_oracle(&a, &b, (16, 16, 2), p);
                assert!((got - want).abs() < 1e-9, "{mode:?}/{window}: {got} vs {want}");
                assert!((0.0..=2.0).contains(&got));
            }
        }
    }

    #[test]
    fn ssim_parameter_and_shape_errors() {
        let img = vec![0.5; 64];
        let even = SsimParams { window: 4, ..Default::default() };
        assert!(matches!(ssim_distance(&img, &img, (8, 8, 1), even), Err(Error::Parameter(_))));
        assert!(matches!(
            ssim_distance(&img, &img[..63], (8, 8, 1), SsimParams::default()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn full_mode_distance_is_translation_invariant_for_one_hot_agents() {
        // Every pixel sits in the same number of windows, so the distance
        // between two single-pixel images depends only on their offset.
        let p = SsimParams { window: 3, mode: WindowMode::Full, ..Default::default() };
        let dot = |y: usize, x: usize| {
            let mut v = vec![0.0; 64];
            v[y * 8 + x] = 1.0;
            v
        };
        let corner = ssim_distance(&dot(0, 0), &dot(0, 1), (8, 8, 1), p).unwrap();
        let middle = ssim_distance(&dot(4, 4), &dot(4, 5), (8, 8, 1), p).unwrap();
        let far = ssim_distance(&dot(0, 0), &dot(7, 7), (8, 8, 1), p).unwrap();
        assert!((corner - middle).abs() < 1e-12);
        assert!(corner < far);
    }

    #[test]
    fn normalize_examples() {
        let n = Normalizer::new("e", Metric::L2, 4.0).unwrap();
        assert_eq!(n.normalize(2.0).unwrap(), 0.5);
        assert_eq!(n.normalize(9.0).unwrap(), 1.0);
        assert_eq!(n.normalize(0.0).unwrap(), 0.0);
        assert!(matches!(n.normalize(-1.0), Err(Error::Domain(_))));
        assert!(Normalizer::new("e", Metric::L2, 0.0).is_err());
    }

    #[test]
    fn nearest_rank_of_one_to_twenty() {
        let d: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&d, 95), 19.0);
        assert_eq!(scale_from_distances(d.into_iter().rev().collect()).unwrap(), 19.0);
        assert_eq!(scale_from_distances(vec![0.0; 5]).unwrap(), 1.0);
        let mut mostly_zero = vec![0.0; 99];
        mostly_zero.push(0.25);
        assert_eq!(scale_from_distances(mostly_zero).unwrap(), 0.25);
    }

    fn line_set(points: &[&[f64]]) -> DemoSet {
        let demos = points
            .iter()
            .enumerate()
            .map(|(i, xs)| Demonstration {
                demo_id: i as u32,
                level_seed: 0,
                steps: xs
                    .iter()
                    .map(|&x| Step {
                        state: ObsValue(vec![x]),
                        prev_reward: 0.0,
                        action: ActValue::Discrete(0),
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
                act_dims: 2,
                horizon: 50,
                random_return: 0.0,
                expert_return: 1.0,
            },
            retrieval_ids: (0..points.len() as u32).collect(),
            demos,
        }
    }

    #[test]
    fn calibrate_degenerate_and_error_cases() {
        let same = line_set(&[&[1.0, 1.0], &[1.0]]);
        let n = calibrate(&same, Metric::L2).unwrap();
        assert_eq!(n.scale, 1.0);
        assert_eq!(n.normalize(0.0).unwrap(), 0.0);

        let single = line_set(&[&[1.0]]);
        assert!(matches!(calibrate(&single, Metric::L2), Err(Error::Calibration(_))));

        let mut empty = line_set(&[&[1.0], &[2.0]]);
        empty.retrieval_ids.clear();
        assert!(matches!(calibrate(&empty, Metric::L2), Err(Error::Calibration(_))));
    }

    #[test]
    fn calibrate_twenty_queries_picks_nineteenth() {
        // Retrieval demo at 0; held-out demo with states 1..=20 gives closest
        // distances 1..=20. The retrieval state's own query has no legal
        // neighbor (its demo is excluded), so exactly 20 distances remain.
        let far: Vec<f64> = (1..=20).map(f64::from).collect();
        let mut set = line_set(&[&[0.0], &far]);
        set.retrieval_ids = vec![0];
        let n = calibrate(&set, Metric::L2).unwrap();
        assert_eq!(n.scale, 19.0);
    }

    #[test]
    fn calibration_parallel_equals_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let demos: Vec<Vec<f64>> =
            (0..6).map(|_| (0..15).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
        let refs: Vec<&[f64]> = demos.iter().map(|d| d.as_slice()).collect();
        let set = line_set(&refs);
        let a = calibrate_with(&set, Metric::L2, Execution::Sequential).unwrap();
        let b = calibrate_with(&set, Metric::L2, Execution::Parallel).unwrap();
        assert_eq!(a.scale.to_bits(), b.scale.to_bits());
    }

    proptest! {
        #[test]
        fn l2_metric_axioms(
            a in prop::collection::vec(-10.0f64..10.0, 6),
            b in prop::collection::vec(-10.0f64..10.0, 6),
            c in prop::collection::vec(-10.0f64..10.0, 6),
        ) {
            let ab = l2_distance(&a, &b).unwrap();
            let ba = l2_distance(&b, &a).unwrap();
            let bc = l2_distance(&b, &c).unwrap();
            let ac = l2_distance(&a, &c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert_eq!(ab == 0.0, a == b);
        }

        #[test]
        fn ssim_symmetric_and_nonnegative(
            a in prop::collection::vec(0.0f64..1.0, 5 * 5),
            b in prop::collection::vec(0.0f64..1.0, 5 * 5),
        ) {
            let p = SsimParams { window: 3, ..Default::default() };
            let ab = ssim_distance(&a, &b, (5, 5, 1), p).unwrap();
            let ba = ssim_distance(&b, &a, (5, 5, 1), p).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&ab));
            if a != b { prop_assert!(ab > 0.0); }
        }

        #[test]
        fn normalize_monotone_and_bounded(scale in 0.01f64..100.0, x in 0.0f64..1000.0, dx in 0.0f64..10.0) {
            let n = Normalizer::new("p", Metric::L2, scale).unwrap();
            let lo = n.normalize(x).unwrap();
            let hi = n.normalize(x + dx).unwrap();
            prop_assert!((0.0..=1.0).contains(&lo));
            prop_assert!(lo <= hi);
        }

        #[test]
        fn at_least_95_percent_of_calibration_distances_normalize_inside(
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let demos: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..rng.gen_range(1..12)).map(|_| rng.gen_range(0.0..5.0)).collect())
                .collect();
            let refs: Vec<&[f64]> = demos.iter().map(|d| d.as_slice()).collect();
            let set = line_set(&refs);
            let n = calibrate(&set, Metric::L2).unwrap();
            let d = calibration_distances(&set, Metric::L2, Execution::Sequential).unwrap();
            let inside = d.iter().filter(|&&x| x / n.scale <= 1.0).count();
            prop_assert!(inside * 100 >= 95 * d.len());
        }
    }
}
