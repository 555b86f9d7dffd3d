use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::derive_seed;
use crate::error::{Error, Result};

pub const STEP_SIZE: f64 = 0.1;
pub const GOAL_RADIUS: f64 = 0.05;
const GAIN: f64 = 10.0;
const MARGIN: f64 = 0.05;

/// A point mass in `[-1, 1]²` steering to a goal around a disc obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLevel {
    pub goal: [f64; 2],
    pub obstacle: [f64; 2],
    pub radius: f64,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Distance from `p` to the segment `a`–`b`.
fn segment_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

impl PointLevel {
    pub fn generate(level_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(level_seed, 0x706d));
        let goal = [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)];
        let radius = rng.gen_range(0.15..0.25);
        loop {
            let obstacle = [rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6)];
            if dist(goal, obstacle) > radius + 0.15 {
                return PointLevel { goal, obstacle, radius };
            }
        }
    }

    fn valid_start(&self, p: [f64; 2]) -> bool {
        dist(p, self.goal) > 0.3 && segment_dist(self.obstacle, p, self.goal) > self.radius + MARGIN
    }

    /// Uniform start whose straight path to the goal clears the obstacle.
    pub fn sample_start(&self, rng: &mut dyn RngCore) -> Result<[f64; 2]> {
        for _ in 0..10_000 {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            if self.valid_start(p) {
                return Ok(p);
            }
        }
        Err(Error::Parameter("could not sample a start state".into()))
    }

    pub fn observe(&self, p: [f64; 2]) -> Vec<f64> {
        vec![p[0], p[1], self.goal[0] - p[0], self.goal[1] - p[1]]
    }

    pub fn goal_dist(&self, p: [f64; 2]) -> f64 {
        dist(p, self.goal)
    }

    pub fn reached(&self, p: [f64; 2]) -> bool {
        self.goal_dist(p) < GOAL_RADIUS
    }

    /// Returns the next position and its reward (decrease in goal distance).
    pub fn apply(&self, p: [f64; 2], a: &[f64]) -> ([f64; 2], f64) {
        let mut next =
            [(p[0] + STEP_SIZE * a[0]).clamp(-1.0, 1.0), (p[1] + STEP_SIZE * a[1]).clamp(-1.0, 1.0)];
        if dist(next, self.obstacle) < self.radius {
            next = p;
        }
        (next, self.goal_dist(p) - self.goal_dist(next))
    }

    /// Proportional controller toward the goal, scaled into `[-1, 1]²`.
    pub fn expert_action(&self, p: [f64; 2]) -> Vec<f64> {
        let mut a = [GAIN * (self.goal[0] - p[0]), GAIN * (self.goal[1] - p[1])];
        let m = a[0].abs().max(a[1].abs());
        if m > 1.0 {
            a = [a[0] / m, a[1] / m];
        }
        a.to_vec()
    }
}
