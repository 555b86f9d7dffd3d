use std::collections::VecDeque;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::derive_seed;
use crate::error::{Error, Result};

/// Unit moves; action indices map onto these through a permutation.
pub const MOVES: [(i32, i32); 5] = [(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)];
pub const MOVE_NAMES: [&str; 5] = ["up", "down", "left", "right", "stay"];

pub(crate) const CH_AGENT: usize = 0;
pub(crate) const CH_WALL: usize = 1;
pub(crate) const CH_GOAL: usize = 2;

/// A fixed maze layout. The agent position is episode state, held outside.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLevel {
    pub size: usize,
    pub walls: Vec<bool>,
    pub goal: (usize, usize),
    /// `action_map[a]` is the index into [`MOVES`] executed by action `a`.
    pub action_map: Vec<usize>,
    /// Shortest-path distance to the goal per cell; `None` for walls.
    pub dist: Vec<Option<u32>>,
}

impl GridLevel {
    pub fn generate(
        level_seed: u64,
        size: usize,
        wall_density: f64,
        action_map: Vec<usize>,
        horizon: u32,
    ) -> Result<Self> {
        if size < 2 {
            return Err(Error::Parameter("grid size must be at least 2".into()));
        }
        if !(0.0..0.9).contains(&wall_density) {
            return Err(Error::Parameter(format!("wall density {wall_density} outside [0, 0.9)")));
        }
        for attempt in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(level_seed, 0x6772_6964 + attempt));
            let walls: Vec<bool> = (0..size * size).map(|_| rng.gen_bool(wall_density)).collect();
            let free: Vec<usize> = (0..size * size).filter(|&i| !walls[i]).collect();
            if free.len() < 3 {
                continue;
            }
            let g = free[rng.gen_range(0..free.len())];
            let goal = (g / size, g % size);
            let dist = bfs(size, &walls, goal);
            // every free cell must reach the goal in time
            let ok = free.iter().all(|&i| dist[i].is_some_and(|d| d <= horizon));
            if ok {
                return Ok(GridLevel { size, walls, goal, action_map, dist });
            }
        }
        Err(Error::Parameter(format!("no solvable layout found for level {level_seed}")))
    }

    pub fn idx(&self, (r, c): (usize, usize)) -> usize {
        r * self.size + c
    }

    pub fn is_free(&self, cell: (usize, usize)) -> bool {
        !self.walls[self.idx(cell)]
    }

    /// Free cells other than the goal, row-major.
    pub fn start_cells(&self) -> Vec<(usize, usize)> {
        (0..self.size * self.size)
            .filter(|&i| !self.walls[i])
            .map(|i| (i / self.size, i % self.size))
            .filter(|&c| c != self.goal)
            .collect()
    }

    pub fn sample_start(&self, rng: &mut dyn RngCore) -> (usize, usize) {
        let cells = self.start_cells();
        cells[rng.gen_range(0..cells.len())]
    }

    pub fn apply(&self, cell: (usize, usize), action: u32) -> (usize, usize) {
        let (dr, dc) = MOVES[self.action_map[action as usize]];
        let r = cell.0 as i32 + dr;
        let c = cell.1 as i32 + dc;
        let n = self.size as i32;
        if r < 0 || c < 0 || r >= n || c >= n {
            return cell;
        }
        let next = (r as usize, c as usize);
        if self.is_free(next) {
            next
        } else {
            cell
        }
    }

    /// Lowest-index action that moves one step closer to the goal.
    pub fn expert_action(&self, cell: (usize, usize)) -> Result<u32> {
        let here =
            self.dist[self.idx(cell)].ok_or_else(|| Error::Contract(format!("cell {cell:?} is a wall")))?;
        if here == 0 {
            let stay = self.action_map.iter().position(|&m| m == 4).unwrap_or(0);
            return Ok(stay as u32);
        }
        (0..self.action_map.len() as u32)
            .find(|&a| self.dist[self.idx(self.apply(cell, a))] == Some(here - 1))
            .ok_or_else(|| Error::Contract(format!("goal unreachable from {cell:?}")))
    }

    /// One-hot `size × size × 3` image: agent, walls, goal.
    pub fn render(&self, agent: (usize, usize)) -> Vec<f64> {
        let n = self.size;
        let mut img = vec![0.0; n * n * 3];
        for i in 0..n * n {
            if self.walls[i] {
                img[i * 3 + CH_WALL] = 1.0;
            }
        }
        img[self.idx(self.goal) * 3 + CH_GOAL] = 1.0;
        img[self.idx(agent) * 3 + CH_AGENT] = 1.0;
        img
    }

    pub fn ascii(&self, agent: (usize, usize)) -> String {
        let mut s = String::new();
        for r in 0..self.size {
            for c in 0..self.size {
                s.push(if (r, c) == agent {
                    'A'
                } else if (r, c) == self.goal {
                    'G'
                } else if self.walls[self.idx((r, c))] {
                    '#'
                } else {
                    '.'
                });
            }
            s.push('\n');
        }
        s
    }
}

fn bfs(size: usize, walls: &[bool], goal: (usize, usize)) -> Vec<Option<u32>> {
    let mut dist = vec![None; size * size];
    let mut queue = VecDeque::new();
    dist[goal.0 * size + goal.1] = Some(0);
    queue.push_back(goal);
    while let Some((r, c)) = queue.pop_front() {
        let d = dist[r * size + c].expect("queued cells have distances");
        for &(dr, dc) in &MOVES[..4] {
            let nr = r as i32 + dr;
            let nc = c as i32 + dc;
            if nr < 0 || nc < 0 || nr >= size as i32 || nc >= size as i32 {
                continue;
            }
            let i = nr as usize * size + nc as usize;
            if !walls[i] && dist[i].is_none() {
                dist[i] = Some(d + 1);
                queue.push_back((nr as usize, nc as usize));
            }
        }
    }
    dist
}
