//! Random programs from the straight-line grammar and random input worlds.
//!
//! ```text
//! Prog   p := def run(): s
//! Stmt   s := s1; s2 | a
//! Action a := move() | turnRight() | turnLeft() | pickMarker() | putMarker()
//! ```
//!
//! Each production's right-hand side is chosen uniformly. The start symbol and
//! the first statement occupy parse-tree depths 1 and 2, and a statement at
//! `max_depth` is forced to the action alternative, so a program has at most
//! `2^(max_depth - 2)` actions.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::program::Program;
use crate::world::{Cell, Direction, Op, WorldState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrammarConfig {
    pub max_depth: usize,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig { max_depth: 5 }
    }
}

impl GrammarConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_depth < 2 {
            return Err(ConfigError::MaxDepth(self.max_depth));
        }
        Ok(())
    }

    /// Longest program the grammar can produce at this depth.
    pub fn max_len(&self) -> usize {
        1usize << (self.max_depth - 2)
    }
}

const START_STMT_DEPTH: usize = 2;

pub fn sample_program<R: Rng + ?Sized>(cfg: &GrammarConfig, rng: &mut R) -> Program {
    let mut ops = Vec::new();
    sample_stmt(START_STMT_DEPTH, cfg.max_depth, rng, &mut ops);
    Program::new(ops)
}

fn sample_stmt<R: Rng + ?Sized>(depth: usize, max_depth: usize, rng: &mut R, out: &mut Vec<Op>) {
    let seq = depth < max_depth && rng.random_bool(0.5);
    if seq {
        sample_stmt(depth + 1, max_depth, rng, out);
        sample_stmt(depth + 1, max_depth, rng, out);
    } else {
        out.push(Op::ALL[rng.random_range(0..Op::ALL.len())]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSamplerConfig {
    pub rows: usize,
    pub cols: usize,
    /// Probability that a cell is an obstacle.
    pub obstacle_prob: f64,
    /// Probability that a free cell holds markers.
    pub marker_prob: f64,
    /// Relative weights of marker counts 1..=10 on a marked cell.
    pub marker_count_weights: Vec<f64>,
}

impl Default for InputSamplerConfig {
    fn default() -> Self {
        InputSamplerConfig {
            rows: 8,
            cols: 8,
            obstacle_prob: 0.1,
            marker_prob: 0.1,
            marker_count_weights: vec![1.0; 10],
        }
    }
}

impl InputSamplerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(ConfigError::GridSize);
        }
        for (name, value) in [("obstacle_prob", self.obstacle_prob), ("marker_prob", self.marker_prob)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::Probability { name, value });
            }
        }
        let w = &self.marker_count_weights;
        if w.len() != 10 || w.iter().any(|&x| x < 0.0 || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
            return Err(ConfigError::MarkerWeights);
        }
        Ok(())
    }
}

/// Samples a random input world.
///
/// The robot is uniform over free cells and faces a uniform direction. Its
/// starting cell is cleared of markers, so the world is recoverable from its
/// observation. Grids without a free cell are redrawn.
pub fn sample_input<R: Rng + ?Sized>(cfg: &InputSamplerConfig, rng: &mut R) -> WorldState {
    let counts = WeightedIndex::new(&cfg.marker_count_weights).expect("validated marker weights");
    loop {
        let cells: Vec<Cell> = (0..cfg.rows * cfg.cols)
            .map(|_| {
                if rng.random_bool(cfg.obstacle_prob) {
                    Cell::Obstacle
                } else if rng.random_bool(cfg.marker_prob) {
                    Cell::Free {
                        markers: counts.sample(rng) as u8 + 1,
                    }
                } else {
                    Cell::EMPTY
                }
            })
            .collect();
        let free: Vec<usize> = (0..cells.len()).filter(|&i| !cells[i].is_obstacle()).collect();
        if free.is_empty() {
            continue;
        }
        let at = free[rng.random_range(0..free.len())];
        let facing = Direction::ALL[rng.random_range(0..4)];
        let mut cells = cells;
        cells[at] = Cell::EMPTY;
        return WorldState::new(cfg.rows, cfg.cols, cells, (at / cfg.cols, at % cfg.cols), facing)
            .expect("sampler builds valid worlds");
    }
}
