//! What a specification shows of a world: one token per grid cell, with the
//! robot's cell rendered as its facing direction.

use serde::{Deserialize, Serialize};

use crate::error::WorldError;
use crate::program::{run, Program};
use crate::world::{Cell, Direction, WorldState};

/// Observation token for one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridToken {
    Empty,
    Obstacle,
    /// `1..=10` markers.
    Markers(u8),
    Robot(Direction),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    rows: usize,
    cols: usize,
    tokens: Vec<GridToken>,
}

impl Observation {
    /// Wraps row-major tokens; exactly one robot token is required.
    pub fn new(rows: usize, cols: usize, tokens: Vec<GridToken>) -> Result<Observation, WorldError> {
        if rows == 0 || cols == 0 {
            return Err(WorldError::EmptyGrid);
        }
        if tokens.len() != rows * cols {
            return Err(WorldError::CellCount {
                expected: rows * cols,
                got: tokens.len(),
            });
        }
        let robots = tokens.iter().filter(|t| matches!(t, GridToken::Robot(_))).count();
        if robots != 1 {
            return Err(WorldError::RobotCount(robots));
        }
        for t in &tokens {
            if let GridToken::Markers(k) = *t {
                if k == 0 || k > crate::world::MAX_MARKERS {
                    return Err(WorldError::TooManyMarkers(k));
                }
            }
        }
        Ok(Observation { rows, cols, tokens })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn tokens(&self) -> &[GridToken] {
        &self.tokens
    }

    /// Reconstructs a world, assuming no markers beneath the robot.
    pub fn to_world(&self) -> Result<WorldState, WorldError> {
        let mut robot = None;
        let cells = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| match *t {
                GridToken::Empty => Cell::EMPTY,
                GridToken::Obstacle => Cell::Obstacle,
                GridToken::Markers(k) => Cell::Free { markers: k },
                GridToken::Robot(d) => {
                    robot = Some((i / self.cols, i % self.cols, d));
                    Cell::EMPTY
                }
            })
            .collect();
        let (r, c, d) = robot.ok_or(WorldError::RobotCount(0))?;
        WorldState::new(self.rows, self.cols, cells, (r, c), d)
    }
}

pub fn observe(state: &WorldState) -> Observation {
    let (rr, rc) = state.robot();
    let tokens = state
        .cells()
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            if (i / state.cols(), i % state.cols()) == (rr, rc) {
                GridToken::Robot(state.facing())
            } else {
                match *cell {
                    Cell::Obstacle => GridToken::Obstacle,
                    Cell::Free { markers: 0 } => GridToken::Empty,
                    Cell::Free { markers } => GridToken::Markers(markers),
                }
            }
        })
        .collect();
    Observation {
        rows: state.rows(),
        cols: state.cols(),
        tokens,
    }
}

/// One specified input-output pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IoPair {
    pub input: Observation,
    pub output: Observation,
}

/// True iff `program` maps every specified input to its output.
///
/// Comparison happens on observations, so markers hidden under the robot never
/// affect correctness.
pub fn check_correct(program: &Program, spec: &[IoPair]) -> bool {
    spec.iter().all(|pair| match pair.input.to_world() {
        Ok(world) => observe(&run(program, &world)) == pair.output,
        Err(_) => false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Op;

    #[test]
    fn robot_hides_markers() {
        let s = WorldState::empty(3, 3, (1, 1), Direction::East)
            .unwrap()
            .with_cell(1, 1, Cell::with_markers(7).unwrap())
            .unwrap();
        let obs = observe(&s);
        assert_eq!(obs.tokens()[4], GridToken::Robot(Direction::East));
        assert!(obs.tokens().iter().all(|t| !matches!(t, GridToken::Markers(_))));
    }

    #[test]
    fn decode_inverts_observe_without_hidden_markers() {
        let s = WorldState::empty(3, 4, (2, 0), Direction::West)
            .unwrap()
            .with_cell(0, 3, Cell::Obstacle)
            .unwrap()
            .with_cell(1, 2, Cell::with_markers(4).unwrap())
            .unwrap();
        assert_eq!(observe(&s).to_world().unwrap(), s);
    }

    #[test]
    fn observation_validation() {
        assert!(Observation::new(1, 2, vec![GridToken::Empty, GridToken::Empty]).is_err());
        assert!(Observation::new(1, 1, vec![GridToken::Robot(Direction::North)]).is_ok());
        assert!(Observation::new(1, 2, vec![GridToken::Robot(Direction::North), GridToken::Markers(0)]).is_err());
    }

    #[test]
    fn move_is_wrong_where_turn_left_was_meant() {
        let input = WorldState::empty(5, 5, (2, 2), Direction::North).unwrap();
        let output = run(&Program::new(vec![Op::TurnLeft]), &input);
        let spec = vec![IoPair {
            input: observe(&input),
            output: observe(&output),
        }];
        assert!(check_correct(&Program::new(vec![Op::TurnLeft]), &spec));
        assert!(!check_correct(&Program::new(vec![Op::Move]), &spec));
        // Three right turns are behaviorally a left turn.
        assert!(check_correct(&Program::new(vec![Op::TurnRight; 3]), &spec));
    }

    #[test]
    fn hidden_marker_change_does_not_break_correctness() {
        // putMarker leaves the observation unchanged because the robot covers its cell.
        let input = WorldState::empty(2, 2, (0, 0), Direction::South).unwrap();
        let spec = vec![IoPair {
            input: observe(&input),
            output: observe(&run(&Program::new(vec![Op::PutMarker]), &input)),
        }];
        assert!(check_correct(&Program::default(), &spec));
        assert!(check_correct(&Program::new(vec![Op::PickMarker]), &spec));
    }
}
