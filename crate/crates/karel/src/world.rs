//! Grid worlds and the five Karel actions.
//!
//! Coordinates are `(row, col)` with row 0 at the top; `North` decreases the
//! row index. The grid boundary behaves like an obstacle.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::WorldError;

/// Maximum number of markers a single cell can hold.
pub const MAX_MARKERS: u8 = 10;

/// Facing direction of the robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    /// Clockwise quarter turn.
    pub fn right(self) -> Direction {
        match self {
            Direction::North => Direction::East,
            Direction::East => Direction::South,
            Direction::South => Direction::West,
            Direction::West => Direction::North,
        }
    }

    /// Counter-clockwise quarter turn.
    pub fn left(self) -> Direction {
        match self {
            Direction::North => Direction::West,
            Direction::West => Direction::South,
            Direction::South => Direction::East,
            Direction::East => Direction::North,
        }
    }

    /// Stable class index in `0..4` (N, E, S, W), used as the probe label.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Direction> {
        Direction::ALL.get(i).copied()
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Direction::North => (-1, 0),
            Direction::East => (0, 1),
            Direction::South => (1, 0),
            Direction::West => (0, -1),
        }
    }
}

/// One of the five straight-line Karel actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Op {
    Move,
    TurnRight,
    TurnLeft,
    PickMarker,
    PutMarker,
}

impl Op {
    pub const ALL: [Op; 5] = [
        Op::Move,
        Op::TurnRight,
        Op::TurnLeft,
        Op::PickMarker,
        Op::PutMarker,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The source-level name (`move`, `turnRight`, ...).
    pub fn name(self) -> &'static str {
        match self {
            Op::Move => "move",
            Op::TurnRight => "turnRight",
            Op::TurnLeft => "turnLeft",
            Op::PickMarker => "pickMarker",
            Op::PutMarker => "putMarker",
        }
    }

    pub fn from_name(name: &str) -> Option<Op> {
        Op::ALL.into_iter().find(|op| op.name() == name)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A grid cell. Obstacles never carry markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Obstacle,
    Free { markers: u8 },
}

impl Cell {
    pub const EMPTY: Cell = Cell::Free { markers: 0 };

    pub fn with_markers(markers: u8) -> Result<Cell, WorldError> {
        if markers > MAX_MARKERS {
            return Err(WorldError::TooManyMarkers(markers));
        }
        Ok(Cell::Free { markers })
    }

    pub fn is_obstacle(self) -> bool {
        matches!(self, Cell::Obstacle)
    }

    pub fn markers(self) -> u8 {
        match self {
            Cell::Obstacle => 0,
            Cell::Free { markers } => markers,
        }
    }
}

/// Full Karel world: the grid plus the robot pose.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorldState {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
    robot: (usize, usize),
    facing: Direction,
}

impl WorldState {
    /// Builds a world from row-major cells, validating every invariant.
    pub fn new(
        rows: usize,
        cols: usize,
        cells: Vec<Cell>,
        robot: (usize, usize),
        facing: Direction,
    ) -> Result<WorldState, WorldError> {
        if rows == 0 || cols == 0 {
            return Err(WorldError::EmptyGrid);
        }
        if cells.len() != rows * cols {
            return Err(WorldError::CellCount {
                expected: rows * cols,
                got: cells.len(),
            });
        }
        if robot.0 >= rows || robot.1 >= cols {
            return Err(WorldError::RobotOutOfBounds {
                row: robot.0,
                col: robot.1,
            });
        }
        for cell in &cells {
            if cell.markers() > MAX_MARKERS {
                return Err(WorldError::TooManyMarkers(cell.markers()));
            }
        }
        if cells[robot.0 * cols + robot.1].is_obstacle() {
            return Err(WorldError::RobotOnObstacle {
                row: robot.0,
                col: robot.1,
            });
        }
        Ok(WorldState {
            rows,
            cols,
            cells,
            robot,
            facing,
        })
    }

    /// An obstacle-free, marker-free world.
    pub fn empty(rows: usize, cols: usize, robot: (usize, usize), facing: Direction) -> Result<WorldState, WorldError> {
        WorldState::new(rows, cols, vec![Cell::EMPTY; rows * cols], robot, facing)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn robot(&self) -> (usize, usize) {
        self.robot
    }

    pub fn facing(&self) -> Direction {
        self.facing
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.cols + col]
    }

    /// Returns a copy with one cell replaced. The result is re-validated.
    pub fn with_cell(&self, row: usize, col: usize, cell: Cell) -> Result<WorldState, WorldError> {
        if row >= self.rows || col >= self.cols {
            return Err(WorldError::CellOutOfBounds { row, col });
        }
        let mut cells = self.cells.clone();
        cells[row * self.cols + col] = cell;
        WorldState::new(self.rows, self.cols, cells, self.robot, self.facing)
    }

    /// The cell the robot would enter on `move`, if it is inside the grid.
    pub fn ahead(&self) -> Option<(usize, usize)> {
        let (dr, dc) = self.facing.delta();
        let r = self.robot.0.checked_add_signed(dr)?;
        let c = self.robot.1.checked_add_signed(dc)?;
        (r < self.rows && c < self.cols).then_some((r, c))
    }

    /// Applies `op` in place.
    pub fn apply(&mut self, op: Op) {
        match op {
            Op::Move => {
                if let Some((r, c)) = self.ahead() {
                    if !self.cells[r * self.cols + c].is_obstacle() {
                        self.robot = (r, c);
                    }
                }
            }
            Op::TurnRight => self.facing = self.facing.right(),
            Op::TurnLeft => self.facing = self.facing.left(),
            Op::PickMarker => {
                let idx = self.robot.0 * self.cols + self.robot.1;
                if let Cell::Free { markers } = &mut self.cells[idx] {
                    *markers = markers.saturating_sub(1);
                }
            }
            Op::PutMarker => {
                let idx = self.robot.0 * self.cols + self.robot.1;
                if let Cell::Free { markers } = &mut self.cells[idx] {
                    if *markers < MAX_MARKERS {
                        *markers += 1;
                    }
                }
            }
        }
    }

    /// Pure successor: the receiver is left untouched.
    pub fn step(&self, op: Op) -> WorldState {
        let mut next = self.clone();
        next.apply(op);
        next
    }

    /// Number of markers on the robot's cell (hidden when observed).
    pub fn markers_under_robot(&self) -> u8 {
        self.cell(self.robot.0, self.robot.1).markers()
    }
}

/// Free-function form of [`WorldState::step`].
pub fn step(state: &WorldState, op: Op) -> WorldState {
    state.step(op)
}
