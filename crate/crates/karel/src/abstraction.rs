//! Facing-direction abstraction of world states.
//!
//! `alpha` forgets everything except the robot's facing direction. Turns act
//! on the abstract state as rotations and the remaining three actions act as
//! the identity, which makes `alpha` a homomorphism of the step function.

use serde::{Deserialize, Serialize};

use crate::program::{Program, Trace};
use crate::world::{Direction, Op, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AbstractState(pub Direction);

impl AbstractState {
    pub fn facing(self) -> Direction {
        self.0
    }
}

pub fn alpha(state: &WorldState) -> AbstractState {
    AbstractState(state.facing())
}

pub fn abstract_step(a: AbstractState, op: Op) -> AbstractState {
    match op {
        Op::TurnRight => AbstractState(a.0.right()),
        Op::TurnLeft => AbstractState(a.0.left()),
        Op::Move | Op::PickMarker | Op::PutMarker => a,
    }
}

/// Abstract trace: `alpha` applied to each state of a concrete trace.
pub fn abstract_trace(trace: &Trace) -> Vec<Direction> {
    trace.states().iter().map(|s| s.facing()).collect()
}

/// Abstract execution straight from the input direction, without the grid.
pub fn run_abstract(program: &Program, input: AbstractState) -> Vec<AbstractState> {
    let mut out = Vec::with_capacity(program.len() + 1);
    let mut cur = input;
    out.push(cur);
    for &op in program.ops() {
        cur = abstract_step(cur, op);
        out.push(cur);
    }
    out
}
