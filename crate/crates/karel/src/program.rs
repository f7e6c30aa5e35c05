//! Straight-line programs and their traces.

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::world::{Op, WorldState};

/// Maximum length of a sampled reference program at the default grammar depth.
pub const MAX_REFERENCE_LEN: usize = 8;

/// A straight-line sequence of actions.
///
/// Sampled reference programs have length `1..=8`; decoded model output may be
/// empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Program(Vec<Op>);

impl Program {
    pub fn new(ops: Vec<Op>) -> Program {
        Program(ops)
    }

    pub fn ops(&self) -> &[Op] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Token-wise image of the program under an op-to-op map.
    pub fn map_ops(&self, f: impl Fn(Op) -> Op) -> Program {
        Program(self.0.iter().map(|&op| f(op)).collect())
    }

    pub fn prefix(&self, len: usize) -> Program {
        Program(self.0[..len].to_vec())
    }
}

impl From<Vec<Op>> for Program {
    fn from(ops: Vec<Op>) -> Self {
        Program(ops)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|op| op.name()).collect();
        write!(f, "[{}]", names.join(", "))
    }
}

/// The sequence of states visited while executing a program; `states[0]` is
/// the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    states: Vec<WorldState>,
}

impl Trace {
    pub(crate) fn from_states(states: Vec<WorldState>) -> Trace {
        debug_assert!(!states.is_empty());
        Trace { states }
    }

    pub fn states(&self) -> &[WorldState] {
        &self.states
    }

    pub fn input(&self) -> &WorldState {
        &self.states[0]
    }

    pub fn final_state(&self) -> &WorldState {
        self.states.last().expect("a trace always holds the input state")
    }

    /// Number of states, i.e. program length + 1.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn into_states(self) -> Vec<WorldState> {
        self.states
    }
}

impl Index<usize> for Trace {
    type Output = WorldState;

    fn index(&self, i: usize) -> &WorldState {
        &self.states[i]
    }
}

/// Executes `program` on `input`, recording every intermediate state.
pub fn run_trace(program: &Program, input: &WorldState) -> Trace {
    let mut states = Vec::with_capacity(program.len() + 1);
    states.push(input.clone());
    let mut cur = input.clone();
    for &op in program.ops() {
        cur.apply(op);
        states.push(cur.clone());
    }
    Trace { states }
}

/// Executes `program` on `input` and returns only the final state.
pub fn run(program: &Program, input: &WorldState) -> WorldState {
    let mut cur = input.clone();
    for &op in program.ops() {
        cur.apply(op);
    }
    cur
}
