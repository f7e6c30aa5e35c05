//! Alternative semantics obtained by reassigning the meaning of actions.
//!
//! An alternative semantics maps every action token to the original action
//! whose meaning it takes on. Retracing a program under such a map is the
//! same as tracing its token-wise image under the original semantics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::program::{Program, Trace};
use crate::world::{Op, WorldState};

/// Named semantics variants. `Original` is the identity map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantics {
    Original,
    Opposite,
    Swap,
    Shift,
    Random,
}

impl Semantics {
    pub const ALL: [Semantics; 5] = [
        Semantics::Original,
        Semantics::Opposite,
        Semantics::Swap,
        Semantics::Shift,
        Semantics::Random,
    ];

    pub const INTERVENTIONS: [Semantics; 4] = [
        Semantics::Opposite,
        Semantics::Swap,
        Semantics::Shift,
        Semantics::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Semantics::Original => "original",
            Semantics::Opposite => "opposite",
            Semantics::Swap => "swap",
            Semantics::Shift => "shift",
            Semantics::Random => "random",
        }
    }

    pub fn map(self) -> SemanticsMap {
        use Op::*;
        // Columns: pickMarker, putMarker, turnRight, turnLeft, move.
        let (pick, put, right, left, mv) = match self {
            Semantics::Original => (PickMarker, PutMarker, TurnRight, TurnLeft, Move),
            Semantics::Opposite => (TurnRight, TurnLeft, Move, TurnRight, TurnLeft),
            Semantics::Swap => (PutMarker, PickMarker, TurnLeft, TurnRight, Move),
            Semantics::Shift => (PutMarker, TurnRight, TurnLeft, Move, PickMarker),
            Semantics::Random => (TurnLeft, Move, PickMarker, PutMarker, TurnRight),
        };
        let mut table = [Move; 5];
        table[PickMarker.index()] = pick;
        table[PutMarker.index()] = put;
        table[TurnRight.index()] = right;
        table[TurnLeft.index()] = left;
        table[Move.index()] = mv;
        SemanticsMap { table }
    }
}

impl fmt::Display for Semantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Semantics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Semantics::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown semantics variant `{s}`"))
    }
}

/// A total function from action tokens to the action whose meaning they take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SemanticsMap {
    table: [Op; 5],
}

impl SemanticsMap {
    pub fn identity() -> SemanticsMap {
        Semantics::Original.map()
    }

    pub fn from_table(table: [Op; 5]) -> SemanticsMap {
        SemanticsMap { table }
    }

    pub fn apply(&self, op: Op) -> Op {
        self.table[op.index()]
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = [false; 5];
        for op in self.table {
            seen[op.index()] = true;
        }
        seen.iter().all(|&s| s)
    }

    pub fn image(&self, program: &Program) -> Program {
        program.map_ops(|op| self.apply(op))
    }
}

/// Traces `program` with every action interpreted through `sem`.
pub fn retrace_alternative(program: &Program, input: &WorldState, sem: &SemanticsMap) -> Trace {
    let mut cur = input.clone();
    let mut states = Vec::with_capacity(program.len() + 1);
    states.push(cur.clone());
    for &op in program.ops() {
        cur.apply(sem.apply(op));
        states.push(cur.clone());
    }
    Trace::from_states(states)
}
