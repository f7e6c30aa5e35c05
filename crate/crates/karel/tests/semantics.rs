use karel::abstraction::abstract_trace;
use karel::{
    abstract_step, alpha, retrace_alternative, run, run_trace, sample_input, Cell, Direction, InputSamplerConfig, Op,
    Program, Semantics, WorldState, MAX_MARKERS,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Straightforward grid simulator kept separate from the library's
/// representation: integers for cells (-1 = wall) and a heading index
/// 0..4 clockwise from north.
#[derive(Debug, Clone, PartialEq)]
struct Sim {
    grid: Vec<Vec<i32>>,
    r: i64,
    c: i64,
    dir: usize,
}

impl Sim {
    fn from_world(w: &WorldState) -> Sim {
        let grid = (0..w.rows())
            .map(|r| {
                (0..w.cols())
                    .map(|c| match w.cell(r, c) {
                        Cell::Obstacle => -1,
                        Cell::Free { markers } => markers as i32,
                    })
                    .collect()
            })
            .collect();
        let dir = match w.facing() {
            Direction::North => 0,
            Direction::East => 1,
            Direction::South => 2,
            Direction::West => 3,
        };
        Sim {
            grid,
            r: w.robot().0 as i64,
            c: w.robot().1 as i64,
            dir,
        }
    }

    fn exec(&mut self, op: &str) {
        const DR: [i64; 4] = [-1, 0, 1, 0];
        const DC: [i64; 4] = [0, 1, 0, -1];
        let (h, w) = (self.grid.len() as i64, self.grid[0].len() as i64);
        match op {
            "move" => {
                let (nr, nc) = (self.r + DR[self.dir], self.c + DC[self.dir]);
                if nr >= 0 && nr < h && nc >= 0 && nc < w && self.grid[nr as usize][nc as usize] >= 0 {
                    self.r = nr;
                    self.c = nc;
                }
            }
            "turnRight" => self.dir = (self.dir + 1) % 4,
            "turnLeft" => self.dir = (self.dir + 3) % 4,
            "pickMarker" => {
                let m = &mut self.grid[self.r as usize][self.c as usize];
                if *m > 0 {
                    *m -= 1;
                }
            }
            "putMarker" => {
                let m = &mut self.grid[self.r as usize][self.c as usize];
                if *m < 10 {
                    *m += 1;
                }
            }
            other => panic!("unknown op {other}"),
        }
    }
}

fn all_programs_up_to(len: usize) -> Vec<Vec<Op>> {
    let mut out = Vec::new();
    let mut frontier = vec![Vec::new()];
    for _ in 0..len {
        let mut next = Vec::new();
        for p in &frontier {
            for op in Op::ALL {
                let mut q: Vec<Op> = p.clone();
                q.push(op);
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// A world with markers anywhere, including under the robot.
fn random_world(rng: &mut ChaCha8Rng) -> WorldState {
    use rand::Rng;
    let cfg = InputSamplerConfig {
        marker_prob: 0.4,
        ..Default::default()
    };
    let base = sample_input(&cfg, rng);
    let (r, c) = base.robot();
    let under = rng.random_range(0..=MAX_MARKERS);
    base.with_cell(r, c, Cell::with_markers(under).unwrap()).unwrap()
}

#[test]
fn matches_independent_simulator_on_every_short_program() {
    let programs = all_programs_up_to(3);
    assert_eq!(programs.len(), 155);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let world = random_world(&mut rng);
        for ops in &programs {
            let mut sim = Sim::from_world(&world);
            for op in ops {
                sim.exec(op.name());
            }
            let got = run(&Program::new(ops.clone()), &world);
            assert_eq!(Sim::from_world(&got), sim, "{ops:?}");
        }
    }
}

#[test]
fn abstraction_commutes_with_execution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let base = random_world(&mut rng);
        for d in Direction::ALL {
            let s = WorldState::new(base.rows(), base.cols(), base.cells().to_vec(), base.robot(), d).unwrap();
            for op in Op::ALL {
                assert_eq!(alpha(&s.step(op)), abstract_step(alpha(&s), op));
            }
        }
    }
}

#[test]
fn facing_directions_follow_the_turn_table() {
    let s = WorldState::empty(3, 3, (1, 1), Direction::North).unwrap();
    let p = Program::new(vec![Op::TurnRight, Op::Move, Op::TurnRight, Op::TurnLeft, Op::TurnLeft, Op::PutMarker]);
    use Direction::*;
    assert_eq!(abstract_trace(&run_trace(&p, &s)), vec![North, East, East, South, East, North, North]);
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop::sample::select(Op::ALL.to_vec())
}

fn arb_world() -> impl Strategy<Value = WorldState> {
    any::<u64>().prop_map(|seed| random_world(&mut ChaCha8Rng::seed_from_u64(seed)))
}

proptest! {
    #[test]
    fn retracing_equals_running_the_image(ops in prop::collection::vec(arb_op(), 0..9), s in arb_world()) {
        let p = Program::new(ops);
        for sem in Semantics::INTERVENTIONS {
            let map = sem.map();
            prop_assert_eq!(retrace_alternative(&p, &s, &map), run_trace(&map.image(&p), &s));
        }
    }

    #[test]
    fn markers_stay_in_range(ops in prop::collection::vec(arb_op(), 0..40), s in arb_world()) {
        for st in run_trace(&Program::new(ops), &s).states() {
            for cell in st.cells() {
                prop_assert!(cell.markers() <= MAX_MARKERS);
                if cell.is_obstacle() {
                    prop_assert_eq!(cell.markers(), 0);
                }
            }
            prop_assert!(!st.cell(st.robot().0, st.robot().1).is_obstacle());
        }
    }

    #[test]
    fn trace_has_one_state_per_op_and_each_is_a_step(ops in prop::collection::vec(arb_op(), 0..12), s in arb_world()) {
        let p = Program::new(ops);
        let t = run_trace(&p, &s);
        prop_assert_eq!(t.len(), p.len() + 1);
        prop_assert_eq!(&t[0], &s);
        for (i, op) in p.ops().iter().enumerate() {
            prop_assert_eq!(&t[i + 1], &t[i].step(*op));
        }
    }

    #[test]
    fn four_turns_are_the_identity(s in arb_world(), right in any::<bool>()) {
        let op = if right { Op::TurnRight } else { Op::TurnLeft };
        prop_assert_eq!(run(&Program::new(vec![op; 4]), &s), s);
    }

    #[test]
    fn put_then_pick_restores_unsaturated_cells(s in arb_world()) {
        let under = s.markers_under_robot();
        let back = run(&Program::new(vec![Op::PutMarker, Op::PickMarker]), &s);
        if under < MAX_MARKERS {
            prop_assert_eq!(back, s);
        } else {
            prop_assert_eq!(back.markers_under_robot(), MAX_MARKERS - 1);
        }
    }
}
