//! One PASS/FAIL line per acceptance criterion. Criteria 1-8 are computed
//! here against independent oracles; 9-14 read the report of the committed
//! desk run (`runs/fast`, with `runs/paper-shape` as the one escalation).

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use experiment::analysis::{bca_ci, ols, percentile_ci};
use experiment::probe::{evaluate, train_probe, ProbeData};
use experiment::report::RunReport;
use experiment::ProbeConfig;
use karel::codec::{decode_example, encode_example, encoded_len};
use karel::{
    abstract_step, alpha, build_dataset, retrace_alternative, run, run_trace, sample_input, sample_program, Cell,
    DatasetConfig, Direction, GrammarConfig, InputSamplerConfig, Op, Program, Semantics, Split, WorldState, MAX_MARKERS,
};
use lm::model::{Batch, TrainState};
use lm::{LMConfig, LMParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let t = Instant::now();
    let o = f();
    (o, t.elapsed())
}

/// A world with markers anywhere, including under the robot.
fn random_world(rng: &mut ChaCha8Rng) -> WorldState {
    let cfg = InputSamplerConfig {
        marker_prob: 0.4,
        ..Default::default()
    };
    let w = sample_input(&cfg, rng);
    let (r, c) = w.robot();
    let m = rng.random_range(0..=MAX_MARKERS);
    w.with_cell(r, c, Cell::with_markers(m).unwrap()).unwrap()
}

/// Brute-force simulator over plain integers: -1 is a wall, dir 0..4
/// clockwise from north.
fn simulate(w: &WorldState, ops: &[Op]) -> (Vec<i32>, (i64, i64), usize) {
    let (h, wd) = (w.rows() as i64, w.cols() as i64);
    let mut g: Vec<i32> = w
        .cells()
        .iter()
        .map(|c| if c.is_obstacle() { -1 } else { c.markers() as i32 })
        .collect();
    let (mut r, mut c) = (w.robot().0 as i64, w.robot().1 as i64);
    let mut d = Direction::ALL.iter().position(|&x| x == w.facing()).unwrap();
    for op in ops {
        let i = (r * wd + c) as usize;
        match op.name() {
            "move" => {
                let (nr, nc) = (r + [-1, 0, 1, 0][d], c + [0, 1, 0, -1][d]);
                if (0..h).contains(&nr) && (0..wd).contains(&nc) && g[(nr * wd + nc) as usize] >= 0 {
                    (r, c) = (nr, nc);
                }
            }
            "turnRight" => d = (d + 1) % 4,
            "turnLeft" => d = (d + 3) % 4,
            "pickMarker" => g[i] = (g[i] - 1).max(0),
            "putMarker" => g[i] = (g[i] + 1).min(10),
            other => panic!("{other}"),
        }
    }
    (g, (r, c), d)
}

fn c1_interpreter() -> Outcome {
    let mut progs: Vec<Vec<Op>> = Vec::new();
    let mut frontier = vec![vec![]];
    for _ in 0..3 {
        frontier = frontier
            .iter()
            .flat_map(|p: &Vec<Op>| Op::ALL.iter().map(move |&op| [p.clone(), vec![op]].concat()))
            .collect();
        progs.extend(frontier.iter().cloned());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0;
    for _ in 0..20 {
        let w = random_world(&mut rng);
        assert_eq!((w.rows(), w.cols()), (8, 8));
        for p in &progs {
            let got = run(&Program::new(p.clone()), &w);
            let got = simulate(&got, &[]);
            if got != simulate(&w, p) {
                bad += 1;
            }
        }
    }
    outcome(progs.len() == 155 && bad == 0, format!("{} programs x 20 grids, {bad} mismatches", progs.len()))
}

fn c2_homomorphism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut n, mut bad) = (0, 0);
    for _ in 0..200 {
        let base = random_world(&mut rng);
        for d in Direction::ALL {
            let s = WorldState::new(base.rows(), base.cols(), base.cells().to_vec(), base.robot(), d).unwrap();
            for op in Op::ALL {
                n += 1;
                bad += (alpha(&s.step(op)) != abstract_step(alpha(&s), op)) as usize;
            }
        }
    }
    outcome(n == 4000 && bad == 0, format!("{n} checks, {bad} failures"))
}

fn c3_retrace() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    for sem in Semantics::INTERVENTIONS {
        let map = sem.map();
        for _ in 0..1000 {
            let p = sample_program(&GrammarConfig::default(), &mut rng);
            let s = random_world(&mut rng);
            bad += (retrace_alternative(&p, &s, &map) != run_trace(&map.image(&p), &s)) as usize;
        }
    }
    outcome(bad == 0, format!("4 maps x 1000 (program, state) pairs, {bad} failures"))
}

fn c4_sampler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lens: Vec<usize> = (0..100_000).map(|_| sample_program(&GrammarConfig::default(), &mut rng).len()).collect();
    let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
    let max = *lens.iter().max().unwrap();
    outcome((mean - 2.5).abs() <= 0.1 && max == 8, format!("mean length {mean:.4}, max {max}"))
}

fn c5_gradients() -> Outcome {
    let cfg = LMConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        context: 16,
        init_std: 0.3,
        ..Default::default()
    };
    let mut params = LMParams::<f64>::init(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for x in params.data.iter_mut() {
        *x += rng.random_range(-0.05..0.05);
    }
    let rows: [&[u32]; 2] = [&[21, 12, 3, 7, 16, 24], &[22, 5, 19, 24]];
    let batch = Batch::from_sequences(&rows, karel::codec::PAD_ID);
    let mut st = TrainState::new(&params);
    st.forward(&params, &batch);
    st.backward(&params, &batch);
    let analytic = st.grads.clone();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for t in params.layout.tensors.clone() {
        let (mut d2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in t.offset..t.offset + t.len() {
            let orig = params.data[i];
            params.data[i] = orig + h;
            let up = st.forward(&params, &batch);
            params.data[i] = orig - h;
            let down = st.forward(&params, &batch);
            params.data[i] = orig;
            let num = (up - down) / (2.0 * h);
            d2 += (analytic[i] - num).powi(2);
            a2 += analytic[i].powi(2);
            n2 += num * num;
        }
        let scale = a2.sqrt() + n2.sqrt();
        worst = worst.max(if scale < 1e-12 { d2.sqrt() } else { d2.sqrt() / scale });
    }
    outcome(worst < 1e-4, format!("worst per-tensor relative error {worst:.2e}"))
}

fn one_hot_states(n: usize, seed: u64) -> ProbeData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (heads, width) = (3, 16);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let mut row = vec![0.0f32; width];
        for h in 0..heads {
            let c = rng.random_range(0..4u8);
            row[h * 4 + c as usize] = 1.0;
            y.push(c);
        }
        x.extend(row.iter().map(|v| v + rng.random_range(-0.3..0.3)));
    }
    ProbeData {
        width,
        heads,
        x,
        y,
        depth: vec![1; n],
    }
}

fn c6_chance(report: Option<&RunReport>) -> Outcome {
    let cfg = ProbeConfig {
        epochs: 30,
        decay_epochs: vec![20, 25],
        ..Default::default()
    };
    let train = one_hot_states(3000, 61).shuffled_labels(1);
    let test = one_hot_states(3000, 62).shuffled_labels(2);
    let shuffled = evaluate(&train_probe(&train, &cfg).unwrap(), &test).unwrap().accuracy;
    let mut pass = (shuffled - 0.25).abs() <= 0.03;
    let mut detail = format!("synthetic shuffled {shuffled:.3}");
    match report {
        Some(r) => {
            let run_chance: Vec<f64> = r.chance.iter().filter_map(|c| c.accuracy).collect();
            let worst = run_chance.iter().map(|a| (a - 0.25).abs()).fold(0.0, f64::max);
            let init = r.checkpoints.first().and_then(|&s| r.content_at(s, 0, Semantics::Original));
            pass &= !run_chance.is_empty() && worst <= 0.03;
            pass &= init.is_some_and(|a| (a - 0.25).abs() <= 0.05);
            detail += &format!(
                "; run shuffled max |acc-0.25| {worst:.3} over {} probes; random-init offset-0 {}",
                run_chance.len(),
                fmt(init)
            );
        }
        None => {
            pass = false;
            detail += "; no run report for the random-init check";
        }
    }
    outcome(pass, detail)
}

fn c7_statistics() -> Outcome {
    let r = ols(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.1, 3.9, 6.2, 7.8, 10.1]).unwrap();
    // Long-hand: Sxy = 19.9, Sxx = 10, mean x = 3, mean y = 6.02.
    let slope = 19.9 / 10.0;
    let intercept: f64 = 6.02 - slope * 3.0;
    let ols_err = (r.slope - slope).abs().max((r.intercept - intercept).abs()).max((r.r2 - 39601.0 / 39708.0).abs());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let xs: Vec<f64> = (0..2000).map(|_| normal.sample(&mut rng)).collect();
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
    let bca = bca_ci(&xs, 9999, 0.95, 1).unwrap();
    let (lo, hi) = percentile_ci(&xs, 9999, 0.95, 1).unwrap();
    let gap = (bca.lower - lo).abs().max((bca.upper - hi).abs()) / sd;
    let flat = bca_ci(&[3.0, 3.0, 3.0], 9999, 0.95, 1).unwrap();
    let zero = flat.lower == 3.0 && flat.upper == 3.0;
    outcome(
        ols_err < 1e-12 && gap < 0.05 && zero,
        format!("OLS error {ols_err:.1e}; BCa vs percentile {gap:.4} sd; constant data CI ({}, {})", flat.lower, flat.upper),
    )
}

fn c8_codec() -> Outcome {
    let cfg = DatasetConfig {
        grammar: GrammarConfig::default(),
        inputs: InputSamplerConfig::default(),
        n_ios: 5,
    };
    let ds = build_dataset(1000, &cfg, 8, Split::Test).unwrap();
    let (mut trip, mut count) = (0, 0);
    for e in &ds.examples {
        let ids = encode_example(e).ids;
        trip += (decode_example(&ids, 8, 8, 5).ok().as_ref() != Some(e)) as usize;
        count += (ids.len() != encoded_len(8, 8, 5, e.reference.len())) as usize;
    }
    outcome(trip == 0 && count == 0, format!("1000 examples: {trip} round-trip failures, {count} length mismatches"))
}

fn fmt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

fn c9(r: &RunReport) -> Outcome {
    let (Some(first), Some(last)) = (r.generative_accuracy.first(), r.generative_accuracy.last()) else {
        return outcome(false, "no generative accuracy series");
    };
    outcome(
        last.accuracy >= 0.5 && last.accuracy > first.accuracy,
        format!(
            "final (step {}) {:.3} on {} specs; first (step {}) {:.3}",
            last.step, last.accuracy, last.count, first.step, first.accuracy
        ),
    )
}

fn c10(r: &RunReport) -> Outcome {
    let (first, last) = (r.checkpoints.first().copied(), r.checkpoints.last().copied());
    let init = first.and_then(|s| r.content_at(s, 0, Semantics::Original));
    let fin = last.and_then(|s| r.content_at(s, 0, Semantics::Original));
    let pass = matches!((init, fin), (Some(i), Some(f)) if f >= 0.40 && f >= i + 0.10);
    outcome(pass, format!("offset-0 content final {} vs init {}", fmt(fin), fmt(init)))
}

fn c11(r: &RunReport) -> Outcome {
    match r.regression(0, Semantics::Original).and_then(|g| g.result.as_ref()) {
        Some(f) => outcome(
            f.n >= 10 && f.slope > 0.0 && f.r2 >= 0.6,
            format!("n {} slope {:.3} R2 {:.3} p {:.2e}", f.n, f.slope, f.r2, f.p_value),
        ),
        None => outcome(false, "no offset-0 regression"),
    }
}

fn c12(r: &RunReport) -> Outcome {
    let Some(&last) = r.checkpoints.last() else {
        return outcome(false, "no checkpoints");
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for off in [-1, 0] {
        let (o, a) = (r.content_at(last, off, Semantics::Original), r.content_at(last, off, Semantics::Opposite));
        pass &= matches!((o, a), (Some(o), Some(a)) if a <= o - 0.05);
        parts.push(format!("offset {off}: original {} opposite {}", fmt(o), fmt(a)));
    }
    outcome(pass, parts.join("; "))
}

fn c13(r: &RunReport) -> Outcome {
    let Some(l) = r.lengths.last() else {
        return outcome(false, "no length series");
    };
    match (&l.reference.ci, &l.generated.ci, l.reference.mean, l.generated.mean) {
        (Some(rc), Some(gc), Some(rm), Some(gm)) => outcome(
            gm < rm && !rc.overlaps(gc),
            format!(
                "generated {gm:.3} ({:.3}, {:.3}) vs reference {rm:.3} ({:.3}, {:.3})",
                gc.lower, gc.upper, rc.lower, rc.upper
            ),
        ),
        _ => outcome(false, "length intervals missing"),
    }
}

fn c14(r: &RunReport) -> Outcome {
    let Some(&last) = r.checkpoints.last() else {
        return outcome(false, "no checkpoints");
    };
    match r.perplexity.iter().find(|p| p.step == last && p.split == "test") {
        Some(p) => {
            let out = &p.breakdown.output;
            let ok = out.windows(2).all(|w| w[1] <= w[0]);
            let s: Vec<String> = out.iter().map(|v| format!("{v:.4}")).collect();
            outcome(ok && !out.is_empty(), format!("output-grid perplexity by k: {}", s.join(", ")))
        }
        None => outcome(false, "no final-checkpoint test perplexity"),
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load_report(name: &str) -> Option<RunReport> {
    let path = workspace().join("runs").join(name).join("report/report.json");
    let text = std::fs::read_to_string(path).ok()?;
    Some(serde_json::from_str(&text).expect("report parses"))
}

#[test]
fn acceptance() {
    let fast = load_report("fast");
    let escalated = load_report("paper-shape");
    let mut results: Vec<(usize, Outcome, Option<Duration>)> = Vec::new();

    let limits = [(1, 10.0), (4, 30.0), (5, 60.0)];
    let exact: [(usize, fn() -> Outcome); 6] = [
        (1, c1_interpreter),
        (2, c2_homomorphism),
        (3, c3_retrace),
        (4, c4_sampler),
        (5, c5_gradients),
        (8, c8_codec),
    ];
    for (n, f) in exact {
        let (mut o, t) = timed(f);
        if let Some(&(_, limit)) = limits.iter().find(|l| l.0 == n) {
            if t.as_secs_f64() >= limit {
                o.pass = false;
                o.detail += &format!("; runtime limit {limit} s exceeded");
            }
        }
        results.push((n, o, Some(t)));
    }
    let (o, t) = timed(|| c6_chance(fast.as_ref()));
    results.push((6, o, Some(t)));
    let (o, t) = timed(c7_statistics);
    results.push((7, o, Some(t)));

    let desk: [(usize, fn(&RunReport) -> Outcome); 6] = [(9, c9), (10, c10), (11, c11), (12, c12), (13, c13), (14, c14)];
    for (n, f) in desk {
        let o = match &fast {
            None => outcome(false, "runs/fast/report/report.json not found; run `karel-lab all --preset fast`"),
            Some(r) => {
                let mut o = f(r);
                o.detail = format!("fast: {}", o.detail);
                if let Some(e) = escalated.as_ref().filter(|_| n <= 12) {
                    let eo = f(e);
                    o.detail += &format!(" | paper-shape: {} {}", if eo.pass { "PASS" } else { "FAIL" }, eo.detail);
                    o.pass |= eo.pass;
                }
                o
            }
        };
        results.push((n, o, None));
    }

    results.sort_by_key(|r| r.0);
    for (n, o, t) in &results {
        let time = t.map_or_else(String::new, |t| format!(" [{:.2} s]", t.as_secs_f64()));
        println!("criterion {n:>2}: {} {}{time}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
