use experiment::analysis::{generative_accuracy, recheck_correct};
use experiment::probe::{evaluate, future_baseline, label_pairs, offset_data, train_probe};
use experiment::tracer::{capture, direction_traces, labels_at, relabel, spec_inputs, traced_program, CaptureOptions, DecodeRecord, TraceSet};
use experiment::ProbeConfig;
use karel::abstraction::abstract_trace;
use karel::codec::END_ID;
use karel::{build_dataset, run_trace, DatasetConfig, Example, InputSamplerConfig, Program, Semantics, Split};
use lm::{LMConfig, LMParams};

const OFFSETS: [i32; 5] = [-2, -1, 0, 1, 2];

fn examples(n: usize, seed: u64, split: Split) -> Vec<Example> {
    let cfg = DatasetConfig {
        inputs: InputSamplerConfig {
            rows: 5,
            cols: 5,
            ..Default::default()
        },
        n_ios: 3,
        grammar: Default::default(),
    };
    build_dataset(n, &cfg, seed, split).unwrap().examples
}

fn random_model(seed: u64) -> LMParams<f32> {
    let cfg = LMConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        context: 3 * 52 + 12,
        seed,
        ..Default::default()
    };
    LMParams::init(&cfg)
}

fn options() -> CaptureOptions {
    CaptureOptions {
        include_embedding: false,
        reference_fallback: true,
    }
}

fn captured(n: usize, seed: u64, split: Split) -> (Vec<Example>, TraceSet) {
    let ex = examples(n, seed, split);
    let set = capture(&random_model(1), &ex, 0, &OFFSETS, options()).unwrap();
    (ex, set)
}

#[test]
fn records_align_with_traced_programs() {
    let (ex, set) = captured(40, 3, Split::Test);
    assert_eq!(set.decodes.len(), ex.len());
    let expected: usize = set.decodes.iter().zip(&ex).map(|(d, e)| traced_program(d, e).len()).sum();
    assert_eq!(set.records.len(), expected);
    for r in &set.records {
        let p = traced_program(&set.decodes[r.example], &ex[r.example]);
        assert!(r.t >= 1 && r.t <= p.len());
        assert_eq!(r.state.len(), 32);
        for (oi, &o) in OFFSETS.iter().enumerate() {
            let idx = r.t as i64 + o as i64;
            for (k, s) in spec_inputs(&ex[r.example]).iter().enumerate() {
                let dirs = abstract_trace(&run_trace(&p, s));
                let want = (idx >= 0 && idx as usize <= p.len()).then(|| dirs[idx as usize].index() as u8);
                assert_eq!(r.labels[oi][k], want);
            }
        }
    }
}

#[test]
fn relabelling_matches_running_the_permuted_program() {
    let (ex, set) = captured(30, 4, Split::Test);
    assert_eq!(
        relabel(&set, &ex, Semantics::Original),
        set.records.iter().map(|r| r.labels.clone()).collect::<Vec<_>>()
    );
    for sem in Semantics::INTERVENTIONS {
        let labels = relabel(&set, &ex, sem);
        for (r, l) in set.records.iter().zip(&labels) {
            let p = sem.map().image(&traced_program(&set.decodes[r.example], &ex[r.example]));
            for (k, s) in spec_inputs(&ex[r.example]).iter().enumerate() {
                let dirs = abstract_trace(&run_trace(&p, s));
                assert_eq!(l[2][k], Some(dirs[r.t].index() as u8), "{sem:?}");
            }
        }
    }
}

#[test]
fn capture_is_deterministic() {
    let ex = examples(10, 5, Split::Test);
    let m = random_model(2);
    assert_eq!(capture(&m, &ex, 0, &OFFSETS, options()).unwrap(), capture(&m, &ex, 0, &OFFSETS, options()).unwrap());
}

#[test]
fn without_fallback_malformed_specs_yield_no_records() {
    let ex = examples(10, 5, Split::Test);
    let opts = CaptureOptions {
        reference_fallback: false,
        ..options()
    };
    let set = capture(&random_model(2), &ex, 0, &OFFSETS, opts).unwrap();
    for d in set.decodes.iter().filter(|d| !d.well_formed) {
        assert!(set.records.iter().all(|r| r.example != d.example));
    }
}

#[test]
fn degenerate_model_scores_the_empty_program_rate() {
    let ex = examples(400, 6, Split::Test);
    let decodes: Vec<DecodeRecord> = ex
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let d = DecodeRecord {
                example: i,
                tokens: vec![END_ID],
                well_formed: true,
                correct: false,
                length: 0,
                reference_length: e.reference.len(),
                logprob: 0.0,
            };
            DecodeRecord {
                correct: recheck_correct(&d, e),
                ..d
            }
        })
        .collect();
    let empty = Program::new(vec![]);
    let consistent = ex
        .iter()
        .filter(|e| e.spec.iter().all(|io| karel::run(&empty, &io.input.to_world().unwrap()) == io.output.to_world().unwrap()))
        .count();
    let g = generative_accuracy(0, &decodes);
    assert_eq!(g.correct, consistent);
    assert!((g.accuracy - consistent as f64 / ex.len() as f64).abs() < 1e-15);
    assert_eq!(g.by_length.values().map(|t| t.count).sum::<usize>(), ex.len());
}

#[test]
fn recomputed_accuracy_matches_stored_flags() {
    let (ex, set) = captured(40, 7, Split::Test);
    for (d, e) in set.decodes.iter().zip(&ex) {
        assert_eq!(recheck_correct(d, e), d.well_formed && d.correct);
    }
}

#[test]
fn random_init_states_and_the_future_baseline() {
    let (tr_ex, train) = captured(300, 8, Split::Train);
    let (te_ex, test) = captured(150, 9, Split::Test);
    let cfg = ProbeConfig {
        epochs: 20,
        decay_epochs: vec![15, 18],
        ..Default::default()
    };
    let tr_labels = relabel(&train, &tr_ex, Semantics::Original);
    let te_labels = relabel(&test, &te_ex, Semantics::Original);
    let (tr, _) = offset_data(&train.records, &tr_labels, 2, 0);
    let (te, _) = offset_data(&test.records, &te_labels, 2, 0);
    let acc = evaluate(&train_probe(&tr, &cfg).unwrap(), &te).unwrap();
    println!("random-init offset-0 content {:.3} over {} labels", acc.accuracy, acc.n_labels);
    assert!(acc.accuracy > 0.1 && acc.accuracy < 0.6);

    // Three of five operations keep the heading, so identity is near 60%.
    let labels: Vec<_> = examples(3000, 10, Split::Test)
        .iter()
        .flat_map(|e| {
            let traces = direction_traces(&e.reference, &spec_inputs(e), Semantics::Original);
            (1..=e.reference.len()).map(move |t| labels_at(&traces, t, &[0, 1])).collect::<Vec<_>>()
        })
        .collect();
    let b = future_baseline(&label_pairs(&labels, 0, 1)).unwrap();
    assert_eq!(b.map, [0, 1, 2, 3]);
    assert!((b.accuracy - 0.6).abs() < 0.03, "{}", b.accuracy);
}
