use lm::model::{Batch, TrainState};
use lm::{forward, greedy_decode, Checkpoint, LMConfig, LMParams, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(n_layers: usize, d: usize) -> LMConfig {
    LMConfig {
        n_layers,
        n_heads: 2,
        d_model: d,
        context: 16,
        init_std: 0.3,
        ..Default::default()
    }
}

fn gradcheck_batch() -> Batch {
    // Two rows of six positions; the second is padded, 12 token slots total.
    let a: &[u32] = &[21, 12, 3, 7, 16, 24];
    let b: &[u32] = &[22, 5, 19, 24];
    Batch::from_sequences(&[a, b], karel::codec::PAD_ID)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let cfg = small(2, 16);
    let mut params = LMParams::<f64>::init(&cfg);
    // Non-trivial gains and biases so their gradients are exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for x in params.data.iter_mut() {
        *x += rng.random_range(-0.05..0.05);
    }
    let batch = gradcheck_batch();
    assert_eq!(batch.tokens.len(), 12);
    let mut st = TrainState::new(&params);
    st.forward(&params, &batch);
    st.backward(&params, &batch);
    let analytic = st.grads.clone();

    let h = 1e-5;
    let layout = params.layout.clone();
    for t in &layout.tensors {
        let mut num = Vec::with_capacity(t.len());
        for i in t.offset..t.offset + t.len() {
            let orig = params.data[i];
            params.data[i] = orig + h;
            let up = st.forward(&params, &batch);
            params.data[i] = orig - h;
            let down = st.forward(&params, &batch);
            params.data[i] = orig;
            num.push((up - down) / (2.0 * h));
        }
        let ana = &analytic[t.offset..t.offset + t.len()];
        let diff: f64 = ana.iter().zip(&num).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = ana.iter().map(|a| a * a).sum::<f64>().sqrt() + num.iter().map(|n| n * n).sum::<f64>().sqrt();
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        assert!(rel < 1e-4, "{}: relative error {rel:e}", t.name);
    }
}

#[test]
fn changing_a_token_leaves_earlier_logits_alone() {
    let params = LMParams::<f64>::init(&small(2, 16));
    let ids: Vec<u32> = vec![21, 0, 4, 12, 22, 1, 13, 23, 16];
    let base = forward(&params, &ids).unwrap();
    for t in 0..ids.len() {
        let mut alt = ids.clone();
        alt[t] = (alt[t] + 5) % 26;
        let out = forward(&params, &alt).unwrap();
        for p in 0..t {
            assert_eq!(base.logits_at(p), out.logits_at(p), "position {p} changed after editing {t}");
        }
        assert_ne!(base.logits_at(t), out.logits_at(t));
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let params = LMParams::<f32>::init(&small(2, 16));
    let out = forward(&params, &[21, 1, 2, 3, 22]).unwrap();
    for p in 0..5 {
        let row = out.logits_at(p);
        let max = row.iter().copied().fold(f32::MIN, f32::max);
        let z: f64 = row.iter().map(|&x| ((x - max) as f64).exp()).sum();
        let total: f64 = row.iter().map(|&x| ((x - max) as f64).exp() / z).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}

#[test]
fn cached_decoding_matches_full_forward() {
    let params = LMParams::<f64>::init(&small(2, 16));
    let ids: Vec<u32> = vec![21, 3, 9, 14, 22, 2, 7, 23, 18, 17];
    let full = forward(&params, &ids).unwrap();
    let mut s = lm::Session::new(&params);
    let first = s.extend(&ids[..4]).unwrap();
    let mut logits = first.logits.clone();
    let mut hidden: Vec<Vec<f32>> = first.hidden.clone();
    for &t in &ids[4..] {
        let o = s.extend(&[t]).unwrap();
        logits.extend(o.logits);
        for (h, hn) in hidden.iter_mut().zip(o.hidden) {
            h.extend(hn);
        }
    }
    for (a, b) in logits.iter().zip(&full.logits) {
        assert!((a - b).abs() < 1e-5);
    }
    for (ha, hb) in hidden.iter().zip(&full.hidden) {
        for (a, b) in ha.iter().zip(hb) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn training_and_inference_paths_agree() {
    let params = LMParams::<f64>::init(&small(2, 16));
    let ids: &[u32] = &[21, 3, 9, 14, 22, 2, 7, 23];
    let batch = Batch::from_sequences(&[ids], karel::codec::PAD_ID);
    let mut st = TrainState::new(&params);
    let loss = st.forward(&params, &batch);
    let nll = lm::token_nlls(&params, ids).unwrap();
    let want = nll[1..].iter().sum::<f64>() / (ids.len() - 1) as f64;
    // Inference outputs are stored as f32.
    assert!((loss - want).abs() < 1e-6, "{loss} vs {want}");
    let out = forward(&params, ids).unwrap();
    for l in 0..2 {
        for (a, b) in st.layer_output(l).iter().zip(&out.hidden[l]) {
            assert!((*a as f32 - b).abs() < 1e-6);
        }
    }
}

#[test]
fn context_overflow_is_an_error() {
    let params = LMParams::<f32>::init(&small(1, 8));
    assert!(matches!(
        forward(&params, &[0; 17]),
        Err(lm::LmError::ContextOverflow { len: 17, context: 16 })
    ));
    assert!(forward(&params, &[0; 16]).is_ok());
    assert!(matches!(forward(&params, &[26]), Err(lm::LmError::BadToken(26))));
}

fn random_corpus(n: usize, len: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..len).map(|_| rng.random_range(0..25)).collect()).collect()
}

#[test]
fn untrained_loss_is_near_uniform() {
    let cfg = LMConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 4,
        context: 64,
        batch_size: 32,
        ..Default::default()
    };
    let corpus = random_corpus(32, 64, 3);
    let mut tr = Trainer::new(&cfg).unwrap();
    let batch = lm::make_batch(&cfg, &corpus, 0).unwrap();
    let loss = tr.loss(&batch);
    let uniform = 26f64.ln();
    assert!((loss - uniform).abs() < 0.1 * uniform, "init loss {loss}");
}

#[test]
fn memorizes_a_small_corpus() {
    let cfg = LMConfig {
        n_layers: 2,
        d_model: 64,
        n_heads: 4,
        context: 32,
        batch_size: 32,
        total_steps: 500,
        warmup_steps: 50,
        learning_rate: 3e-3,
        ..Default::default()
    };
    let corpus = random_corpus(32, 24, 5);
    let mut tr = Trainer::new(&cfg).unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..cfg.total_steps {
        last = tr.step_corpus(&corpus).unwrap().loss;
    }
    let batch = lm::make_batch(&cfg, &corpus, 0).unwrap();
    let final_loss = tr.loss(&batch);
    assert!(final_loss < 0.05, "loss after 500 steps: {final_loss} (last step {last})");
}

#[test]
fn identical_seeds_give_identical_runs_and_resume_is_exact() {
    let cfg = LMConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        context: 16,
        batch_size: 4,
        total_steps: 12,
        checkpoint_interval: 5,
        warmup_steps: 3,
        ..Default::default()
    };
    let corpus = random_corpus(9, 12, 1);
    let curve = |tr: &mut Trainer, n: usize| -> Vec<f64> { (0..n).map(|_| tr.step_corpus(&corpus).unwrap().loss).collect() };
    let mut a = Trainer::new(&cfg).unwrap();
    let mut b = Trainer::new(&cfg).unwrap();
    let ca = curve(&mut a, 12);
    assert_eq!(ca, curve(&mut b, 12));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.bin");
    let mut c = Trainer::new(&cfg).unwrap();
    let first = curve(&mut c, 5);
    c.checkpoint("t").save(&path).unwrap();
    let mut d = Trainer::from_checkpoint(Checkpoint::load(&path).unwrap()).unwrap();
    let rest = curve(&mut d, 7);
    assert_eq!([first, rest].concat(), ca);
    assert_eq!(d.params.data, a.params.data);
}

#[test]
fn train_to_dir_resumes_where_it_stopped() {
    let cfg = LMConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        context: 16,
        batch_size: 4,
        total_steps: 10,
        checkpoint_interval: 4,
        ..Default::default()
    };
    let corpus = random_corpus(9, 12, 2);
    let full = tempfile::tempdir().unwrap();
    let done = lm::train_to_dir(&cfg, &corpus, full.path(), "", |_| {}).unwrap();
    assert_eq!(lm::list_checkpoints(full.path()).unwrap(), vec![0, 4, 8, 10]);

    let part = tempfile::tempdir().unwrap();
    let short = LMConfig { total_steps: 10, ..cfg.clone() };
    // Simulate an interruption after step 6 by deleting later checkpoints.
    lm::train_to_dir(&short, &corpus, part.path(), "", |_| {}).unwrap();
    std::fs::remove_file(lm::checkpoint_path(part.path(), 8)).unwrap();
    std::fs::remove_file(lm::checkpoint_path(part.path(), 10)).unwrap();
    let resumed = lm::train_to_dir(&short, &corpus, part.path(), "", |_| {}).unwrap();
    assert_eq!(resumed.params.data, done.params.data);
    let a = lm::read_loss_log(&full.path().join("train_log.csv")).unwrap();
    let b = lm::read_loss_log(&part.path().join("train_log.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 10);
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let cfg = small(2, 16);
    let tr = Trainer::new(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    tr.checkpoint("hash").save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.header.tag, "hash");
    assert_eq!(back.params, tr.params);
    let ids = [21, 4, 5, 22];
    assert_eq!(forward(&tr.params, &ids).unwrap(), forward(&back.params, &ids).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn greedy_decoding_is_deterministic_and_respects_the_cap() {
    let params = LMParams::<f32>::init(&small(2, 16));
    let prefix = [21, 12, 22, 13, 23];
    let a = greedy_decode(&params, &prefix, 6, false).unwrap();
    assert_eq!(a, greedy_decode(&params, &prefix, 6, false).unwrap());
    assert!(a.tokens.len() <= 6);
    assert_eq!(a.tokens.len(), a.logprobs.len());
    let none = greedy_decode(&params, &prefix, 0, false).unwrap();
    assert!(none.tokens.is_empty() && !none.finished);
    // Decoding is the argmax of the full forward pass at each step.
    let mut ids = prefix.to_vec();
    for &t in &a.tokens {
        let out = forward(&params, &ids).unwrap();
        assert_eq!(lm::argmax(out.logits_at(ids.len() - 1)) as u32, t);
        ids.push(t);
    }
}
