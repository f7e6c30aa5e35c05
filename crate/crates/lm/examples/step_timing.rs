//! Times training steps on random sequences: `cargo run --release -p lm --example step_timing [seq_len] [steps]`.

use std::time::Instant;

use lm::{LMConfig, Trainer};

fn main() {
    let mut args = std::env::args().skip(1);
    let len: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(230);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let cfg = LMConfig::default();
    let corpus: Vec<Vec<u32>> = (0..64).map(|i| (0..len).map(|j| ((i * 7 + j * 3) % 25) as u32).collect()).collect();
    let mut tr = Trainer::new(&cfg).expect("valid config");
    tr.step_corpus(&corpus).expect("step");
    let start = Instant::now();
    for _ in 0..steps {
        tr.step_corpus(&corpus).expect("step");
    }
    let per = start.elapsed().as_secs_f64() / steps as f64;
    println!("{} params, {len} tokens x {}: {per:.3} s/step", tr.params.num_params(), cfg.batch_size);
}
