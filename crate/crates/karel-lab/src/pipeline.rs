//! Pipeline stages over a run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use experiment::analysis::{generated_perplexity, generative_accuracy, perplexity_breakdown, GenerativeAccuracy};
use experiment::content::{chance_rows, fit_variant, future_rows, ContentRow, FutureRow, Traces};
use experiment::report::{length_row, regressions, write_csv, LengthRow, PerplexityRow, RunReport};
use experiment::tracer::{self, DecodeRecord, TraceRecord, TraceSet};
use karel::codec::{build_vocab, encode_example, read_corpus, write_corpus, CorpusHeader, CORPUS_FORMAT};
use karel::{build_dataset, Example, Semantics, Split};
use lm::{checkpoint_path, Checkpoint, LMParams};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, StageHashes};
use crate::stage::{self, Plan, Policy};

/// A resolved config bound to its run directory.
pub struct Run {
    pub cfg: RunConfig,
    pub hashes: StageHashes,
    pub policy: Policy,
}

impl Run {
    pub fn new(cfg: RunConfig, policy: Policy) -> Result<Run> {
        let cfg = cfg.resolve()?;
        let hashes = cfg.hashes();
        Ok(Run { cfg, hashes, policy })
    }

    pub fn root(&self) -> &Path {
        &self.cfg.out_dir
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.cfg.out_dir.join(stage)
    }

    pub fn corpus_path(&self, split: Split) -> PathBuf {
        self.dir("data").join(format!("{}.corpus", split.name()))
    }

    /// Reads a split written by `gen-data`, checking its recorded hash.
    pub fn load_split(&self, split: Split) -> Result<Vec<Example>> {
        stage::require(&self.dir("data"), "gen-data", &self.hashes.data, self.policy)?;
        let path = self.corpus_path(split);
        let (header, examples) = read_corpus(&path).with_context(|| format!("reading {}", path.display()))?;
        if header.config_hash != self.hashes.data && !self.policy.allow_stale {
            anyhow::bail!("{} was written under a different data config", path.display());
        }
        Ok(examples)
    }
}

pub fn gen_data(run: &Run) -> Result<()> {
    let dir = run.dir("data");
    if stage::plan(&dir, "gen-data", &run.hashes.data, run.policy)? == Plan::Skip {
        info!("gen-data: up to date");
        return Ok(());
    }
    let d = &run.cfg.data;
    let ds_cfg = d.dataset();
    build_vocab().write_json(&dir.join("vocab.json"))?;
    for (split, n, seed) in [
        (Split::Train, d.train_size, run.cfg.train_seed()),
        (Split::Test, d.test_size, run.cfg.test_seed()),
    ] {
        let t = Instant::now();
        let ds = build_dataset(n, &ds_cfg, seed, split)?;
        let header = CorpusHeader {
            format: CORPUS_FORMAT.into(),
            split,
            seed,
            count: n,
            rows: d.rows,
            cols: d.cols,
            n_ios: d.n_ios,
            dataset: ds_cfg.clone(),
            config_hash: run.hashes.data.clone(),
        };
        write_corpus(&run.corpus_path(split), &header, &ds.examples)?;
        info!("gen-data: {} examples for {} in {:.1?}", n, split.name(), t.elapsed());
    }
    stage::finish(&dir, "gen-data", &run.hashes.data)
}

pub fn encode_all(examples: &[Example]) -> Vec<Vec<u32>> {
    examples.iter().map(|e| encode_example(e).ids).collect()
}

pub fn train_lm(run: &Run) -> Result<()> {
    let dir = run.dir("lm");
    if stage::plan(&dir, "train-lm", &run.hashes.lm, run.policy)? == Plan::Skip {
        info!("train-lm: up to date");
        return Ok(());
    }
    let corpus = encode_all(&run.load_split(Split::Train)?);
    let cfg = &run.cfg.lm;
    let start = Instant::now();
    let mut window = Vec::new();
    lm::train_to_dir(cfg, &corpus, &dir, &run.hashes.lm, |s| {
        window.push(s.loss);
        if (s.step + 1) % 100 == 0 || s.step + 1 == cfg.total_steps {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            info!(
                "train-lm: step {}/{} loss {:.4} lr {:.2e} |g| {:.3} ({:.0?})",
                s.step + 1,
                cfg.total_steps,
                mean,
                s.lr,
                s.grad_norm,
                start.elapsed()
            );
        }
    })?;
    stage::finish(&dir, "train-lm", &run.hashes.lm)
}

/// Checkpoint steps present for this run, ascending.
pub fn checkpoint_steps(run: &Run) -> Result<Vec<usize>> {
    Ok(lm::list_checkpoints(&run.dir("lm"))?)
}


/// Parameters of the checkpoint at `step`, checked against the lm hash.
pub fn load_params(run: &Run, step: usize) -> Result<LMParams<f32>> {
    let path = checkpoint_path(&run.dir("lm"), step);
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if ckpt.header.tag != run.hashes.lm && !run.policy.allow_stale {
        bail!("{} was trained under a different config", path.display());
    }
    Ok(ckpt.params)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    tracer::write_jsonl(&tmp, items)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn eval_path(run: &Run, step: usize) -> PathBuf {
    run.dir("eval").join(format!("decodes_{step:06}.jsonl"))
}

fn require_lm(run: &Run) -> Result<Vec<usize>> {
    stage::require(&run.dir("lm"), "train-lm", &run.hashes.lm, run.policy)?;
    checkpoint_steps(run)
}

pub fn eval_gen(run: &Run) -> Result<()> {
    let dir = run.dir("eval");
    if stage::plan(&dir, "eval-gen", &run.hashes.eval, run.policy)? == Plan::Skip {
        info!("eval-gen: up to date");
        return Ok(());
    }
    let steps = require_lm(run)?;
    let test = run.load_split(Split::Test)?;
    let mut gens = Vec::new();
    for &step in &steps {
        let path = eval_path(run, step);
        if !path.exists() {
            let t = Instant::now();
            let decodes = tracer::decode_all(&load_params(run, step)?, &test)?;
            write_jsonl(&path, &decodes)?;
            info!("eval-gen: step {step} decoded {} specs in {:.1?}", test.len(), t.elapsed());
        }
        let g = generative_accuracy(step, &tracer::read_jsonl::<DecodeRecord>(&path)?);
        info!("eval-gen: step {step} accuracy {:.4} ({} malformed)", g.accuracy, g.malformed);
        gens.push(g);
    }
    write_json(&dir.join("generative_accuracy.json"), &gens)?;
    let rows: Vec<Vec<String>> = gens
        .iter()
        .map(|g| vec![g.step.to_string(), g.accuracy.to_string(), g.correct.to_string(), g.count.to_string(), g.malformed.to_string()])
        .collect();
    let header: Vec<String> = ["step", "accuracy", "correct", "count", "malformed"].map(String::from).to_vec();
    write_csv(&dir.join("generative_accuracy.csv"), &header, &rows, &run.hashes.eval)?;
    stage::finish(&dir, "eval-gen", &run.hashes.eval)
}

fn capture_steps(run: &Run, available: &[usize]) -> Result<Vec<usize>> {
    let wanted = &run.cfg.capture.steps;
    if wanted.is_empty() {
        return Ok(available.to_vec());
    }
    for s in wanted {
        if !available.contains(s) {
            bail!("capture.steps lists {s}, which has no checkpoint");
        }
    }
    Ok(wanted.clone())
}

fn trace_path(run: &Run, split: Split, step: usize, kind: &str) -> PathBuf {
    run.dir("capture").join(format!("{}_{step:06}.{kind}", split.name()))
}

/// The examples each capture split is drawn from.
fn capture_examples(run: &Run) -> Result<[(Split, Vec<Example>); 2]> {
    let c = &run.cfg.capture;
    let mut train = run.load_split(Split::Train)?;
    train.truncate(c.train_specs);
    let mut test = run.load_split(Split::Test)?;
    if c.test_specs > 0 {
        test.truncate(c.test_specs);
    }
    Ok([(Split::Train, train), (Split::Test, test)])
}

pub fn capture(run: &Run) -> Result<()> {
    let dir = run.dir("capture");
    if stage::plan(&dir, "capture", &run.hashes.capture, run.policy)? == Plan::Skip {
        info!("capture: up to date");
        return Ok(());
    }
    let steps = capture_steps(run, &require_lm(run)?)?;
    let splits = capture_examples(run)?;
    for &step in &steps {
        let params = load_params(run, step)?;
        for (split, examples) in &splits {
            let traces = trace_path(run, *split, step, "traces.jsonl");
            if traces.exists() {
                continue;
            }
            let t = Instant::now();
            let set = tracer::capture(&params, examples, step, &run.cfg.offsets, run.cfg.capture.options())?;
            write_jsonl(&trace_path(run, *split, step, "decodes.jsonl"), &set.decodes)?;
            if run.cfg.capture.binary_twin {
                tracer::write_binary(
                    &trace_path(run, *split, step, "traces.bin"),
                    &set.records,
                    run.cfg.offsets.len(),
                    run.cfg.data.n_ios,
                )?;
            }
            write_jsonl(&traces, &set.records)?;
            info!(
                "capture: step {step} {}: {} records from {} specs ({} malformed) in {:.1?}",
                split.name(),
                set.records.len(),
                examples.len(),
                set.malformed(),
                t.elapsed()
            );
        }
    }
    stage::finish(&dir, "capture", &run.hashes.capture)
}

fn load_traces(run: &Run, split: Split, step: usize) -> Result<TraceSet> {
    Ok(TraceSet {
        step,
        offsets: run.cfg.offsets.clone(),
        n_ios: run.cfg.data.n_ios,
        decodes: tracer::read_jsonl(&trace_path(run, split, step, "decodes.jsonl"))?,
        records: tracer::read_jsonl::<TraceRecord>(&trace_path(run, split, step, "traces.jsonl"))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStep {
    pub content: Vec<ContentRow>,
    pub chance: Vec<ContentRow>,
    pub future: Vec<FutureRow>,
}

fn content_csv(path: &Path, rows: &[ContentRow], hash: &str) -> Result<()> {
    let header: Vec<String> = ["step", "offset", "variant", "accuracy", "n_records", "depth"].map(String::from).to_vec();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let depth: BTreeMap<String, f64> = r.by_depth.iter().map(|(d, (a, _))| (d.to_string(), *a)).collect();
            Ok(vec![
                r.step.to_string(),
                r.offset.to_string(),
                r.variant.name().to_string(),
                r.accuracy.map_or_else(String::new, |a| a.to_string()),
                r.n_records.to_string(),
                serde_json::to_string(&depth)?,
            ])
        })
        .collect::<Result<_>>()?;
    write_csv(path, &header, &body, hash)?;
    Ok(())
}

/// Runs `cell` for every captured step, caching one JSON file per step so
/// an interrupted stage resumes where it stopped.
fn per_step<T, F>(run: &Run, stage_dir: &Path, f: F) -> Result<Vec<T>>
where
    T: Serialize + DeserializeOwned + Send,
    F: Fn(usize, &[(Split, Vec<Example>); 2]) -> Result<T> + Sync,
{
    stage::require(&run.dir("capture"), "capture", &run.hashes.capture, run.policy)?;
    let steps = capture_steps(run, &checkpoint_steps(run)?)?;
    let splits = capture_examples(run)?;
    steps
        .par_iter()
        .map(|&step| {
            let path = stage_dir.join(format!("step_{step:06}.json"));
            if path.exists() {
                return read_json(&path);
            }
            let t = Instant::now();
            let out = f(step, &splits)?;
            write_json(&path, &out)?;
            info!("{}: step {step} done in {:.1?}", stage_dir.display(), t.elapsed());
            Ok(out)
        })
        .collect()
}

pub fn train_probe(run: &Run) -> Result<()> {
    let dir = run.dir("probe");
    if stage::plan(&dir, "train-probe", &run.hashes.probe, run.policy)? == Plan::Skip {
        info!("train-probe: up to date");
        return Ok(());
    }
    let cfg = &run.cfg.probe;
    let results = per_step(run, &dir, |step, splits| {
        let (tr, te) = (load_traces(run, Split::Train, step)?, load_traces(run, Split::Test, step)?);
        let train = Traces { set: &tr, examples: &splits[0].1 };
        let test = Traces { set: &te, examples: &splits[1].1 };
        let (content, fits) = fit_variant(train, test, Semantics::Original, cfg);
        Ok(ProbeStep {
            content,
            chance: chance_rows(train, test, cfg),
            future: future_rows(test, &fits),
        })
    })?;
    let all = |f: fn(&ProbeStep) -> &Vec<ContentRow>| results.iter().flat_map(f).cloned().collect::<Vec<_>>();
    let (content, chance) = (all(|r| &r.content), all(|r| &r.chance));
    let future: Vec<FutureRow> = results.iter().flat_map(|r| r.future.clone()).collect();
    for r in &content {
        info!("train-probe: step {} offset {:+} content {:?}", r.step, r.offset, r.accuracy);
    }
    content_csv(&dir.join("results.csv"), &content, &run.hashes.probe)?;
    content_csv(&dir.join("chance.csv"), &chance, &run.hashes.probe)?;
    write_json(&dir.join("content.json"), &content)?;
    write_json(&dir.join("chance.json"), &chance)?;
    write_json(&dir.join("future.json"), &future)?;
    stage::finish(&dir, "train-probe", &run.hashes.probe)
}

pub fn intervene(run: &Run) -> Result<()> {
    let dir = run.dir("intervene");
    if stage::plan(&dir, "intervene", &run.hashes.intervene, run.policy)? == Plan::Skip {
        info!("intervene: up to date");
        return Ok(());
    }
    stage::require(&run.dir("probe"), "train-probe", &run.hashes.probe, run.policy)?;
    let cfg = &run.cfg.probe;
    let results: Vec<Vec<ContentRow>> = per_step(run, &dir, |step, splits| {
        let (tr, te) = (load_traces(run, Split::Train, step)?, load_traces(run, Split::Test, step)?);
        let train = Traces { set: &tr, examples: &splits[0].1 };
        let test = Traces { set: &te, examples: &splits[1].1 };
        Ok(run.cfg.interventions.iter().flat_map(|&v| fit_variant(train, test, v, cfg).0).collect())
    })?;
    let content: Vec<ContentRow> = results.into_iter().flatten().collect();
    content_csv(&dir.join("results.csv"), &content, &run.hashes.intervene)?;
    write_json(&dir.join("content.json"), &content)?;
    stage::finish(&dir, "intervene", &run.hashes.intervene)
}

/// Fixed, seeded subsample of the training split.
fn train_subsample(run: &Run, train: &[Example]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(run.cfg.analysis.seed));
    idx.truncate(run.cfg.analysis.perplexity_train_subsample);
    idx.sort_unstable();
    idx
}

pub fn analyze(run: &Run) -> Result<()> {
    let dir = run.dir("analyze");
    if stage::plan(&dir, "analyze", &run.hashes.analyze, run.policy)? == Plan::Skip {
        info!("analyze: up to date");
        return Ok(());
    }
    stage::require(&run.dir("eval"), "eval-gen", &run.hashes.eval, run.policy)?;
    let available = checkpoint_steps(run)?;
    let steps = match &run.cfg.analysis.perplexity_steps {
        s if s.is_empty() => available.clone(),
        s => s.clone(),
    };
    let d = &run.cfg.data;
    let train = run.load_split(Split::Train)?;
    let sub: Vec<Example> = train_subsample(run, &train).into_iter().map(|i| train[i].clone()).collect();
    drop(train);
    let test = run.load_split(Split::Test)?;
    let (train_ids, test_ids) = (encode_all(&sub), encode_all(&test));
    let mut ppl = Vec::new();
    for &step in &steps {
        let path = dir.join(format!("perplexity_{step:06}.json"));
        if !path.exists() {
            let t = Instant::now();
            let params = load_params(run, step)?;
            let decodes: Vec<DecodeRecord> = tracer::read_jsonl(&eval_path(run, step))?;
            let rows = vec![
                PerplexityRow {
                    step,
                    split: "train".into(),
                    breakdown: perplexity_breakdown(&params, &train_ids, d.rows, d.cols, d.n_ios)?,
                    generated: None,
                },
                PerplexityRow {
                    step,
                    split: "test".into(),
                    breakdown: perplexity_breakdown(&params, &test_ids, d.rows, d.cols, d.n_ios)?,
                    generated: generated_perplexity(&decodes),
                },
            ];
            write_json(&path, &rows)?;
            info!("analyze: perplexity at step {step} in {:.1?}", t.elapsed());
        }
        ppl.extend(read_json::<Vec<PerplexityRow>>(&path)?);
    }
    let reference: Vec<usize> = sub.iter().map(|e| e.reference.len()).collect();
    let lengths: Vec<LengthRow> = available
        .par_iter()
        .map(|&step| Ok(length_row(step, &reference, &tracer::read_jsonl(&eval_path(run, step))?, &run.cfg.analysis)))
        .collect::<Result<_>>()?;
    write_json(&dir.join("perplexity.json"), &ppl)?;
    write_json(&dir.join("lengths.json"), &lengths)?;
    stage::finish(&dir, "analyze", &run.hashes.analyze)
}

/// Assembles the report from saved stage outputs. Pure: rerunning on the
/// same files reproduces every byte.
pub fn build_report(run: &Run) -> Result<RunReport> {
    let (cfgh, p) = (&run.hashes, run.policy);
    let mut missing = Vec::new();
    for (dir, stage, hash) in [
        ("eval", "eval-gen", &cfgh.eval),
        ("probe", "train-probe", &cfgh.probe),
        ("intervene", "intervene", &cfgh.intervene),
        ("analyze", "analyze", &cfgh.analyze),
    ] {
        if let Err(e) = stage::require(&run.dir(dir), stage, hash, p) {
            missing.push(e.to_string());
        }
    }
    if !missing.is_empty() {
        bail!("cannot build the report:\n  {}", missing.join("\n  "));
    }
    let gens: Vec<GenerativeAccuracy> = read_json(&run.dir("eval").join("generative_accuracy.json"))?;
    let mut content: Vec<ContentRow> = read_json(&run.dir("probe").join("content.json"))?;
    content.extend(read_json::<Vec<ContentRow>>(&run.dir("intervene").join("content.json"))?);
    let chance: Vec<ContentRow> = read_json(&run.dir("probe").join("chance.json"))?;
    let future: Vec<FutureRow> = read_json(&run.dir("probe").join("future.json"))?;
    let lengths: Vec<LengthRow> = read_json(&run.dir("analyze").join("lengths.json"))?;
    let perplexity: Vec<PerplexityRow> = read_json(&run.dir("analyze").join("perplexity.json"))?;
    let mut skipped = Vec::new();
    for r in content.iter().chain(&chance).filter(|r| r.accuracy.is_none()) {
        skipped.push(format!("content step {} offset {} {}: no labelled records", r.step, r.offset, r.variant.name()));
    }
    let regs = regressions(&gens, &content);
    for r in regs.iter().filter(|r| r.result.is_none()) {
        skipped.push(format!(
            "regression offset {} {}: {}",
            r.offset,
            r.variant.name(),
            r.note.clone().unwrap_or_default()
        ));
    }
    let c = &run.cfg;
    let seeds = BTreeMap::from([
        ("master".to_string(), c.seed),
        ("data/train".to_string(), c.train_seed()),
        ("data/test".to_string(), c.test_seed()),
        ("lm".to_string(), c.lm.seed),
        ("probe".to_string(), c.probe.seed),
        ("analysis".to_string(), c.analysis.seed),
    ]);
    Ok(RunReport {
        config_hash: cfgh.analyze.clone(),
        seeds,
        checkpoints: gens.iter().map(|g| g.step).collect(),
        generative_accuracy: gens,
        content,
        chance,
        future,
        lengths,
        perplexity,
        regressions: regs,
        skipped,
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config_hash: &'a str,
    stage_hashes: &'a StageHashes,
    seeds: &'a BTreeMap<String, u64>,
    files: BTreeMap<String, String>,
}

pub fn report(run: &Run) -> Result<()> {
    let report = build_report(run)?;
    let dir = run.dir("report");
    fs::create_dir_all(&dir)?;
    let written = report.write(&dir)?;
    let mut files = BTreeMap::new();
    for path in &written {
        let name = path.file_name().expect("file").to_string_lossy().into_owned();
        files.insert(name, stage::file_sha256(path)?);
    }
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            config_hash: &report.config_hash,
            stage_hashes: &run.hashes,
            seeds: &report.seeds,
            files,
        },
    )?;
    info!("report: wrote {} files to {}", written.len() + 1, dir.display());
    Ok(())
}

pub fn all(run: &Run) -> Result<()> {
    gen_data(run)?;
    train_lm(run)?;
    eval_gen(run)?;
    capture(run)?;
    train_probe(run)?;
    intervene(run)?;
    analyze(run)?;
    report(run)
}
