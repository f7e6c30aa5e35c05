//! Trace capture: greedy-decode each specification and pair the model's
//! layer-averaged hidden state at every generated action with the facing
//! direction of the program state it corresponds to, at several offsets.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use karel::abstraction::abstract_trace;
use karel::codec::{decode_program, encode_prefix, encode_program};
use karel::{check_correct, retrace_alternative, Example, Program, Semantics, WorldState};
use lm::{greedy_decode, LMParams, LmError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Facing direction per offset and input: `labels[offset][input]`, with the
/// direction index (N=0, E=1, S=2, W=3) or `None` when the state does not
/// exist.
pub type Labels = Vec<Vec<Option<u8>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub example: usize,
    /// Actions emitted so far, counting this one (1-based).
    pub t: usize,
    pub state: Vec<f32>,
    pub labels: Labels,
    pub correct: bool,
}

/// One greedy completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub example: usize,
    /// Generated ids, END included when produced.
    pub tokens: Vec<u32>,
    pub well_formed: bool,
    pub correct: bool,
    /// Length of the decoded program (0 when malformed).
    pub length: usize,
    pub reference_length: usize,
    /// Sum of generated-token log-probabilities (nats).
    pub logprob: f64,
}

impl DecodeRecord {
    pub fn program(&self) -> Option<Program> {
        decode_program(&self.tokens).ok()
    }
}

/// Records and decodes for one checkpoint and split.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub step: usize,
    pub offsets: Vec<i32>,
    pub n_ios: usize,
    pub decodes: Vec<DecodeRecord>,
    pub records: Vec<TraceRecord>,
}

impl TraceSet {
    pub fn malformed(&self) -> usize {
        self.decodes.iter().filter(|d| !d.well_formed).count()
    }
}

/// Labels for a trace of a program of length `len`, step `t`.
pub fn labels_at(traces: &[Vec<karel::Direction>], t: usize, offsets: &[i32]) -> Labels {
    offsets
        .iter()
        .map(|&o| {
            traces
                .iter()
                .map(|dirs| {
                    let idx = t as i64 + o as i64;
                    (idx >= 0 && (idx as usize) < dirs.len()).then(|| dirs[idx as usize].index() as u8)
                })
                .collect()
        })
        .collect()
}

/// Facing directions along the trace of `program` on each input under `sem`.
pub fn direction_traces(program: &Program, inputs: &[WorldState], sem: Semantics) -> Vec<Vec<karel::Direction>> {
    let map = sem.map();
    inputs
        .iter()
        .map(|s| abstract_trace(&retrace_alternative(program, s, &map)))
        .collect()
}

pub fn spec_inputs(example: &Example) -> Vec<WorldState> {
    example
        .spec
        .iter()
        .map(|io| io.input.to_world().expect("spec inputs are valid worlds"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptureOptions {
    /// Average the embedding output in with the layer outputs.
    pub include_embedding: bool,
    /// When the completion is malformed, trace the reference program under
    /// teacher forcing instead of dropping the specification.
    pub reference_fallback: bool,
}

/// The program a decode's records were traced from.
pub fn traced_program(decode: &DecodeRecord, example: &Example) -> Program {
    if decode.well_formed {
        decode.program().expect("well-formed decodes parse")
    } else {
        example.reference.clone()
    }
}

/// Greedy completion of one specification, scored against it.
pub fn decode_example<T: lm::Scalar>(
    params: &LMParams<T>,
    example: &Example,
    index: usize,
    include_embedding: bool,
) -> Result<(DecodeRecord, Option<Program>, Vec<Vec<f32>>), LmError> {
    let prefix = encode_prefix(&example.spec);
    let dec = greedy_decode(params, &prefix, params.config.decode_cap, include_embedding)?;
    let program = if dec.finished { decode_program(&dec.tokens).ok() } else { None };
    let correct = program.as_ref().is_some_and(|p| check_correct(p, &example.spec));
    let record = DecodeRecord {
        example: index,
        tokens: dec.tokens,
        well_formed: program.is_some(),
        correct,
        length: program.as_ref().map_or(0, |p| p.len()),
        reference_length: example.reference.len(),
        logprob: dec.logprobs.iter().sum(),
    };
    Ok((record, program, dec.states))
}

/// Greedy completions of every example, in order.
pub fn decode_all<T: lm::Scalar>(params: &LMParams<T>, examples: &[Example]) -> Result<Vec<DecodeRecord>, LmError> {
    examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| decode_example(params, e, i, false).map(|d| d.0))
        .collect()
}

/// Decodes one example and builds its records.
pub fn capture_example<T: lm::Scalar>(
    params: &LMParams<T>,
    example: &Example,
    index: usize,
    step: usize,
    offsets: &[i32],
    opts: CaptureOptions,
) -> Result<(DecodeRecord, Vec<TraceRecord>), LmError> {
    let (record, program, dec_states) = decode_example(params, example, index, opts.include_embedding)?;
    let correct = record.correct;
    let (traced, states) = match &program {
        Some(p) => (p.clone(), dec_states),
        None if opts.reference_fallback => {
            let prefix = encode_prefix(&example.spec);
            let mut ids = prefix.clone();
            ids.extend(encode_program(&example.reference));
            let out = lm::forward(params, &ids)?;
            let states = (0..example.reference.len())
                .map(|i| out.layer_mean(prefix.len() + i, opts.include_embedding))
                .collect();
            (example.reference.clone(), states)
        }
        None => return Ok((record, Vec::new())),
    };
    let traces = direction_traces(&traced, &spec_inputs(example), Semantics::Original);
    let records = states
        .into_iter()
        .take(traced.len())
        .enumerate()
        .map(|(i, state)| TraceRecord {
            step,
            example: index,
            t: i + 1,
            state,
            labels: labels_at(&traces, i + 1, offsets),
            correct,
        })
        .collect();
    Ok((record, records))
}

/// Decodes every example (in parallel) and collects results in example order.
pub fn capture<T: lm::Scalar>(
    params: &LMParams<T>,
    examples: &[Example],
    step: usize,
    offsets: &[i32],
    opts: CaptureOptions,
) -> Result<TraceSet, LmError> {
    let parts: Vec<_> = examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| capture_example(params, e, i, step, offsets, opts))
        .collect::<Result<_, _>>()?;
    let mut decodes = Vec::with_capacity(parts.len());
    let mut records = Vec::new();
    for (d, r) in parts {
        decodes.push(d);
        records.extend(r);
    }
    Ok(TraceSet {
        step,
        offsets: offsets.to_vec(),
        n_ios: examples.first().map_or(0, |e| e.n_ios()),
        decodes,
        records,
    })
}

/// Labels of `set`'s records under another semantics, recomputed from the
/// decoded programs: `out[k]` belongs to `set.records[k]`.
pub fn relabel(set: &TraceSet, examples: &[Example], sem: Semantics) -> Vec<Labels> {
    let mut out = Vec::with_capacity(set.records.len());
    let mut cache: Option<(usize, Vec<Vec<karel::Direction>>)> = None;
    for r in &set.records {
        if cache.as_ref().map(|c| c.0) != Some(r.example) {
            let program = traced_program(&set.decodes[r.example], &examples[r.example]);
            let traces = direction_traces(&program, &spec_inputs(&examples[r.example]), sem);
            cache = Some((r.example, traces));
        }
        out.push(labels_at(&cache.as_ref().expect("cached").1, r.t, &set.offsets));
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<Vec<T>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Packed twin of a trace file, all little-endian:
/// magic `KLTRACE\0`, then `u32` width, `u32` offsets, `u32` inputs,
/// `u64` record count, then per record `u32` step, `u32` example, `u32` t,
/// `u8` correct, `width` × `f32` state, and `offsets·inputs` × `i8` labels
/// (-1 for a missing state).
pub const BINARY_MAGIC: &[u8; 8] = b"KLTRACE\0";

pub fn write_binary(path: &Path, records: &[TraceRecord], offsets: usize, n_ios: usize) -> std::io::Result<()> {
    let width = records.first().map_or(0, |r| r.state.len());
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BINARY_MAGIC)?;
    for x in [width as u32, offsets as u32, n_ios as u32] {
        w.write_all(&x.to_le_bytes())?;
    }
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        for x in [r.step as u32, r.example as u32, r.t as u32] {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&[r.correct as u8])?;
        for x in &r.state {
            w.write_all(&x.to_le_bytes())?;
        }
        for row in &r.labels {
            for l in row {
                w.write_all(&[l.map_or(-1i8, |d| d as i8) as u8])?;
            }
        }
    }
    w.flush()
}

pub fn read_binary(path: &Path) -> std::io::Result<Vec<TraceRecord>> {
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(bad("not a trace file"));
    }
    let mut u32s = || -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    };
    let (width, offsets, n_ios) = (u32s()? as usize, u32s()? as usize, u32s()? as usize);
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let rec_len = 13 + 4 * width + offsets * n_ios;
    let mut buf = vec![0u8; rec_len];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let u = |i: usize| u32::from_le_bytes([buf[i], buf[i + 1], buf[i + 2], buf[i + 3]]) as usize;
        let state = (0..width).map(|k| f32::from_le_bytes(buf[13 + 4 * k..17 + 4 * k].try_into().expect("4 bytes"))).collect();
        let lab = &buf[13 + 4 * width..];
        let labels = (0..offsets)
            .map(|o| {
                (0..n_ios)
                    .map(|i| {
                        let v = lab[o * n_ios + i] as i8;
                        (v >= 0).then_some(v as u8)
                    })
                    .collect()
            })
            .collect();
        out.push(TraceRecord {
            step: u(0),
            example: u(4),
            t: u(8),
            correct: buf[12] != 0,
            state,
            labels,
        });
    }
    Ok(out)
}
