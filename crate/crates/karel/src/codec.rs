//! Token vocabulary and the textual form of examples.
//!
//! An example is encoded as, for each input-output pair,
//! `IN <grid> OUT <grid>`, followed by `RUN <program> END`. Grids are scanned
//! in row order with one token per cell.
//!
//! Token ids are assigned category by category: the 16 grid tokens first
//! (`EMPTY`, `WALL`, `M1`..`M10`, `R_N`, `R_E`, `R_S`, `R_W`), then the five
//! action tokens in [`Op`] order, then `IN`, `OUT`, `RUN`, `END`, `PAD`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetConfig, Example, Split};
use crate::error::{CodecError, CorpusError};
use crate::observation::{GridToken, IoPair, Observation};
use crate::program::Program;
use crate::world::{Direction, Op};

/// 16 grid tokens, 5 action tokens and 5 structural tokens.
pub const VOCAB_SIZE: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Grid(GridToken),
    Action(Op),
    In,
    Out,
    Run,
    End,
    Pad,
}

impl Token {
    pub fn all() -> Vec<Token> {
        let mut v = Vec::with_capacity(VOCAB_SIZE);
        v.push(Token::Grid(GridToken::Empty));
        v.push(Token::Grid(GridToken::Obstacle));
        for k in 1..=10 {
            v.push(Token::Grid(GridToken::Markers(k)));
        }
        for d in Direction::ALL {
            v.push(Token::Grid(GridToken::Robot(d)));
        }
        for op in Op::ALL {
            v.push(Token::Action(op));
        }
        v.extend([Token::In, Token::Out, Token::Run, Token::End, Token::Pad]);
        v
    }

    pub fn id(self) -> u32 {
        match self {
            Token::Grid(GridToken::Empty) => 0,
            Token::Grid(GridToken::Obstacle) => 1,
            Token::Grid(GridToken::Markers(k)) => 1 + k as u32,
            Token::Grid(GridToken::Robot(d)) => 12 + d.index() as u32,
            Token::Action(op) => 16 + op.index() as u32,
            Token::In => IN_ID,
            Token::Out => OUT_ID,
            Token::Run => RUN_ID,
            Token::End => END_ID,
            Token::Pad => PAD_ID,
        }
    }

    pub fn from_id(id: u32) -> Result<Token, CodecError> {
        Ok(match id {
            0 => Token::Grid(GridToken::Empty),
            1 => Token::Grid(GridToken::Obstacle),
            2..=11 => Token::Grid(GridToken::Markers(id as u8 - 1)),
            12..=15 => Token::Grid(GridToken::Robot(Direction::ALL[id as usize - 12])),
            16..=20 => Token::Action(Op::ALL[id as usize - 16]),
            IN_ID => Token::In,
            OUT_ID => Token::Out,
            RUN_ID => Token::Run,
            END_ID => Token::End,
            PAD_ID => Token::Pad,
            _ => return Err(CodecError::UnknownId(id)),
        })
    }

    pub fn text(self) -> String {
        match self {
            Token::Grid(GridToken::Empty) => "EMPTY".into(),
            Token::Grid(GridToken::Obstacle) => "WALL".into(),
            Token::Grid(GridToken::Markers(k)) => format!("M{k}"),
            Token::Grid(GridToken::Robot(d)) => match d {
                Direction::North => "R_N",
                Direction::East => "R_E",
                Direction::South => "R_S",
                Direction::West => "R_W",
            }
            .into(),
            Token::Action(op) => op.name().into(),
            Token::In => "IN".into(),
            Token::Out => "OUT".into(),
            Token::Run => "RUN".into(),
            Token::End => "END".into(),
            Token::Pad => "PAD".into(),
        }
    }

    pub fn is_grid(self) -> bool {
        matches!(self, Token::Grid(_))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

pub const IN_ID: u32 = 21;
pub const OUT_ID: u32 = 22;
pub const RUN_ID: u32 = 23;
pub const END_ID: u32 = 24;
pub const PAD_ID: u32 = 25;

/// Bijection between token strings and contiguous ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<Token>,
    by_text: HashMap<String, u32>,
}

pub fn build_vocab() -> Vocab {
    let tokens = Token::all();
    let by_text = tokens.iter().map(|t| (t.text(), t.id())).collect();
    Vocab { tokens, by_text }
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, text: &str) -> Result<u32, CodecError> {
        self.by_text
            .get(text)
            .copied()
            .ok_or_else(|| CodecError::UnknownToken(text.to_string()))
    }

    pub fn text(&self, id: u32) -> Result<String, CodecError> {
        self.tokens
            .get(id as usize)
            .map(|t| t.text())
            .ok_or(CodecError::UnknownId(id))
    }

    /// Token string to id, sorted by token string.
    pub fn to_map(&self) -> BTreeMap<String, u32> {
        self.by_text.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(&self.to_map()).expect("string map serializes");
        std::fs::write(path, json + "\n")
    }

    pub fn read_json(path: &Path) -> Result<Vocab, CorpusError> {
        let map: BTreeMap<String, u32> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let vocab = build_vocab();
        if map != vocab.to_map() {
            return Err(CorpusError::Line {
                line: 0,
                source: CodecError::Malformed("vocabulary file does not match the built-in vocabulary".into()),
            });
        }
        Ok(vocab)
    }
}

/// Token ids of one encoded example.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
}

/// `n_ios * (2 * rows * cols + 2) + program_len + 2`.
pub fn encoded_len(rows: usize, cols: usize, n_ios: usize, program_len: usize) -> usize {
    n_ios * (2 * rows * cols + 2) + program_len + 2
}

/// Length of the specification prefix including the trailing `RUN`.
pub fn prefix_len(rows: usize, cols: usize, n_ios: usize) -> usize {
    n_ios * (2 * rows * cols + 2) + 1
}

fn push_grid(ids: &mut Vec<u32>, obs: &Observation) {
    ids.extend(obs.tokens().iter().map(|&t| Token::Grid(t).id()));
}

/// The specification followed by `RUN`: the prompt for completion.
pub fn encode_prefix(spec: &[IoPair]) -> Vec<u32> {
    let mut ids = Vec::new();
    for pair in spec {
        ids.push(IN_ID);
        push_grid(&mut ids, &pair.input);
        ids.push(OUT_ID);
        push_grid(&mut ids, &pair.output);
    }
    ids.push(RUN_ID);
    ids
}

pub fn encode_program(program: &Program) -> Vec<u32> {
    let mut ids: Vec<u32> = program.ops().iter().map(|&op| Token::Action(op).id()).collect();
    ids.push(END_ID);
    ids
}

pub fn encode_example(e: &Example) -> EncodedExample {
    let mut ids = encode_prefix(&e.spec);
    ids.extend(encode_program(&e.reference));
    EncodedExample { ids }
}

/// Parses generated tokens following `RUN`.
///
/// Accepts exactly `(action)* END`; anything after `END` is ignored.
pub fn decode_program(ids: &[u32]) -> Result<Program, CodecError> {
    let mut ops = Vec::new();
    for &id in ids {
        match Token::from_id(id)? {
            Token::Action(op) => ops.push(op),
            Token::End => return Ok(Program::new(ops)),
            other => return Err(CodecError::Malformed(format!("`{other}` in program position"))),
        }
    }
    Err(CodecError::Malformed("program is not terminated by END".into()))
}

fn decode_grid(ids: &[u32], rows: usize, cols: usize) -> Result<Observation, CodecError> {
    let tokens = ids
        .iter()
        .map(|&id| match Token::from_id(id)? {
            Token::Grid(g) => Ok(g),
            other => Err(CodecError::Malformed(format!("`{other}` in grid position"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Observation::new(rows, cols, tokens)?)
}

pub fn decode_example(ids: &[u32], rows: usize, cols: usize, n_ios: usize) -> Result<Example, CodecError> {
    let cells = rows * cols;
    let spec_len = n_ios * (2 * cells + 2);
    if ids.len() < spec_len + 2 {
        return Err(CodecError::Malformed(format!("example has only {} tokens", ids.len())));
    }
    let mut spec = Vec::with_capacity(n_ios);
    let mut pos = 0;
    for _ in 0..n_ios {
        if ids[pos] != IN_ID {
            return Err(CodecError::Malformed(format!("expected IN at position {pos}")));
        }
        let input = decode_grid(&ids[pos + 1..pos + 1 + cells], rows, cols)?;
        pos += 1 + cells;
        if ids[pos] != OUT_ID {
            return Err(CodecError::Malformed(format!("expected OUT at position {pos}")));
        }
        let output = decode_grid(&ids[pos + 1..pos + 1 + cells], rows, cols)?;
        pos += 1 + cells;
        spec.push(IoPair { input, output });
    }
    if ids[pos] != RUN_ID {
        return Err(CodecError::Malformed(format!("expected RUN at position {pos}")));
    }
    let program_ids = &ids[pos + 1..];
    let reference = decode_program(program_ids)?;
    if program_ids.len() != reference.len() + 1 {
        return Err(CodecError::Malformed("trailing tokens after END".into()));
    }
    Ok(Example { spec, reference })
}

pub fn ids_to_text(ids: &[u32]) -> Result<String, CodecError> {
    let words = ids
        .iter()
        .map(|&id| Token::from_id(id).map(|t| t.text()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(words.join(" "))
}

pub fn text_to_ids(vocab: &Vocab, line: &str) -> Result<Vec<u32>, CodecError> {
    line.split_whitespace().map(|w| vocab.id(w)).collect()
}

/// Header record on the first line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub split: Split,
    pub seed: u64,
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub n_ios: usize,
    pub dataset: DatasetConfig,
    /// Hash of the configuration that produced the file.
    pub config_hash: String,
}

pub const CORPUS_FORMAT: &str = "karel-corpus/1";

/// Writes a JSON header line followed by one whitespace-separated example per line.
pub fn write_corpus(path: &Path, header: &CorpusHeader, examples: &[Example]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", serde_json::to_string(header)?)?;
    for e in examples {
        let line = ids_to_text(&encode_example(e).ids).expect("encoded ids are in vocabulary");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus_header(path: &Path) -> Result<CorpusHeader, CorpusError> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    if first.trim().is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(serde_json::from_str(first.trim())?)
}

pub fn read_corpus(path: &Path) -> Result<(CorpusHeader, Vec<Example>), CorpusError> {
    let vocab = build_vocab();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header: CorpusHeader = match lines.next() {
        Some(line) => serde_json::from_str(line?.trim())?,
        None => return Err(CorpusError::Empty),
    };
    let mut examples = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |source| CorpusError::Line { line: i + 2, source };
        let ids = text_to_ids(&vocab, &line).map_err(err)?;
        examples.push(decode_example(&ids, header.rows, header.cols, header.n_ios).map_err(err)?);
    }
    Ok((header, examples))
}
