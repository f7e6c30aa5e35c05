//! Checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `KLMCKPT\0` |
//! | 4 | format version (`u32`) |
//! | 8 | header length `h` (`u64`) |
//! | h | UTF-8 JSON [`CheckpointHeader`] |
//! | 4·n | parameters as `f32`, in layout order |
//! | 4·n | Adam first moments (only if `header.optimizer` is set) |
//! | 4·n | Adam second moments (likewise) |
//!
//! `n` is `header.layout.total`.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::LMConfig;
use crate::error::LmError;
use crate::optim::AdamW;
use crate::params::{LMParams, ParamLayout};

pub const MAGIC: &[u8; 8] = b"KLMCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Number of optimizer updates applied.
    pub step: usize,
    pub config: LMConfig,
    pub layout: ParamLayout,
    /// Optimizer scalars; moments follow the parameters when present.
    pub optimizer: Option<AdamW>,
    /// Seed of the batch stream; batches are a pure function of it and the
    /// step, so this is the whole data-order RNG state.
    pub data_seed: u64,
    /// Free-form provenance (e.g. a config hash).
    #[serde(default)]
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: LMParams<f32>,
}

fn write_f32s(w: &mut impl Write, xs: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_f32s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

impl Checkpoint {
    /// Writes atomically (temp file then rename).
    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            let header = serde_json::to_vec(&self.header)?;
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            w.write_all(&(header.len() as u64).to_le_bytes())?;
            w.write_all(&header)?;
            write_f32s(&mut w, &self.params.data)?;
            if let Some(opt) = &self.header.optimizer {
                write_f32s(&mut w, &opt.m)?;
                write_f32s(&mut w, &opt.v)?;
            }
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, LmError> {
        let bad = |msg: &str| LmError::Checkpoint {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        if u32::from_le_bytes(v) != VERSION {
            return Err(bad("unsupported version"));
        }
        let mut n = [0u8; 8];
        r.read_exact(&mut n)?;
        let hlen = u64::from_le_bytes(n) as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)?;
        let mut header: CheckpointHeader = serde_json::from_slice(&hbuf)?;
        if ParamLayout::new(&header.config) != header.layout {
            return Err(bad("layout does not match config"));
        }
        let total = header.layout.total;
        let data = read_f32s(&mut r, total)?;
        if let Some(opt) = header.optimizer.as_mut() {
            opt.m = read_f32s(&mut r, total)?;
            opt.v = read_f32s(&mut r, total)?;
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let params = LMParams {
            config: header.config.clone(),
            layout: header.layout.clone(),
            data,
        };
        if !params.all_finite() {
            return Err(bad("non-finite parameters"));
        }
        Ok(Checkpoint { header, params })
    }
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("ckpt_{step:06}.bin"))
}

/// Steps of all checkpoints in `dir`, ascending.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<usize>, LmError> {
    let mut steps = Vec::new();
    if !dir.exists() {
        return Ok(steps);
    }
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(s) = name.strip_prefix("ckpt_").and_then(|s| s.strip_suffix(".bin")) {
            if let Ok(step) = s.parse() {
                steps.push(step);
            }
        }
    }
    steps.sort_unstable();
    Ok(steps)
}
