//! Stage bookkeeping: every stage directory carries a `stage.json` naming the
//! config hash its contents were produced under.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const STAGE_FILE: &str = "stage.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub config_hash: String,
    /// Set once the stage finished.
    pub complete: bool,
    /// sha256 of each output file, relative to the stage directory.
    pub files: BTreeMap<String, String>,
}

/// What a stage should do given what is on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plan {
    /// Outputs exist for this exact hash.
    Skip,
    /// Nothing (or a partial run for this hash) is there; run or resume.
    Run,
}

/// Behaviour when the stage already holds outputs from another config.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Policy {
    /// Delete mismatched outputs and rebuild.
    pub force: bool,
    /// Accept upstream outputs whose hash differs from the current config.
    pub allow_stale: bool,
}

pub fn read_record(dir: &Path) -> Result<Option<StageRecord>> {
    let path = dir.join(STAGE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}

/// Decides whether `stage` in `dir` must run for `hash`, clearing stale
/// outputs when forced.
pub fn plan(dir: &Path, stage: &str, hash: &str, policy: Policy) -> Result<Plan> {
    match read_record(dir)? {
        Some(r) if r.config_hash == hash && r.complete => Ok(Plan::Skip),
        Some(r) if r.config_hash == hash => Ok(Plan::Run),
        Some(r) => {
            if !policy.force {
                bail!(
                    "{} holds {stage} outputs for config {} but the current config hashes to {}; \
                     rerun with --force to rebuild or use a different out_dir",
                    dir.display(),
                    short(&r.config_hash),
                    short(hash)
                );
            }
            fs::remove_dir_all(dir)?;
            begin(dir, stage, hash)?;
            Ok(Plan::Run)
        }
        None => {
            if dir.exists() && fs::read_dir(dir)?.next().is_some() {
                if !policy.force {
                    bail!("{} is not empty and has no {STAGE_FILE}; rerun with --force", dir.display());
                }
                fs::remove_dir_all(dir)?;
            }
            begin(dir, stage, hash)?;
            Ok(Plan::Run)
        }
    }
}

fn begin(dir: &Path, stage: &str, hash: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_record(
        dir,
        &StageRecord {
            stage: stage.into(),
            config_hash: hash.into(),
            complete: false,
            files: BTreeMap::new(),
        },
    )
}

fn write_record(dir: &Path, r: &StageRecord) -> Result<()> {
    let mut text = serde_json::to_string_pretty(r)?;
    text.push('\n');
    fs::write(dir.join(STAGE_FILE), text)?;
    Ok(())
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Marks the stage complete, fingerprinting every regular file under `dir`.
pub fn finish(dir: &Path, stage: &str, hash: &str) -> Result<()> {
    let mut files = BTreeMap::new();
    for path in walk(dir)? {
        let rel = path.strip_prefix(dir).expect("under dir").to_string_lossy().replace('\\', "/");
        if rel != STAGE_FILE {
            files.insert(rel, file_sha256(&path)?);
        }
    }
    write_record(
        dir,
        &StageRecord {
            stage: stage.into(),
            config_hash: hash.into(),
            complete: true,
            files,
        },
    )
}

fn walk(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Ensures an upstream stage finished under the expected hash.
pub fn require(dir: &Path, stage: &str, hash: &str, policy: Policy) -> Result<StageRecord> {
    let Some(r) = read_record(dir)? else {
        bail!("{stage} outputs missing in {}; run `{stage}` first", dir.display());
    };
    if !r.complete {
        bail!("{stage} in {} did not finish; rerun `{stage}`", dir.display());
    }
    if r.config_hash != hash && !policy.allow_stale {
        bail!(
            "{stage} outputs in {} were built from config {} but the current config hashes to {}; \
             rerun `{stage}` (with --force) or pass --allow-stale",
            dir.display(),
            short(&r.config_hash),
            short(hash)
        );
    }
    Ok(r)
}

pub fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
