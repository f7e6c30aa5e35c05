//! Run configuration: one TOML file, optional `key=value` overrides, and
//! per-stage content hashes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use experiment::{AnalysisConfig, CaptureConfig, ProbeConfig};
use karel::{DatasetConfig, GrammarConfig, InputSamplerConfig, Semantics};
use lm::LMConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub obstacle_prob: f64,
    pub marker_prob: f64,
    pub marker_count_weights: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        let d = InputSamplerConfig::default();
        GridConfig {
            obstacle_prob: d.obstacle_prob,
            marker_prob: d.marker_prob,
            marker_count_weights: d.marker_count_weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub rows: usize,
    pub cols: usize,
    pub n_ios: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub grammar: GrammarConfig,
    pub grid: GridConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            rows: 8,
            cols: 8,
            n_ios: 5,
            train_size: 100_000,
            test_size: 2_000,
            grammar: GrammarConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            grammar: self.grammar.clone(),
            inputs: InputSamplerConfig {
                rows: self.rows,
                cols: self.cols,
                obstacle_prob: self.grid.obstacle_prob,
                marker_prob: self.grid.marker_prob,
                marker_count_weights: self.grid.marker_count_weights.clone(),
            },
            n_ios: self.n_ios,
        }
    }

    /// Longest encoded example the grammar can produce.
    pub fn max_encoded_len(&self) -> usize {
        karel::codec::encoded_len(self.rows, self.cols, self.n_ios, self.grammar.max_len())
    }
}

/// The whole experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    /// Run directory; relative paths are taken from the working directory.
    pub out_dir: PathBuf,
    /// Threads for parallel stages.
    pub workers: usize,
    pub data: DataConfig,
    pub lm: LMConfig,
    pub capture: CaptureConfig,
    pub probe: ProbeConfig,
    pub offsets: Vec<i32>,
    pub interventions: Vec<Semantics>,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            workers: 1,
            data: DataConfig::default(),
            lm: LMConfig {
                context: 672,
                ..LMConfig::default()
            },
            capture: CaptureConfig::default(),
            probe: ProbeConfig::default(),
            offsets: vec![-2, -1, 0, 1, 2],
            interventions: Semantics::INTERVENTIONS.to_vec(),
            analysis: AnalysisConfig::default(),
        }
    }
}

pub const PRESETS: &[(&str, &str)] = &[
    ("smoke", include_str!("../../../configs/smoke.toml")),
    ("fast", include_str!("../../../configs/fast.toml")),
    ("paper-shape", include_str!("../../../configs/paper-shape.toml")),
];

/// Stable 64-bit seed for a named stage.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{master}/{label}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Hex sha256 of the canonical JSON encoding of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Content hashes of each stage's inputs; each includes its upstream hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageHashes {
    pub data: String,
    pub lm: String,
    pub eval: String,
    pub capture: String,
    pub probe: String,
    pub intervene: String,
    pub analyze: String,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).context("parsing run config")?;
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<RunConfig> {
        match PRESETS.iter().find(|(n, _)| *n == name) {
            Some((_, text)) => RunConfig::from_toml(text),
            None => bail!(
                "unknown preset {name:?}; available: {}",
                PRESETS.iter().map(|p| p.0).collect::<Vec<_>>().join(", ")
            ),
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        RunConfig::from_toml(&text)
    }

    /// Applies `a.b.c=value` overrides; values are parsed as TOML, falling
    /// back to a bare string.
    pub fn with_overrides(self, overrides: &[String]) -> Result<RunConfig> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut doc = toml::Value::try_from(&self).context("encoding config")?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .with_context(|| format!("override {item:?} is not key=value"))?;
            let value = parse_value(raw.trim());
            let mut slot = &mut doc;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = slot
                    .as_table_mut()
                    .with_context(|| format!("{key}: {part} is not inside a table"))?;
                if i + 1 == parts.len() {
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                slot = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        let text = toml::to_string(&doc)?;
        RunConfig::from_toml(&text).context("config after overrides")
    }

    /// Fills in derived seeds and validates every section.
    pub fn resolve(mut self) -> Result<RunConfig> {
        self.lm.seed = derive_seed(self.seed, "lm");
        self.probe.seed = derive_seed(self.seed, "probe");
        self.analysis.seed = derive_seed(self.seed, "analysis");
        self.lm.vocab_size = karel::codec::VOCAB_SIZE;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.dataset().validate().context("data config")?;
        if self.data.train_size == 0 || self.data.test_size == 0 {
            bail!("train_size and test_size must be positive");
        }
        self.lm.validate()?;
        let need = self.data.max_encoded_len();
        if self.lm.context < need {
            bail!("lm.context {} is shorter than the longest example ({need} tokens)", self.lm.context);
        }
        if self.lm.decode_cap == 0 {
            bail!("lm.decode_cap must be positive");
        }
        self.probe.validate().map_err(anyhow::Error::msg)?;
        if self.offsets.is_empty() || !self.offsets.contains(&0) {
            bail!("offsets must include 0");
        }
        if self.interventions.contains(&Semantics::Original) {
            bail!("interventions lists alternatives only; original is always probed");
        }
        if !(0.0 < self.analysis.confidence && self.analysis.confidence < 1.0) || self.analysis.bootstrap_resamples < 2 {
            bail!("analysis.confidence must be in (0, 1) with at least 2 resamples");
        }
        if self.workers == 0 {
            bail!("workers must be positive");
        }
        Ok(())
    }

    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, "data/train")
    }

    pub fn test_seed(&self) -> u64 {
        derive_seed(self.seed, "data/test")
    }

    pub fn hashes(&self) -> StageHashes {
        #[derive(Serialize)]
        struct Data<'a> {
            data: &'a DataConfig,
            train_seed: u64,
            test_seed: u64,
        }
        let data = hash_json(&(
            "data",
            Data {
                data: &self.data,
                train_seed: self.train_seed(),
                test_seed: self.test_seed(),
            },
        ));
        let lm = hash_json(&("lm", &data, &self.lm));
        let eval = hash_json(&("eval", &lm));
        let capture = hash_json(&("capture", &lm, &self.capture));
        let probe = hash_json(&("probe", &capture, &self.probe, &self.offsets));
        let intervene = hash_json(&("intervene", &probe, &self.interventions));
        let analyze = hash_json(&("analyze", &eval, &intervene, &self.analysis));
        StageHashes {
            data,
            lm,
            eval,
            capture,
            probe,
            intervene,
            analyze,
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
