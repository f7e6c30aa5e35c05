//! The run report: every series keyed by checkpoint, plus plot-ready CSVs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use karel::Semantics;
use serde::{Deserialize, Serialize};

use crate::analysis::{bca_ci, ols, BootstrapCi, GenerativeAccuracy, LengthStats, PerplexityBreakdown, Regression};
use crate::config::AnalysisConfig;
use crate::content::{ContentRow, FutureRow};
use crate::tracer::DecodeRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: f64,
    pub ci: Option<BootstrapCi>,
}

impl LengthSummary {
    pub fn of(lengths: &[usize], cfg: &AnalysisConfig, seed: u64) -> LengthSummary {
        let stats = LengthStats::of(lengths);
        let xs: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
        LengthSummary {
            n: stats.n,
            mean: (stats.n > 0).then(|| stats.mean()),
            sd: stats.sd(),
            ci: bca_ci(&xs, cfg.bootstrap_resamples, cfg.confidence, seed).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub step: usize,
    /// Reference programs of the training subsample.
    pub reference: LengthSummary,
    /// Well-formed greedy completions on the test split.
    pub generated: LengthSummary,
}

pub fn length_row(step: usize, reference: &[usize], decodes: &[DecodeRecord], cfg: &AnalysisConfig) -> LengthRow {
    let generated: Vec<usize> = decodes.iter().filter(|d| d.well_formed).map(|d| d.length).collect();
    LengthRow {
        step,
        reference: LengthSummary::of(reference, cfg, cfg.seed),
        generated: LengthSummary::of(&generated, cfg, cfg.seed ^ step as u64),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityRow {
    pub step: usize,
    pub split: String,
    pub breakdown: PerplexityBreakdown,
    /// On the model's own completions (test split only).
    pub generated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub offset: i32,
    pub variant: Semantics,
    pub steps: Vec<usize>,
    pub result: Option<Regression>,
    pub note: Option<String>,
}

/// Generative accuracy regressed on the content series of every
/// (offset, variant), over the checkpoints both are defined at.
pub fn regressions(gen: &[GenerativeAccuracy], content: &[ContentRow]) -> Vec<RegressionRow> {
    let acc: BTreeMap<usize, f64> = gen.iter().map(|g| (g.step, g.accuracy)).collect();
    let mut cells: BTreeMap<(Semantics, i32), Vec<(usize, f64)>> = BTreeMap::new();
    for r in content {
        let cell = cells.entry((r.variant, r.offset)).or_default();
        if let (Some(c), Some(_)) = (r.accuracy, acc.get(&r.step)) {
            cell.push((r.step, c));
        }
    }
    cells
        .into_iter()
        .map(|((variant, offset), pts)| {
            let x: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let y: Vec<f64> = pts.iter().map(|p| acc[&p.0]).collect();
            let fit = ols(&x, &y);
            RegressionRow {
                offset,
                variant,
                steps: pts.iter().map(|p| p.0).collect(),
                note: fit.as_ref().err().map(|e| e.to_string()),
                result: fit.ok(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub checkpoints: Vec<usize>,
    pub generative_accuracy: Vec<GenerativeAccuracy>,
    pub content: Vec<ContentRow>,
    pub chance: Vec<ContentRow>,
    pub future: Vec<FutureRow>,
    pub lengths: Vec<LengthRow>,
    pub perplexity: Vec<PerplexityRow>,
    pub regressions: Vec<RegressionRow>,
    /// Series that could not be produced, with the reason.
    pub skipped: Vec<String>,
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

type Table = (Vec<String>, Vec<Vec<String>>);

fn table(header: &[&str], rows: Vec<Vec<String>>) -> Table {
    (header.iter().map(|s| s.to_string()).collect(), rows)
}

impl RunReport {
    pub fn content_at(&self, step: usize, offset: i32, variant: Semantics) -> Option<f64> {
        self.content
            .iter()
            .find(|r| r.step == step && r.offset == offset && r.variant == variant)
            .and_then(|r| r.accuracy)
    }

    pub fn regression(&self, offset: i32, variant: Semantics) -> Option<&RegressionRow> {
        self.regressions.iter().find(|r| r.offset == offset && r.variant == variant)
    }

    /// Plot-ready tables, by file name.
    pub fn figures(&self) -> BTreeMap<&'static str, Table> {
        let mut out = BTreeMap::new();
        let offsets: Vec<i32> = {
            let mut o: Vec<i32> = self.content.iter().map(|r| r.offset).collect();
            o.sort();
            o.dedup();
            o
        };
        let acc: BTreeMap<usize, f64> = self.generative_accuracy.iter().map(|g| (g.step, g.accuracy)).collect();

        let mut header = vec!["step".to_string(), "generative_accuracy".to_string()];
        header.extend(offsets.iter().map(|o| format!("content_offset_{o}")));
        let rows = self
            .checkpoints
            .iter()
            .map(|&s| {
                let mut row = vec![s.to_string(), opt(acc.get(&s).copied())];
                row.extend(offsets.iter().map(|&o| opt(self.content_at(s, o, Semantics::Original))));
                row
            })
            .collect();
        out.insert("content_over_training.csv", (header, rows));

        let rows = self
            .content
            .iter()
            .map(|r| vec![r.step.to_string(), r.offset.to_string(), r.variant.name().into(), opt(r.accuracy), r.n_records.to_string()])
            .collect();
        out.insert("content_by_variant.csv", table(&["step", "offset", "variant", "accuracy", "n_records"], rows));

        let rows = self
            .content
            .iter()
            .flat_map(|r| {
                r.by_depth.iter().map(move |(d, (a, n))| {
                    vec![r.step.to_string(), r.offset.to_string(), r.variant.name().into(), d.to_string(), a.to_string(), n.to_string()]
                })
            })
            .collect();
        out.insert("content_by_depth.csv", table(&["step", "offset", "variant", "depth", "accuracy", "n_labels"], rows));

        let rows = self
            .chance
            .iter()
            .map(|r| vec![r.step.to_string(), r.offset.to_string(), opt(r.accuracy), r.n_records.to_string()])
            .collect();
        out.insert("chance_control.csv", table(&["step", "offset", "accuracy", "n_records"], rows));

        let rows = self
            .future
            .iter()
            .map(|f| {
                vec![
                    f.step.to_string(),
                    f.offset.to_string(),
                    f.baseline.to_string(),
                    f.baseline_labels.to_string(),
                    opt(f.conditional),
                    f.conditional_labels.to_string(),
                ]
            })
            .collect();
        out.insert(
            "future_baseline.csv",
            table(&["step", "offset", "baseline", "baseline_labels", "conditional_probe", "conditional_labels"], rows),
        );

        let rows = self
            .regressions
            .iter()
            .map(|r| {
                let f = r.result.as_ref();
                vec![
                    r.offset.to_string(),
                    r.variant.name().into(),
                    r.steps.len().to_string(),
                    opt(f.map(|f| f.slope)),
                    opt(f.map(|f| f.intercept)),
                    opt(f.map(|f| f.r2)),
                    opt(f.map(|f| f.p_value)),
                    r.note.clone().unwrap_or_default(),
                ]
            })
            .collect();
        out.insert(
            "regressions.csv",
            table(&["offset", "variant", "n", "slope", "intercept", "r2", "p_value", "note"], rows),
        );

        let rows = self
            .regressions
            .iter()
            .filter_map(|r| r.result.as_ref().map(|f| (r, f)))
            .flat_map(|(r, f)| {
                r.steps
                    .iter()
                    .zip(&f.residuals)
                    .map(|(s, e)| vec![r.offset.to_string(), r.variant.name().into(), s.to_string(), e.to_string()])
            })
            .collect();
        out.insert("residuals.csv", table(&["offset", "variant", "step", "residual"], rows));

        let rows = self
            .generative_accuracy
            .iter()
            .flat_map(|g| {
                g.by_length.iter().map(move |(l, t)| {
                    vec![g.step.to_string(), l.to_string(), t.count.to_string(), t.correct.to_string(), t.accuracy.to_string()]
                })
            })
            .collect();
        out.insert("accuracy_by_length.csv", table(&["step", "reference_length", "count", "correct", "accuracy"], rows));

        let ci = |c: &Option<BootstrapCi>| [opt(c.as_ref().map(|c| c.lower)), opt(c.as_ref().map(|c| c.upper))];
        let rows = self
            .lengths
            .iter()
            .map(|l| {
                let mut row = vec![l.step.to_string(), opt(l.reference.mean), l.reference.sd.to_string()];
                row.extend(ci(&l.reference.ci));
                row.extend([l.generated.n.to_string(), opt(l.generated.mean), l.generated.sd.to_string()]);
                row.extend(ci(&l.generated.ci));
                row
            })
            .collect();
        out.insert(
            "lengths.csv",
            table(
                &[
                    "step",
                    "reference_mean",
                    "reference_sd",
                    "reference_ci_lower",
                    "reference_ci_upper",
                    "generated_n",
                    "generated_mean",
                    "generated_sd",
                    "generated_ci_lower",
                    "generated_ci_upper",
                ],
                rows,
            ),
        );

        let n_ios = self.perplexity.first().map_or(0, |p| p.breakdown.input.len());
        let mut header: Vec<String> = ["step", "split", "all", "program", "generated"].iter().map(|s| s.to_string()).collect();
        header.extend((1..=n_ios).map(|k| format!("input_{k}")));
        header.extend((1..=n_ios).map(|k| format!("output_{k}")));
        let rows = self
            .perplexity
            .iter()
            .map(|p| {
                let b = &p.breakdown;
                let mut row = vec![p.step.to_string(), p.split.clone(), b.all.to_string(), b.program.to_string(), opt(p.generated)];
                row.extend(b.input.iter().chain(&b.output).map(|v| v.to_string()));
                row
            })
            .collect();
        out.insert("perplexity.csv", (header, rows));
        out
    }

    /// Writes `report.json` and every figure table, each row tagged with the
    /// config hash; returns the paths written.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let path = dir.join("report.json");
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(&path, json)?;
        written.push(path);
        for (name, (header, rows)) in self.figures() {
            let path = dir.join(name);
            write_csv(&path, &header, &rows, &self.config_hash)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// CSV with a trailing `config_hash` column.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>], config_hash: &str) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut h = header.to_vec();
    h.push("config_hash".into());
    w.write_record(&h)?;
    for r in rows {
        let mut r = r.clone();
        r.push(config_hash.into());
        w.write_record(&r)?;
    }
    w.flush()
}
