//! Semantic content of one checkpoint: probes per offset and semantics
//! variant, the label-shuffle control and the current-to-future baseline.

use std::collections::BTreeMap;

use karel::{Example, Semantics};
use serde::{Deserialize, Serialize};

use crate::config::ProbeConfig;
use crate::probe::{
    accuracy_of, conditional_accuracy, evaluate, future_baseline, label_pairs, offset_data, train_probe, Accuracy,
    ProbeData, ProbeError,
};
use crate::tracer::{relabel, Labels, TraceSet};

/// Captured traces of one split with the examples they came from.
#[derive(Clone, Copy)]
pub struct Traces<'a> {
    pub set: &'a TraceSet,
    pub examples: &'a [Example],
}

impl Traces<'_> {
    pub fn labels(&self, sem: Semantics) -> Vec<Labels> {
        if sem == Semantics::Original {
            self.set.records.iter().map(|r| r.labels.clone()).collect()
        } else {
            relabel(self.set, self.examples, sem)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentRow {
    pub step: usize,
    pub offset: i32,
    pub variant: Semantics,
    /// `None` when the offset has no labelled training or test records.
    pub accuracy: Option<f64>,
    pub n_train: usize,
    pub n_records: usize,
    pub by_depth: BTreeMap<usize, (f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureRow {
    pub step: usize,
    pub offset: i32,
    pub baseline: f64,
    pub baseline_labels: usize,
    /// Future-probe accuracy where the offset-0 probe is right.
    pub conditional: Option<f64>,
    pub conditional_labels: usize,
}

/// A fitted offset: test data, record map and predictions.
pub struct OffsetFit {
    pub offset: i32,
    pub test: ProbeData,
    pub rows: Vec<usize>,
    pub pred: Vec<u8>,
    pub accuracy: Accuracy,
}

fn fit_offset(
    train: &(ProbeData, Vec<usize>),
    test: (ProbeData, Vec<usize>),
    offset: i32,
    cfg: &ProbeConfig,
) -> Result<OffsetFit, ProbeError> {
    let model = train_probe(&train.0, cfg)?;
    let accuracy = evaluate(&model, &test.0)?;
    Ok(OffsetFit {
        offset,
        pred: model.predict(&test.0),
        test: test.0,
        rows: test.1,
        accuracy,
    })
}

/// Fits one probe per offset under `variant`'s labels.
pub fn fit_variant(
    train: Traces,
    test: Traces,
    variant: Semantics,
    cfg: &ProbeConfig,
) -> (Vec<ContentRow>, Vec<Option<OffsetFit>>) {
    let (tr_labels, te_labels) = (train.labels(variant), test.labels(variant));
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for (oi, &offset) in train.set.offsets.iter().enumerate() {
        let tr = offset_data(&train.set.records, &tr_labels, oi, offset);
        let te = offset_data(&test.set.records, &te_labels, oi, offset);
        let n_train = tr.0.len().min(cfg.train_budget);
        let n_test = te.0.len();
        let fit = fit_offset(&tr, te, offset, cfg).ok();
        rows.push(ContentRow {
            step: test.set.step,
            offset,
            variant,
            accuracy: fit.as_ref().map(|f| f.accuracy.accuracy),
            n_train,
            n_records: n_test,
            by_depth: fit.as_ref().map(|f| f.accuracy.by_depth.clone()).unwrap_or_default(),
        });
        fits.push(fit);
    }
    (rows, fits)
}

/// Probes trained and tested on labels shuffled across records, one row
/// per offset (original semantics).
pub fn chance_rows(train: Traces, test: Traces, cfg: &ProbeConfig) -> Vec<ContentRow> {
    let (tr_labels, te_labels) = (train.labels(Semantics::Original), test.labels(Semantics::Original));
    train
        .set
        .offsets
        .iter()
        .enumerate()
        .map(|(oi, &offset)| {
            let (tr, _) = offset_data(&train.set.records, &tr_labels, oi, offset);
            let (te, _) = offset_data(&test.set.records, &te_labels, oi, offset);
            let (tr, te) = (tr.shuffled_labels(cfg.seed ^ 1), te.shuffled_labels(cfg.seed ^ 2));
            let acc = train_probe(&tr, cfg).and_then(|m| accuracy_of(&m.predict(&te), &te)).ok();
            ContentRow {
                step: test.set.step,
                offset,
                variant: Semantics::Original,
                accuracy: acc.as_ref().map(|a| a.accuracy),
                n_train: tr.len().min(cfg.train_budget),
                n_records: te.len(),
                by_depth: BTreeMap::new(),
            }
        })
        .collect()
}

/// Baseline and conditional accuracy for every positive offset.
pub fn future_rows(test: Traces, fits: &[Option<OffsetFit>]) -> Vec<FutureRow> {
    let offsets = &test.set.offsets;
    let Some(now_i) = offsets.iter().position(|&o| o == 0) else {
        return Vec::new();
    };
    let labels = test.labels(Semantics::Original);
    let mut out = Vec::new();
    for (fi, &offset) in offsets.iter().enumerate().filter(|(_, &o)| o > 0) {
        let Ok(base) = future_baseline(&label_pairs(&labels, now_i, fi)) else {
            continue;
        };
        let cond = match (&fits[now_i], &fits[fi]) {
            (Some(now), Some(fut)) => conditional_accuracy(
                (&now.pred, &now.test, &now.rows),
                (&fut.pred, &fut.test, &fut.rows),
            ),
            _ => None,
        };
        out.push(FutureRow {
            step: test.set.step,
            offset,
            baseline: base.accuracy,
            baseline_labels: base.n_labels,
            conditional: cond.map(|c| c.0),
            conditional_labels: cond.map_or(0, |c| c.1),
        });
    }
    out
}
