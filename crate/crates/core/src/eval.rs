//! Stratified splits, classification metrics and the feature ablation
//! harness.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_inputs, EmbeddingMatrix, FeatureMatrix, FeatureSet, InputOptions};
use crate::model::{train_graph_model, GraphInput, ModelConfig};
use crate::nn::{Classifier, TrainConfig};
use crate::postgraph::PostGraph;
use crate::sub_seed;

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];
pub const MIN_CLASS_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub fractions: [f64; 3],
}

impl Split {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    pub fn n_nodes(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    /// Checks that the parts are disjoint and cover `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "split index {i} out of range or repeated for {n} nodes"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("split does not cover every node".into()));
        }
        Ok(())
    }
}

/// Stratified shuffle split. Each class is shuffled on its own and cut by
/// the rounded fractions; each part is returned sorted.
pub fn make_split(labels: &[u8], fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
        fractions,
    };
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < MIN_CLASS_SIZE {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
                needed: MIN_CLASS_SIZE,
            });
        }
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let n_train = (fractions[0] * n).round() as usize;
        let n_val = ((fractions[1] * n).round() as usize).min(members.len() - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Unweighted mean over the two classes.
    #[default]
    Macro,
    PositiveOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(probs: &[f64], labels: &[u8], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in probs.iter().zip(labels) {
            match (p >= threshold, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: usize, den: usize, what: &str) -> f64 {
    if den == 0 {
        log::warn!("{what} undefined (zero denominator), reported as 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy, precision, recall and F1 of thresholded probabilities. F1 is
/// the harmonic mean of the reported precision and recall.
pub fn classification_metrics(
    probs: &[f64],
    labels: &[u8],
    threshold: f64,
    averaging: Averaging,
) -> Result<ThresholdMetrics> {
    if probs.len() != labels.len() {
        return Err(Error::RowCountMismatch {
            expected: labels.len(),
            found: probs.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    let c = Confusion::from_predictions(probs, labels, threshold);
    let p1 = ratio(c.tp, c.tp + c.fp, "positive-class precision");
    let r1 = ratio(c.tp, c.tp + c.fn_, "positive-class recall");
    let (precision, recall) = match averaging {
        Averaging::PositiveOnly => (p1, r1),
        Averaging::Macro => {
            let p0 = ratio(c.tn, c.tn + c.fn_, "negative-class precision");
            let r0 = ratio(c.tn, c.tn + c.fp, "negative-class recall");
            ((p0 + p1) / 2.0, (r0 + r1) / 2.0)
        }
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ThresholdMetrics {
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        precision,
        recall,
        f1,
    })
}

fn check_scores(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::RowCountMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    Ok(())
}

/// Indices sorted by score, with the ranges of tied scores.
fn tie_groups(scores: &[f64], descending: bool) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let o = scores[a].total_cmp(&scores[b]);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    let mut groups = Vec::new();
    let mut start = 0;
    for k in 1..=order.len() {
        if k == order.len() || scores[order[k]] != scores[order[start]] {
            groups.push((start, k));
            start = k;
        }
    }
    (order, groups)
}

/// Area under the ROC curve from average ranks: the probability that a
/// random positive outscores a random negative, ties counting one half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let (order, groups) = tie_groups(scores, false);
    let mut rank_sum = 0.0;
    for (start, end) in groups {
        // 1-based ranks start+1 ..= end share their mean
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        let pos = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum += mean_rank * pos as f64;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Average precision: Σ ΔRecall · Precision over descending score
/// thresholds, tied scores entering together.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 {
        return Err(Error::InvalidArgument("average precision needs a positive label".into()));
    }
    let (order, groups) = tie_groups(scores, true);
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    for (start, end) in groups {
        let pos = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        tp += pos;
        seen += end - start;
        if pos > 0 {
            ap += (pos as f64 / n_pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub f1: f64,
}

/// Score the rows `rows` of per-node probabilities at threshold 0.5.
pub fn evaluate(model: &str, probs: &[f64], labels: &[u8], rows: &[usize], averaging: Averaging) -> Result<EvalReport> {
    if probs.len() != labels.len() {
        return Err(Error::RowCountMismatch {
            expected: labels.len(),
            found: probs.len(),
        });
    }
    let p: Vec<f64> = rows.iter().map(|&i| probs[i]).collect();
    let y: Vec<u8> = rows.iter().map(|&i| labels[i]).collect();
    let t = classification_metrics(&p, &y, 0.5, averaging)?;
    Ok(EvalReport {
        model: model.to_string(),
        accuracy: t.accuracy,
        precision: t.precision,
        recall: t.recall,
        auc_roc: auc_roc(&p, &y)?,
        auc_pr: auc_pr(&p, &y)?,
        f1: t.f1,
    })
}

pub const REPORT_HEADER: &str = "model,Acc,Prec,Recall,AUC_ROC,AUC_PR,F1";

fn metric_cells(r: &EvalReport) -> String {
    format!(
        "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        r.accuracy, r.precision, r.recall, r.auc_roc, r.auc_pr, r.f1
    )
}

pub fn write_report_csv(reports: &[EvalReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(w, "{},{}", r.model, metric_cells(r))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub features: FeatureSet,
    pub val: EvalReport,
    pub test: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub inputs: InputOptions,
    pub averaging: Averaging,
}

pub fn feature_set_label(set: FeatureSet) -> String {
    format!("phi={},omega={}", set.phi.as_str(), set.omega.as_str())
}

/// Train and score the graph model once per feature set on a shared split.
/// Each row trains from its own seed derived from `settings.train.seed`.
pub fn run_ablation(
    grid: &[FeatureSet],
    phi: &FeatureMatrix,
    emb: &EmbeddingMatrix,
    graph: &PostGraph,
    labels: &[u8],
    split: &Split,
    settings: &AblationSettings,
) -> Result<Vec<AblationRow>> {
    split.validate(labels.len())?;
    let mut rows = Vec::with_capacity(grid.len());
    for &set in grid {
        let label = feature_set_label(set);
        let x = build_inputs(set, phi, emb, &split.train, settings.inputs)?.to_tensor();
        let mut train = settings.train.clone();
        train.seed = sub_seed(settings.train.seed, &label);
        let (model, history) = train_graph_model(&x, graph, labels, split, settings.model, &train)?;
        let probs = model.predict(&GraphInput::new(&x, graph)?)?;
        let val = evaluate(&label, &probs, labels, &split.val, settings.averaging)?;
        let test = evaluate(&label, &probs, labels, &split.test, settings.averaging)?;
        log::info!(
            "{label}: {} epochs, val AUC {:.4}, test AUC {:.4}",
            history.epochs.len(),
            val.auc_roc,
            test.auc_roc
        );
        rows.push(AblationRow {
            features: set,
            val,
            test,
        });
    }
    Ok(rows)
}

/// Ablation table on the test part, one row per feature set.
pub fn write_ablation_csv(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "phi,omega,Acc,Prec,Recall,AUC_ROC,AUC_PR,F1")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{}",
            r.features.phi.as_str(),
            r.features.omega.as_str(),
            metric_cells(&r.test)
        )?;
    }
    w.flush()?;
    Ok(())
}
