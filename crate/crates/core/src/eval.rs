//! Accuracy, per-class precision/recall/F1, micro/macro/weighted F1,
//! confusion matrices and the random and majority baselines.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabelSet;
use crate::error::{Error, Result};

/// Counts with rows = gold class and columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, gold: usize) -> u64 {
        self.counts[gold].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        self.counts.iter().map(|r| r[pred]).sum()
    }
}

pub fn confusion(gold: &[usize], pred: &[usize], labels: &LabelSet) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let k = labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&g, &p) in gold.iter().zip(pred) {
        if g >= k || p >= k {
            return Err(Error::InvalidArgument(format!(
                "label index out of range for {k} classes"
            )));
        }
        counts[g][p] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.names().to_vec(),
        counts,
    })
}

/// How classes with no gold examples enter the macro average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacroAverage {
    /// Average only over classes that occur in the gold labels.
    #[default]
    ExcludeAbsent,
    /// Average over every class; absent ones contribute F1 = 0.
    IncludeAbsent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<EvalReport> {
    report_with(cm, MacroAverage::default())
}

/// Scores a confusion matrix. Precision or recall with a zero denominator
/// is 0, and so is the F1 built from it.
pub fn report_with(cm: &ConfusionMatrix, macro_avg: MacroAverage) -> Result<EvalReport> {
    let total = cm.total();
    let k = cm.num_classes();
    if k == 0 || total == 0 || cm.counts.len() != k || cm.counts.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidArgument("empty or malformed confusion matrix".into()));
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let precision = ratio(tp, cm.col_sum(c));
            let recall = ratio(tp, cm.row_sum(c));
            ClassMetrics {
                label: cm.labels[c].clone(),
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: cm.row_sum(c),
            }
        })
        .collect();

    let averaged: Vec<&ClassMetrics> = match macro_avg {
        MacroAverage::ExcludeAbsent => per_class.iter().filter(|m| m.support > 0).collect(),
        MacroAverage::IncludeAbsent => per_class.iter().collect(),
    };
    let macro_f1 = averaged.iter().map(|m| m.f1).sum::<f64>() / averaged.len() as f64;
    let weighted_f1 = per_class
        .iter()
        .map(|m| m.f1 * m.support as f64)
        .sum::<f64>()
        / total as f64;

    let tp = cm.trace();
    // single-label data: every miss is one FP and one FN
    let (fp, fn_) = (total - tp, total - tp);
    let micro_p = ratio(tp, tp + fp);
    let micro_r = ratio(tp, tp + fn_);

    Ok(EvalReport {
        accuracy: ratio(tp, total),
        micro_f1: harmonic(micro_p, micro_r),
        macro_f1,
        weighted_f1,
        per_class,
        confusion: cm.clone(),
    })
}

impl EvalReport {
    /// Tab-separated `key value` lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("accuracy", self.accuracy),
            ("f1_micro", self.micro_f1),
            ("f1_macro", self.macro_f1),
            ("f1_weighted", self.weighted_f1),
        ] {
            let _ = writeln!(s, "{k}\t{v:.4}");
        }
        for m in &self.per_class {
            let _ = writeln!(
                s,
                "class:{}\tprecision={:.4}\trecall={:.4}\tf1={:.4}\tsupport={}",
                m.label, m.precision, m.recall, m.f1, m.support
            );
        }
        s
    }
}

/// Predicts the most frequent training label (lowest index on ties) for
/// every test item.
pub fn majority_baseline(
    train_labels: &[usize],
    test_gold: &[usize],
    labels: &LabelSet,
) -> Result<EvalReport> {
    if train_labels.is_empty() {
        return Err(Error::InvalidArgument("no training labels".into()));
    }
    let mut counts = vec![0usize; labels.len()];
    for &l in train_labels {
        *counts.get_mut(l).ok_or_else(|| {
            Error::InvalidArgument(format!("label {l} out of range"))
        })? += 1;
    }
    let top = *counts.iter().max().expect("non-empty");
    let majority = counts.iter().position(|&c| c == top).expect("max exists");
    let pred = vec![majority; test_gold.len()];
    report(&confusion(test_gold, &pred, labels)?)
}

/// Uniformly random predictions under `seed`.
pub fn random_baseline(labels: &LabelSet, test_gold: &[usize], seed: u64) -> Result<EvalReport> {
    let k = labels.len();
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred: Vec<usize> = test_gold.iter().map(|_| rng.gen_range(0..k)).collect();
    report(&confusion(test_gold, &pred, labels)?)
}

/// Aligned text table and CSV of a confusion matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedConfusion {
    pub table: String,
    pub csv: String,
}

const CORNER: &str = "gold\\pred";

/// Renders counts, or row-normalized rates when `normalize` is set (empty
/// rows render as zeros).
pub fn render_confusion(cm: &ConfusionMatrix, normalize: bool) -> Result<RenderedConfusion> {
    let k = cm.num_classes();
    let cells: Vec<Vec<String>> = (0..k)
        .map(|g| {
            let sum = cm.row_sum(g);
            cm.counts[g]
                .iter()
                .map(|&c| {
                    if normalize {
                        format!("{:.4}", ratio(c, sum))
                    } else {
                        c.to_string()
                    }
                })
                .collect()
        })
        .collect();

    let label_w = cm.labels.iter().map(|l| l.chars().count()).chain([CORNER.len()]).max().unwrap_or(0);
    let col_w: Vec<usize> = (0..k)
        .map(|p| {
            cells
                .iter()
                .map(|r| r[p].len())
                .chain([cm.labels[p].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut table = String::new();
    let _ = write!(table, "{CORNER:<label_w$}");
    for (p, l) in cm.labels.iter().enumerate() {
        let _ = write!(table, "  {l:>w$}", w = col_w[p]);
    }
    table.push('\n');
    for (g, row) in cells.iter().enumerate() {
        let _ = write!(table, "{:<label_w$}", cm.labels[g]);
        for (p, c) in row.iter().enumerate() {
            let _ = write!(table, "  {c:>w$}", w = col_w[p]);
        }
        table.push('\n');
    }

    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_writer(Vec::new());
    w.write_record(std::iter::once(CORNER).chain(cm.labels.iter().map(String::as_str)))?;
    for (g, row) in cells.iter().enumerate() {
        w.write_record(std::iter::once(cm.labels[g].as_str()).chain(row.iter().map(String::as_str)))?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?)
        .expect("csv writer emits UTF-8");
    Ok(RenderedConfusion { table, csv })
}

/// Reads back a count CSV written by [`render_confusion`].
pub fn parse_confusion_csv(text: &str) -> Result<ConfusionMatrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut rows = r.records();
    let header = rows
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty confusion CSV".into()))??;
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut counts = Vec::with_capacity(labels.len());
    for (i, rec) in rows.enumerate() {
        let rec = rec?;
        if rec.get(0) != labels.get(i).map(String::as_str) || rec.len() != labels.len() + 1 {
            return Err(Error::InvalidArgument(format!("malformed confusion CSV row {}", i + 1)));
        }
        counts.push(
            rec.iter()
                .skip(1)
                .map(|c| {
                    c.parse::<u64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad count `{c}`")))
                })
                .collect::<Result<Vec<_>>>()?,
        );
    }
    if counts.len() != labels.len() {
        return Err(Error::InvalidArgument("confusion CSV is not square".into()));
    }
    Ok(ConfusionMatrix { labels, counts })
}
