// SPDX-License-Identifier: Apache-2.0

//! Classification and anomaly-gate evaluation reports.
//!
//! Metrics are computed as exact fractions of confusion counts; the f64
//! percentage is derived from the fraction and the two-decimal display value
//! is rounded half-up on the fraction itself, so ties like 12.345 round the
//! way a reader doing the arithmetic by hand would.

use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::{Decision, GateVerdict, RejectionCount};
use crate::types::Coast;

/// Rows are the true class, columns the prediction, both ordered
/// `[Caribbean, Pacific]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 2]; 2]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn get(&self, truth: Coast, predicted: Coast) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, truth: Coast) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn col_sum(&self, predicted: Coast) -> u64 {
        self.counts.iter().map(|r| r[predicted.index()]).sum()
    }

    /// The same matrix with the class order reversed.
    pub fn swapped(&self) -> Self {
        let c = self.counts;
        ConfusionMatrix {
            counts: [[c[1][1], c[1][0]], [c[0][1], c[0][0]]],
        }
    }
}

/// Tallies `(truth, predicted)` pairs.
pub fn confusion(pairs: &[(Coast, Coast)]) -> Result<ConfusionMatrix> {
    if pairs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut cm = ConfusionMatrix::default();
    for &(t, p) in pairs {
        cm.counts[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

type Frac = Ratio<u128>;

/// A percentage with its display rounding. Undefined metrics (zero
/// denominator) carry value 0 and `defined: false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Percent {
    pub value: f64,
    pub display: String,
    pub defined: bool,
}

impl Percent {
    fn from_frac(f: Option<Frac>) -> Self {
        match f {
            None => Percent {
                value: 0.0,
                display: "0.00".into(),
                defined: false,
            },
            Some(f) => {
                let (n, d) = (*f.numer(), *f.denom());
                // round(100 * n / d, 2) half-up == floor((20000 n + d) / 2d) / 100
                let cents = (20_000 * n + d) / (2 * d);
                Percent {
                    value: n as f64 * 100.0 / d as f64,
                    display: format!("{}.{:02}", cents / 100, cents % 100),
                    defined: true,
                }
            }
        }
    }

    /// Display value as a number.
    pub fn rounded(&self) -> f64 {
        self.display.parse().expect("display is a decimal")
    }
}

fn frac(n: u64, d: u64) -> Option<Frac> {
    (d > 0).then(|| Frac::new(n as u128, d as u128))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub support: u64,
    /// Per-class accuracy, i.e. recall.
    pub accuracy: Percent,
    pub precision: Percent,
    pub recall: Percent,
    pub f1: Percent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Macro,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub aggregation: Aggregation,
    /// Balanced accuracy for macro, plain accuracy for weighted.
    pub accuracy: Percent,
    pub precision: Percent,
    pub recall: Percent,
    pub f1: Percent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub caribbean: ClassMetrics,
    pub pacific: ClassMetrics,
    pub balanced_accuracy: Percent,
    pub accuracy: Percent,
    pub aggregates: Vec<AggregateMetrics>,
}

impl MetricsReport {
    pub fn class(&self, coast: Coast) -> &ClassMetrics {
        match coast {
            Coast::Caribbean => &self.caribbean,
            Coast::Pacific => &self.pacific,
        }
    }

    pub fn aggregate(&self, aggregation: Aggregation) -> &AggregateMetrics {
        self.aggregates
            .iter()
            .find(|a| a.aggregation == aggregation)
            .expect("both aggregations are always emitted")
    }

    /// True when some metric had a zero denominator.
    pub fn has_undefined(&self) -> bool {
        [&self.caribbean, &self.pacific]
            .iter()
            .any(|c| !(c.precision.defined && c.recall.defined && c.f1.defined))
    }
}

struct ClassFracs {
    support: u64,
    precision: Option<Frac>,
    recall: Option<Frac>,
    f1: Option<Frac>,
}

fn class_fracs(cm: &ConfusionMatrix, c: Coast) -> ClassFracs {
    let tp = cm.get(c, c);
    let fn_ = cm.get(c, c.other());
    let fp = cm.get(c.other(), c);
    ClassFracs {
        support: tp + fn_,
        precision: frac(tp, tp + fp),
        recall: frac(tp, tp + fn_),
        f1: frac(2 * tp, 2 * tp + fp + fn_),
    }
}

fn or_zero(f: Option<Frac>) -> Frac {
    f.unwrap_or_else(|| Frac::from_integer(0))
}

/// Per-class, macro and support-weighted metrics.
pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let classes = Coast::ALL.map(|c| class_fracs(cm, c));
    let n = cm.total();

    let class_metrics = |f: &ClassFracs| ClassMetrics {
        support: f.support,
        accuracy: Percent::from_frac(f.recall),
        precision: Percent::from_frac(f.precision),
        recall: Percent::from_frac(f.recall),
        f1: Percent::from_frac(f.f1),
    };

    let half = Frac::new(1, 2);
    let mean = |get: fn(&ClassFracs) -> Option<Frac>| -> Option<Frac> {
        if n == 0 {
            return None;
        }
        Some((or_zero(get(&classes[0])) + or_zero(get(&classes[1]))) * half)
    };
    let weighted = |get: fn(&ClassFracs) -> Option<Frac>| -> Option<Frac> {
        if n == 0 {
            return None;
        }
        let s = classes
            .iter()
            .map(|c| or_zero(get(c)) * Frac::from_integer(c.support as u128))
            .fold(Frac::from_integer(0), |a, b| a + b);
        Some(s / Frac::from_integer(n as u128))
    };

    let balanced = mean(|c| c.recall);
    let accuracy = frac(cm.counts[0][0] + cm.counts[1][1], n);

    MetricsReport {
        confusion: *cm,
        caribbean: class_metrics(&classes[0]),
        pacific: class_metrics(&classes[1]),
        balanced_accuracy: Percent::from_frac(balanced),
        accuracy: Percent::from_frac(accuracy),
        aggregates: vec![
            AggregateMetrics {
                aggregation: Aggregation::Macro,
                accuracy: Percent::from_frac(balanced),
                precision: Percent::from_frac(mean(|c| c.precision)),
                recall: Percent::from_frac(mean(|c| c.recall)),
                f1: Percent::from_frac(mean(|c| c.f1)),
            },
            AggregateMetrics {
                aggregation: Aggregation::Weighted,
                accuracy: Percent::from_frac(accuracy),
                precision: Percent::from_frac(weighted(|c| c.precision)),
                recall: Percent::from_frac(weighted(|c| c.recall)),
                f1: Percent::from_frac(weighted(|c| c.f1)),
            },
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub in_domain_category: String,
    /// Categories in first-seen order.
    pub per_category: IndexMap<String, RejectionCount>,
    pub ood_rejected: usize,
    pub ood_total: usize,
    pub ood_rejection_rate: f64,
    pub in_domain_false_negatives: usize,
    pub in_domain_total: usize,
}

impl AnomalyReport {
    /// `rejected/total` over the out-of-domain categories.
    pub fn headline(&self) -> String {
        format!("{}/{}", self.ood_rejected, self.ood_total)
    }
}

/// Tabulates gate decisions per category. One category is in-domain; an
/// anomaly decision there is a false negative, everywhere else a correct
/// rejection.
pub fn anomaly_eval(verdicts: &[(String, GateVerdict)], in_domain: &str) -> Result<AnomalyReport> {
    let mut per_category: IndexMap<String, RejectionCount> = IndexMap::new();
    for (cat, v) in verdicts {
        let e = per_category.entry(cat.clone()).or_default();
        e.total += 1;
        if v.decision == Decision::Anomaly {
            e.below_threshold += 1;
        }
    }
    let inside = *per_category
        .get(in_domain)
        .ok_or_else(|| Error::NoInDomainCategory(in_domain.to_string()))?;
    let (ood_rejected, ood_total) = per_category
        .iter()
        .filter(|(c, _)| c.as_str() != in_domain)
        .fold((0, 0), |(r, t), (_, c)| {
            (r + c.below_threshold, t + c.total)
        });
    Ok(AnomalyReport {
        in_domain_category: in_domain.to_string(),
        per_category,
        ood_rejected,
        ood_total,
        ood_rejection_rate: if ood_total == 0 {
            0.0
        } else {
            ood_rejected as f64 / ood_total as f64
        },
        in_domain_false_negatives: inside.below_threshold,
        in_domain_total: inside.total,
    })
}

/// Mean and spread of repeated accuracy runs for one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub architecture: String,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub runs: usize,
}

impl AccuracySummary {
    pub fn from_runs(architecture: impl Into<String>, accuracies: &[f64]) -> Result<Self> {
        if accuracies.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let std = if accuracies.len() > 1 {
            (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(AccuracySummary {
            architecture: architecture.into(),
            mean,
            std,
            runs: accuracies.len(),
        })
    }
}

/// Everything `evaluate` produces. Absent sections are omitted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly: Option<AnomalyReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub architectures: Vec<AccuracySummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

pub fn emit_report(report: &EvaluationReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
            out.push(b'\n');
            out
        }
        ReportFormat::Markdown => markdown(report).into_bytes(),
    }
}

pub fn write_report(report: &EvaluationReport, format: ReportFormat, path: &Path) -> Result<()> {
    std::fs::write(path, emit_report(report, format)).map_err(|e| Error::io(path, e))
}

pub fn parse_report_json(bytes: &[u8]) -> Result<EvaluationReport> {
    serde_json::from_slice(bytes).map_err(|e| Error::InvalidField {
        context: "report".into(),
        field: "json".into(),
        message: e.to_string(),
    })
}

pub fn metrics_markdown(m: &MetricsReport) -> String {
    let mut s = String::new();
    s += "| Ecosystem | Accuracy (%) | Precision (%) | Recall (%) | F1 (%) |\n";
    s += "|---|---:|---:|---:|---:|\n";
    for c in [Coast::Pacific, Coast::Caribbean] {
        let m = m.class(c);
        let _ = writeln!(
            s,
            "| {c} | {} | {} | {} | {} |",
            m.accuracy.display, m.precision.display, m.recall.display, m.f1.display
        );
    }
    for a in &m.aggregates {
        let label = match a.aggregation {
            Aggregation::Macro => "Overall (macro)",
            Aggregation::Weighted => "Overall (weighted)",
        };
        let _ = writeln!(
            s,
            "| {label} | {} | {} | {} | {} |",
            a.accuracy.display, a.precision.display, a.recall.display, a.f1.display
        );
    }
    s
}

pub fn anomaly_markdown(a: &AnomalyReport, lambda: Option<f64>) -> String {
    let mut s = String::from("| Category | Images Below Threshold |\n|---|---:|\n");
    for (cat, c) in &a.per_category {
        let _ = writeln!(s, "| {cat} | {c} |");
    }
    s += "\n";
    let _ = writeln!(
        s,
        "Out-of-domain rejected: {} ({:.1}%)",
        a.headline(),
        a.ood_rejection_rate * 100.0
    );
    let _ = writeln!(
        s,
        "In-domain ({}) false negatives: {}/{}",
        a.in_domain_category, a.in_domain_false_negatives, a.in_domain_total
    );
    if let Some(l) = lambda {
        let _ = writeln!(s, "Threshold: {l}");
    }
    s
}

pub fn architectures_markdown(rows: &[AccuracySummary]) -> String {
    let mut s = String::from("| Architecture | Test Accuracy (%) |\n|---|---:|\n");
    for r in rows {
        let _ = writeln!(s, "| {} | {:.2} ± {:.1} |", r.architecture, r.mean, r.std);
    }
    s
}

fn markdown(r: &EvaluationReport) -> String {
    let mut sections = Vec::new();
    if let Some(m) = &r.classification {
        sections.push(format!("## Classification\n\n{}", metrics_markdown(m)));
    }
    if let Some(a) = &r.anomaly {
        sections.push(format!(
            "## Anomaly gate\n\n{}",
            anomaly_markdown(a, r.lambda)
        ));
    }
    if !r.architectures.is_empty() {
        sections.push(format!(
            "## Architectures\n\n{}",
            architectures_markdown(&r.architectures)
        ));
    }
    sections.join("\n")
}
