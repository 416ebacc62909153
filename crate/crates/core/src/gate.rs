// SPDX-License-Identifier: Apache-2.0

//! Anomaly gate: mean cosine similarity to the `k` nearest reference
//! embeddings, thresholded at `lambda`.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::EmbeddingVector;
use crate::vindex::{Neighbor, VectorIndex};

pub const DEFAULT_LAMBDA: f64 = 0.955;
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub lambda: f64,
    pub k: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            lambda: DEFAULT_LAMBDA,
            k: DEFAULT_K,
        }
    }
}

impl GateConfig {
    pub fn new(lambda: f64, k: usize) -> Result<Self> {
        let cfg = GateConfig { lambda, k };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `lambda` must lie in (-1, 1] and `k` must be positive.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > -1.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda {} outside (-1, 1]",
                self.lambda
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Valid,
    Anomaly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub score: f64,
    pub neighbors: Vec<Neighbor>,
    /// Set when fewer than the requested `k` entries existed.
    pub k_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub score: f64,
    pub decision: Decision,
    pub neighbors: Vec<Neighbor>,
    pub k_clamped: bool,
}

/// Mean of the top-`k` cosine similarities between `query` and the index.
pub fn anomaly_score(
    index: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
) -> Result<AnomalyScore> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let neighbors = index.top_k(query, k)?;
    let k_clamped = neighbors.len() < k;
    if k_clamped {
        tracing::warn!(
            requested = k,
            used = neighbors.len(),
            "k exceeds index size, clamped"
        );
    }
    let score = neighbors.iter().map(|n| n.similarity).sum::<f64>() / neighbors.len() as f64;
    Ok(AnomalyScore {
        score,
        neighbors,
        k_clamped,
    })
}

/// `Valid` iff `score >= lambda`.
pub fn decide(score: f64, cfg: &GateConfig) -> Decision {
    if score >= cfg.lambda {
        Decision::Valid
    } else {
        Decision::Anomaly
    }
}

/// Scores and decides in one step.
pub fn gate(index: &VectorIndex, query: &EmbeddingVector, cfg: &GateConfig) -> Result<GateVerdict> {
    let s = anomaly_score(index, query, cfg.k)?;
    Ok(GateVerdict {
        score: s.score,
        decision: decide(s.score, cfg),
        neighbors: s.neighbors,
        k_clamped: s.k_clamped,
    })
}

/// How the threshold is chosen from in-domain scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", content = "value")]
pub enum CalibrationMethod {
    /// Smallest in-domain score: the largest threshold that rejects no
    /// in-domain sample.
    #[default]
    MinInDomain,
    /// Nearest-rank percentile of the in-domain scores, in (0, 100].
    /// Tolerates a few outliers at the cost of rejecting them.
    Percentile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub lambda_star: f64,
    pub method: CalibrationMethod,
    pub in_domain_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
    /// In-domain scores strictly below `lambda_star`.
    pub false_negatives: usize,
    /// Fraction of OOD scores strictly below `lambda_star`; 0 without OOD.
    pub rejection_rate: f64,
}

impl CalibrationReport {
    pub fn ood_rejected(&self) -> usize {
        self.ood_scores
            .iter()
            .filter(|&&s| s < self.lambda_star)
            .count()
    }

    /// The emitted JSON form. `per_category` scores are tabulated against
    /// `lambda_star`.
    pub fn summary(&self, per_category: &IndexMap<String, Vec<f64>>) -> CalibrationSummary {
        let cfg = GateConfig {
            lambda: self.lambda_star,
            k: 1,
        };
        CalibrationSummary {
            lambda_star: self.lambda_star,
            n_in: self.in_domain_scores.len(),
            n_ood: self.ood_scores.len(),
            false_negatives: self.false_negatives,
            rejection_rate: self.rejection_rate,
            per_category: rejection_table(per_category, &cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub lambda_star: f64,
    pub n_in: usize,
    pub n_ood: usize,
    pub false_negatives: usize,
    pub rejection_rate: f64,
    pub per_category: IndexMap<String, RejectionCount>,
}

pub fn calibrate(in_domain: &[f64], ood: &[f64]) -> Result<CalibrationReport> {
    calibrate_with(in_domain, ood, CalibrationMethod::MinInDomain)
}

pub fn calibrate_with(
    in_domain: &[f64],
    ood: &[f64],
    method: CalibrationMethod,
) -> Result<CalibrationReport> {
    if in_domain.is_empty() {
        return Err(Error::EmptyInDomain);
    }
    if in_domain.iter().chain(ood).any(|s| !s.is_finite()) {
        return Err(Error::InvalidConfig(
            "calibration scores must be finite".into(),
        ));
    }
    let lambda_star = match method {
        CalibrationMethod::MinInDomain => in_domain.iter().copied().fold(f64::INFINITY, f64::min),
        CalibrationMethod::Percentile(p) => {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::InvalidConfig(format!(
                    "percentile {p} outside (0, 100]"
                )));
            }
            let mut sorted = in_domain.to_vec();
            sorted.sort_by(f64::total_cmp);
            let rank = (p * sorted.len() as f64 / 100.0).ceil().max(1.0) as usize;
            sorted[rank.min(sorted.len()) - 1]
        }
    };
    let false_negatives = in_domain.iter().filter(|&&s| s < lambda_star).count();
    let rejected = ood.iter().filter(|&&s| s < lambda_star).count();
    let rejection_rate = if ood.is_empty() {
        0.0
    } else {
        rejected as f64 / ood.len() as f64
    };
    Ok(CalibrationReport {
        lambda_star,
        method,
        in_domain_scores: in_domain.to_vec(),
        ood_scores: ood.to_vec(),
        false_negatives,
        rejection_rate,
    })
}

/// Count of scores below a threshold out of a total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RejectionCount {
    pub below_threshold: usize,
    pub total: usize,
}

impl RejectionCount {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.below_threshold as f64 / self.total as f64
        }
    }
}

impl std::fmt::Display for RejectionCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.below_threshold, self.total)
    }
}

/// Per-category count of scores strictly below `cfg.lambda`. Categories
/// keep their input order.
pub fn rejection_table(
    per_category: &IndexMap<String, Vec<f64>>,
    cfg: &GateConfig,
) -> IndexMap<String, RejectionCount> {
    per_category
        .iter()
        .map(|(cat, scores)| {
            let below = scores
                .iter()
                .filter(|&&s| decide(s, cfg) == Decision::Anomaly)
                .count();
            (
                cat.clone(),
                RejectionCount {
                    below_threshold: below,
                    total: scores.len(),
                },
            )
        })
        .collect()
}
