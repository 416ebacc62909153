// SPDX-License-Identifier: Apache-2.0

//! Two-stage triage: decode, embed once, gate, and classify only what the
//! gate lets through.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classify::{build_classifier, ClassifierSpec, CoastClassifier, CoastPrediction};
use crate::embed::{build_embedder, preprocess_image, Embedder, EmbedderSpec};
use crate::error::{Error, Result};
use crate::gate::{gate, Decision, GateConfig, GateVerdict};
use crate::types::Coast;
use crate::vindex::VectorIndex;

pub const PIPELINE_VERSION: &str = concat!("shellgate/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Valid,
    Anomaly,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub decode_ms: f64,
    pub embed_ms: f64,
    pub gate_ms: f64,
    pub classify_ms: f64,
    pub total_ms: f64,
}

impl Timings {
    pub fn stage_sum(&self) -> f64 {
        self.decode_ms + self.embed_ms + self.gate_ms + self.classify_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriageVerdict {
    pub request_id: String,
    pub status: Status,
    /// Absent only for `Status::Error`.
    pub gate: Option<GateVerdict>,
    /// Present only for `Status::Valid`.
    pub prediction: Option<CoastPrediction>,
    pub error: Option<String>,
    pub lambda: f64,
    pub k: usize,
    pub timings: Timings,
    pub pipeline_version: String,
}

/// Wire form of a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictJson {
    pub request_id: String,
    pub status: Status,
    pub score: Option<f64>,
    pub lambda: f64,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Coast>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub timings_ms: Timings,
    pub pipeline_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl VerdictJson {
    /// Checks the cross-field rules of the schema: label and confidence
    /// appear exactly for valid verdicts, score is absent exactly for errors.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let labelled = self.label.is_some() && self.confidence.is_some();
        let unlabelled = self.label.is_none() && self.confidence.is_none();
        match self.status {
            Status::Valid if !labelled => Err("valid verdict without label/confidence".into()),
            Status::Anomaly | Status::Error if !unlabelled => {
                Err(format!("{:?} verdict carries a label", self.status))
            }
            Status::Error if self.score.is_some() => Err("error verdict carries a score".into()),
            Status::Valid | Status::Anomaly if self.score.is_none() => {
                Err("gated verdict without score".into())
            }
            _ => Ok(()),
        }
    }

    /// Copy with timings zeroed, for content comparison.
    pub fn without_timings(&self) -> VerdictJson {
        VerdictJson {
            timings_ms: Timings::default(),
            ..self.clone()
        }
    }
}

impl TriageVerdict {
    pub fn to_wire(&self) -> VerdictJson {
        VerdictJson {
            request_id: self.request_id.clone(),
            status: self.status,
            score: self.gate.as_ref().map(|g| g.score),
            lambda: self.lambda,
            k: self.k,
            label: self.prediction.as_ref().map(|p| p.label),
            confidence: self.prediction.as_ref().map(|p| p.confidence),
            timings_ms: self.timings,
            pipeline_version: self.pipeline_version.clone(),
            error: self.error.clone(),
        }
    }

    /// An error verdict that never reached the pipeline (bad upload).
    pub fn rejected(
        request_id: impl Into<String>,
        gate: &GateConfig,
        message: impl Into<String>,
    ) -> Self {
        TriageVerdict {
            request_id: request_id.into(),
            status: Status::Error,
            gate: None,
            prediction: None,
            error: Some(message.into()),
            lambda: gate.lambda,
            k: gate.k,
            timings: Timings::default(),
            pipeline_version: PIPELINE_VERSION.to_string(),
        }
    }
}

/// Call counters, for checking that each image is embedded once and that
/// anomalies never reach the classifier.
#[derive(Debug, Default)]
pub struct Instrumentation {
    embed_calls: AtomicUsize,
    classify_calls: AtomicUsize,
}

impl Instrumentation {
    pub fn embed_calls(&self) -> usize {
        self.embed_calls.load(Ordering::SeqCst)
    }

    pub fn classify_calls(&self) -> usize {
        self.classify_calls.load(Ordering::SeqCst)
    }
}

/// Everything a triage call needs. Immutable once built; share it behind
/// an `Arc`.
#[derive(Debug)]
pub struct TriageContext {
    embedder: Arc<dyn Embedder>,
    index: Arc<VectorIndex>,
    gate: GateConfig,
    classifier: Arc<dyn CoastClassifier>,
    version: String,
    instrumentation: Instrumentation,
}

impl TriageContext {
    pub fn new(
        embedder: Arc<dyn Embedder>,
        index: Arc<VectorIndex>,
        gate: GateConfig,
        classifier: Arc<dyn CoastClassifier>,
    ) -> Result<Self> {
        gate.validate()?;
        if embedder.dim() != index.dim() {
            return Err(Error::DimensionMismatch {
                expected: index.dim(),
                actual: embedder.dim(),
            });
        }
        Ok(TriageContext {
            embedder,
            index,
            gate,
            classifier,
            version: PIPELINE_VERSION.to_string(),
            instrumentation: Instrumentation::default(),
        })
    }

    /// Builds both backends from their specs.
    pub fn from_specs(
        embedder: &EmbedderSpec,
        index: Arc<VectorIndex>,
        gate: GateConfig,
        classifier: &ClassifierSpec,
    ) -> Result<Self> {
        let e: Arc<dyn Embedder> = Arc::from(build_embedder(embedder)?);
        let c: Arc<dyn CoastClassifier> = Arc::from(build_classifier(classifier, &index)?);
        Self::new(e, index, gate, c)
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn gate_config(&self) -> &GateConfig {
        &self.gate
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn instrumentation(&self) -> &Instrumentation {
        &self.instrumentation
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

/// Runs one image through the pipeline. Failures become error verdicts
/// carrying the request id.
pub fn triage(raw_image: &[u8], request_id: &str, ctx: &TriageContext) -> TriageVerdict {
    let start = Instant::now();
    let mut timings = Timings::default();
    let result = run_stages(raw_image, ctx, &mut timings);
    timings.total_ms = ms_since(start);

    let mut verdict = TriageVerdict {
        request_id: request_id.to_string(),
        status: Status::Error,
        gate: None,
        prediction: None,
        error: None,
        lambda: ctx.gate.lambda,
        k: ctx.gate.k,
        timings,
        pipeline_version: ctx.version.clone(),
    };
    match result {
        Ok((gate, prediction)) => {
            verdict.status = match gate.decision {
                Decision::Valid => Status::Valid,
                Decision::Anomaly => Status::Anomaly,
            };
            verdict.gate = Some(gate);
            verdict.prediction = prediction;
        }
        Err(e) => verdict.error = Some(e.to_string()),
    }
    verdict
}

fn run_stages(
    raw: &[u8],
    ctx: &TriageContext,
    timings: &mut Timings,
) -> Result<(GateVerdict, Option<CoastPrediction>)> {
    let t = Instant::now();
    let tensor = preprocess_image(raw, ctx.embedder.spec())?;
    timings.decode_ms = ms_since(t);

    let t = Instant::now();
    ctx.instrumentation
        .embed_calls
        .fetch_add(1, Ordering::SeqCst);
    let embedding = ctx.embedder.embed(&tensor)?;
    timings.embed_ms = ms_since(t);

    let t = Instant::now();
    let verdict = gate(&ctx.index, &embedding, &ctx.gate)?;
    timings.gate_ms = ms_since(t);

    if verdict.decision == Decision::Anomaly {
        return Ok((verdict, None));
    }
    let t = Instant::now();
    ctx.instrumentation
        .classify_calls
        .fetch_add(1, Ordering::SeqCst);
    let prediction = ctx.classifier.classify(&embedding, &tensor)?;
    timings.classify_ms = ms_since(t);
    Ok((verdict, Some(prediction)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriageInput {
    pub request_id: String,
    pub bytes: Vec<u8>,
}

/// Triage many images on up to `parallelism` threads. Output order matches
/// input order and results equal sequential execution.
pub fn batch_triage(
    images: &[TriageInput],
    ctx: &TriageContext,
    parallelism: usize,
) -> Result<Vec<TriageVerdict>> {
    if parallelism == 0 {
        return Err(Error::InvalidConfig(
            "parallelism must be at least 1".into(),
        ));
    }
    if parallelism == 1 || images.len() <= 1 {
        return Ok(images
            .iter()
            .map(|i| triage(&i.bytes, &i.request_id, ctx))
            .collect());
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        images
            .par_iter()
            .map(|i| triage(&i.bytes, &i.request_id, ctx))
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wire(status: Status, score: Option<f64>, label: Option<Coast>) -> VerdictJson {
        VerdictJson {
            request_id: "r".into(),
            status,
            score,
            lambda: 0.955,
            k: 5,
            label,
            confidence: label.map(|_| 0.7),
            timings_ms: Timings::default(),
            pipeline_version: PIPELINE_VERSION.into(),
            error: None,
        }
    }

    #[test]
    fn schema_rules() {
        assert!(wire(Status::Valid, Some(0.99), Some(Coast::Pacific))
            .validate()
            .is_ok());
        assert!(wire(Status::Valid, Some(0.99), None).validate().is_err());
        assert!(wire(Status::Anomaly, Some(0.2), None).validate().is_ok());
        assert!(wire(Status::Anomaly, Some(0.2), Some(Coast::Pacific))
            .validate()
            .is_err());
        assert!(wire(Status::Error, None, None).validate().is_ok());
        assert!(wire(Status::Error, Some(0.1), None).validate().is_err());
    }

    #[test]
    fn anomaly_wire_omits_label() {
        let text = serde_json::to_string(&wire(Status::Anomaly, Some(0.2), None)).unwrap();
        assert!(!text.contains("label"));
        assert!(!text.contains("confidence"));
        assert!(text.contains(r#""status":"anomaly""#));
    }

    #[test]
    fn rejected_verdict_is_error() {
        let v = TriageVerdict::rejected("abc", &GateConfig::default(), "too large");
        let w = v.to_wire();
        assert_eq!(w.status, Status::Error);
        assert_eq!(w.request_id, "abc");
        assert!(w.score.is_none());
        assert!(w.validate().is_ok());
    }
}
