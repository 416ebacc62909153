// SPDX-License-Identifier: Apache-2.0

//! Pacific/Caribbean classification.
//!
//! The reference backend scores a query by cosine similarity to each coast's
//! mean embedding. External models emit two logits ordered
//! `[Caribbean, Pacific]`. Either way the two raw scores go through a
//! temperature softmax to give a confidence.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::embed::{ImageTensor, INPUT_SIZE};
use crate::error::{Error, Result};
use crate::model::{ModelInput, ModelSidecar, OnnxModel};
use crate::types::{Coast, EmbeddingVector};
use crate::vindex::{cosine, VectorIndex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoastScores {
    pub caribbean: f64,
    pub pacific: f64,
}

impl CoastScores {
    pub fn get(&self, coast: Coast) -> f64 {
        match coast {
            Coast::Caribbean => self.caribbean,
            Coast::Pacific => self.pacific,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoastPrediction {
    pub label: Coast,
    /// Normalized probability of `label`; in [0.5, 1].
    pub confidence: f64,
    pub raw_scores: CoastScores,
    pub probabilities: CoastScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    NearestCentroid,
    ExternalModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub temperature: f64,
    pub model_path: Option<PathBuf>,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            kind: ClassifierKind::NearestCentroid,
            temperature: 1.0,
            model_path: None,
        }
    }
}

impl ClassifierSpec {
    pub fn external(model_path: impl Into<PathBuf>) -> Self {
        ClassifierSpec {
            kind: ClassifierKind::ExternalModel,
            temperature: 1.0,
            model_path: Some(model_path.into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.kind == ClassifierKind::ExternalModel && self.model_path.is_none() {
            return Err(Error::InvalidConfig(
                "external classifier requires a model path".into(),
            ));
        }
        Ok(())
    }
}

/// Two-way softmax at temperature `t`, shifted by the max for stability.
pub fn softmax_pair(scores: CoastScores, t: f64) -> CoastScores {
    let m = scores.caribbean.max(scores.pacific);
    let c = ((scores.caribbean - m) / t).exp();
    let p = ((scores.pacific - m) / t).exp();
    let z = c + p;
    CoastScores {
        caribbean: c / z,
        pacific: p / z,
    }
}

/// Label is the argmax of the raw scores; equal scores resolve to
/// Caribbean with confidence 0.5.
pub fn predict_from_scores(raw: CoastScores, temperature: f64) -> CoastPrediction {
    let probabilities = softmax_pair(raw, temperature);
    let label = if raw.pacific > raw.caribbean {
        Coast::Pacific
    } else {
        Coast::Caribbean
    };
    let confidence = if raw.pacific == raw.caribbean {
        0.5
    } else {
        probabilities.get(label)
    };
    CoastPrediction {
        label,
        confidence,
        raw_scores: raw,
        probabilities,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub caribbean: EmbeddingVector,
    pub pacific: EmbeddingVector,
}

impl Centroids {
    pub fn get(&self, coast: Coast) -> &EmbeddingVector {
        match coast {
            Coast::Caribbean => &self.caribbean,
            Coast::Pacific => &self.pacific,
        }
    }
}

/// Per-coast arithmetic mean of the index vectors.
pub fn class_centroids(index: &VectorIndex) -> Result<Centroids> {
    let mut sums = [vec![0.0f64; index.dim()], vec![0.0f64; index.dim()]];
    let mut counts = [0usize; 2];
    for e in index.entries() {
        let c = e.coast.index();
        counts[c] += 1;
        for (s, &v) in sums[c].iter_mut().zip(e.vector) {
            *s += v as f64;
        }
    }
    let mean = |coast: Coast| -> Result<EmbeddingVector> {
        let c = coast.index();
        if counts[c] == 0 {
            return Err(Error::MissingClass(coast.as_str()));
        }
        let m: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        EmbeddingVector::from_f64(&m)
    };
    Ok(Centroids {
        caribbean: mean(Coast::Caribbean)?,
        pacific: mean(Coast::Pacific)?,
    })
}

/// Nearest-centroid prediction for one embedding.
pub fn classify(
    query: &EmbeddingVector,
    centroids: &Centroids,
    temperature: f64,
) -> Result<CoastPrediction> {
    let raw = CoastScores {
        caribbean: cosine(query, &centroids.caribbean)?,
        pacific: cosine(query, &centroids.pacific)?,
    };
    Ok(predict_from_scores(raw, temperature))
}

/// A coast classifier backend. It receives both the query embedding and
/// the preprocessed image and uses whichever its [`ModelInput`] names.
pub trait CoastClassifier: Send + Sync + fmt::Debug {
    fn input(&self) -> ModelInput;

    fn classify(&self, embedding: &EmbeddingVector, image: &ImageTensor)
        -> Result<CoastPrediction>;
}

#[derive(Debug, Clone)]
pub struct CentroidClassifier {
    centroids: Centroids,
    temperature: f64,
}

impl CentroidClassifier {
    pub fn new(centroids: Centroids, temperature: f64) -> Result<Self> {
        ClassifierSpec {
            temperature,
            ..Default::default()
        }
        .validate()?;
        Ok(CentroidClassifier {
            centroids,
            temperature,
        })
    }

    pub fn from_index(index: &VectorIndex, temperature: f64) -> Result<Self> {
        Self::new(class_centroids(index)?, temperature)
    }

    pub fn centroids(&self) -> &Centroids {
        &self.centroids
    }
}

impl CoastClassifier for CentroidClassifier {
    fn input(&self) -> ModelInput {
        ModelInput::Embedding
    }

    fn classify(
        &self,
        embedding: &EmbeddingVector,
        _image: &ImageTensor,
    ) -> Result<CoastPrediction> {
        classify(embedding, &self.centroids, self.temperature)
    }
}

/// ONNX model emitting logits `[Caribbean, Pacific]`.
#[derive(Debug)]
pub struct ModelClassifier {
    model: OnnxModel,
    temperature: f64,
    dim: usize,
}

impl ModelClassifier {
    /// `embedding_dim` fixes the input shape of embedding-input models.
    pub fn load(spec: &ClassifierSpec, embedding_dim: usize) -> Result<Self> {
        spec.validate()?;
        let path = spec.model_path.clone().ok_or_else(|| {
            Error::InvalidConfig("external classifier requires a model path".into())
        })?;
        let sidecar = ModelSidecar::load_for(&path)?;
        let s = INPUT_SIZE as usize;
        let shape: Vec<usize> = match sidecar.input {
            ModelInput::Image => vec![1, 3, s, s],
            ModelInput::Embedding => vec![1, embedding_dim],
        };
        let model = OnnxModel::load(&path, &shape, sidecar)?;
        Ok(ModelClassifier {
            model,
            temperature: spec.temperature,
            dim: embedding_dim,
        })
    }
}

impl CoastClassifier for ModelClassifier {
    fn input(&self) -> ModelInput {
        self.model.sidecar().input
    }

    fn classify(
        &self,
        embedding: &EmbeddingVector,
        image: &ImageTensor,
    ) -> Result<CoastPrediction> {
        let logits = match self.input() {
            ModelInput::Embedding => {
                if embedding.dim() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        actual: embedding.dim(),
                    });
                }
                self.model.run(embedding.as_slice())?
            }
            ModelInput::Image => {
                let s = INPUT_SIZE;
                let img = crate::embed::resize_bilinear(image, s, s);
                let mut chw = img.to_chw_unit();
                self.model.sidecar().normalize_chw(&mut chw);
                self.model.run(&chw)?
            }
        };
        if logits.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                actual: logits.len(),
            });
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Inference(
                "classifier emitted non-finite logits".into(),
            ));
        }
        Ok(predict_from_scores(
            CoastScores {
                caribbean: logits[0] as f64,
                pacific: logits[1] as f64,
            },
            self.temperature,
        ))
    }
}

/// Builds the backend named by `spec`; the reference backend derives its
/// centroids from `index`.
pub fn build_classifier(
    spec: &ClassifierSpec,
    index: &VectorIndex,
) -> Result<Box<dyn CoastClassifier>> {
    spec.validate()?;
    Ok(match spec.kind {
        ClassifierKind::NearestCentroid => {
            Box::new(CentroidClassifier::from_index(index, spec.temperature)?)
        }
        ClassifierKind::ExternalModel => Box::new(ModelClassifier::load(spec, index.dim())?),
    })
}
