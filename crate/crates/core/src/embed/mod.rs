// SPDX-License-Identifier: Apache-2.0

//! Image decoding, preprocessing and embedding backends.

mod image;
mod reference;

use std::fmt;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

pub use self::image::{decode_image, resize_bilinear, ImageTensor};
pub use self::reference::{
    flipped_feature_index, grid_features, reference_embedding, FEATURES_PER_CELL, GRID, MAX_DIM,
};
use crate::error::{Error, Result};
use crate::model::{ModelInput, ModelSidecar, OnnxModel};
use crate::types::{Coast, EmbeddingVector};

/// Side length every image is resampled to before embedding.
pub const INPUT_SIZE: u32 = 224;
/// Descriptor length of the production embedder.
pub const PRODUCTION_DIM: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Reference,
    ExternalModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub model_path: Option<PathBuf>,
    pub input_size: u32,
}

impl EmbedderSpec {
    pub fn reference(dim: usize) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::Reference,
            dim,
            model_path: None,
            input_size: INPUT_SIZE,
        }
    }

    pub fn external(model_path: impl Into<PathBuf>, dim: usize) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::ExternalModel,
            dim,
            model_path: Some(model_path.into()),
            input_size: INPUT_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig(
                "embedding dim must be positive".into(),
            ));
        }
        if self.input_size == 0 {
            return Err(Error::InvalidConfig("input size must be positive".into()));
        }
        match self.kind {
            EmbedderKind::Reference if self.dim > MAX_DIM => Err(Error::InvalidConfig(format!(
                "reference embedder supports at most {MAX_DIM} dims, got {}",
                self.dim
            ))),
            EmbedderKind::ExternalModel if self.model_path.is_none() => Err(Error::InvalidConfig(
                "external embedder requires a model path".into(),
            )),
            _ => Ok(()),
        }
    }
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self::reference(PRODUCTION_DIM)
    }
}

/// Decodes PNG/JPEG bytes and resamples to the embedder's square input size.
pub fn preprocess_image(raw: &[u8], spec: &EmbedderSpec) -> Result<ImageTensor> {
    let img = decode_image(raw)?;
    Ok(resize_bilinear(&img, spec.input_size, spec.input_size))
}

/// An image-to-vector backend. Implementations are read-only after
/// construction and may be shared across threads.
pub trait Embedder: Send + Sync + fmt::Debug {
    fn spec(&self) -> &EmbedderSpec;

    fn embed(&self, img: &ImageTensor) -> Result<EmbeddingVector>;

    fn dim(&self) -> usize {
        self.spec().dim
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceEmbedder {
    spec: EmbedderSpec,
}

impl ReferenceEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        let spec = EmbedderSpec::reference(dim);
        spec.validate()?;
        Ok(ReferenceEmbedder { spec })
    }
}

impl Embedder for ReferenceEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed(&self, img: &ImageTensor) -> Result<EmbeddingVector> {
        Ok(reference_embedding(img, self.spec.dim))
    }
}

/// Runs an ONNX model taking `1x3xSxS` input and returns its pooled output.
#[derive(Debug)]
pub struct ModelEmbedder {
    spec: EmbedderSpec,
    model: OnnxModel,
}

impl ModelEmbedder {
    pub fn load(spec: EmbedderSpec) -> Result<Self> {
        spec.validate()?;
        let path = spec.model_path.clone().expect("validated");
        let sidecar = ModelSidecar::load_for(&path)?;
        if sidecar.input != ModelInput::Image {
            return Err(Error::ModelLoadFailure {
                path,
                message: "an embedder model must take image input".into(),
            });
        }
        let s = spec.input_size as usize;
        let model = OnnxModel::load(&path, &[1, 3, s, s], sidecar)?;
        Ok(ModelEmbedder { spec, model })
    }
}

impl Embedder for ModelEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed(&self, img: &ImageTensor) -> Result<EmbeddingVector> {
        let s = self.spec.input_size;
        let img = resize_bilinear(img, s, s);
        let mut chw = img.to_chw_unit();
        self.model.sidecar().normalize_chw(&mut chw);
        let out = self.model.run(&chw)?;
        if out.len() != self.spec.dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.dim,
                actual: out.len(),
            });
        }
        EmbeddingVector::new(out)
    }
}

/// Builds the backend named by `spec`.
pub fn build_embedder(spec: &EmbedderSpec) -> Result<Box<dyn Embedder>> {
    spec.validate()?;
    Ok(match spec.kind {
        EmbedderKind::Reference => Box::new(ReferenceEmbedder::new(spec.dim)?),
        EmbedderKind::ExternalModel => Box::new(ModelEmbedder::load(spec.clone())?),
    })
}

/// One-shot convenience: build the backend and embed a single tensor.
pub fn embed(img: &ImageTensor, spec: &EmbedderSpec) -> Result<EmbeddingVector> {
    build_embedder(spec)?.embed(img)
}

/// Wraps an embedder and counts calls.
#[derive(Debug)]
pub struct CountingEmbedder<E> {
    inner: E,
    calls: AtomicUsize,
}

impl<E: Embedder> CountingEmbedder<E> {
    pub fn new(inner: E) -> Self {
        CountingEmbedder {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<E: Embedder> Embedder for CountingEmbedder<E> {
    fn spec(&self) -> &EmbedderSpec {
        self.inner.spec()
    }

    fn embed(&self, img: &ImageTensor) -> Result<EmbeddingVector> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(img)
    }
}

/// A line of the embedding dump. `coast` and `category` are optional labels
/// used by index building and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub record_id: String,
    pub values: EmbeddingVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coast: Option<Coast>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

pub fn write_embeddings_jsonl<W: Write>(
    records: &[EmbeddingRecord],
    mut out: W,
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads an embedding dump; `source` names the input in error messages.
pub fn read_embeddings_jsonl<R: BufRead>(input: R, source: &str) -> Result<Vec<EmbeddingRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|e| Error::InvalidField {
                context: format!("{source}:{}", i + 1),
                field: "embedding".into(),
                message: e.to_string(),
            })?;
        out.push(rec);
    }
    Ok(out)
}
