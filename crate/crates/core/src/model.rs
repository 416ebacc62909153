// SPDX-License-Identifier: Apache-2.0

//! External neural-network models (ONNX) shared by the embedder and the
//! classifier backends.
//!
//! A model may ship a JSON sidecar next to it, at `<model path>.json`:
//!
//! ```json
//! {"input": "image", "mean": [0.485, 0.456, 0.406], "std": [0.229, 0.224, 0.225],
//!  "concurrent_safe": false}
//! ```
//!
//! `input` is `"image"` (tensor `1x3x224x224`, values in [0, 1] before
//! normalization) or `"embedding"` (tensor `1xdim`). Without a sidecar the
//! model takes an un-normalized image and runs one call at a time.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelInput {
    #[default]
    Image,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSidecar {
    pub input: ModelInput,
    pub mean: Option<[f32; 3]>,
    pub std: Option<[f32; 3]>,
    pub concurrent_safe: bool,
}

impl ModelSidecar {
    pub fn path_for(model: &Path) -> PathBuf {
        let mut s = model.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Reads the sidecar if present, defaults otherwise.
    pub fn load_for(model: &Path) -> Result<Self> {
        let path = Self::path_for(model);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::ModelLoadFailure {
                path,
                message: format!("bad sidecar: {e}"),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Applies per-channel `(x - mean) / std` to a planar CHW buffer.
    pub fn normalize_chw(&self, chw: &mut [f32]) {
        let plane = chw.len() / 3;
        let mean = self.mean.unwrap_or([0.0; 3]);
        let std = self.std.unwrap_or([1.0; 3]);
        for (c, channel) in chw.chunks_exact_mut(plane).enumerate() {
            for v in channel {
                *v = (*v - mean[c]) / std[c];
            }
        }
    }
}

#[cfg(feature = "onnx")]
mod imp {
    use std::sync::Mutex;

    use tract_onnx::prelude::*;

    use super::*;

    type Plan = TypedRunnableModel<TypedModel>;

    pub struct OnnxModel {
        path: PathBuf,
        plan: Plan,
        input_shape: Vec<usize>,
        serial: Option<Mutex<()>>,
        sidecar: ModelSidecar,
    }

    impl OnnxModel {
        pub fn load(path: &Path, input_shape: &[usize], sidecar: ModelSidecar) -> Result<Self> {
            let fail = |e: TractError| Error::ModelLoadFailure {
                path: path.to_path_buf(),
                message: format!("{e:#}"),
            };
            let plan = tract_onnx::onnx()
                .model_for_path(path)
                .map_err(fail)?
                .with_input_fact(0, f32::fact(input_shape).into())
                .map_err(fail)?
                .into_optimized()
                .map_err(fail)?
                .into_runnable()
                .map_err(fail)?;
            Ok(OnnxModel {
                path: path.to_path_buf(),
                plan,
                input_shape: input_shape.to_vec(),
                serial: (!sidecar.concurrent_safe).then(|| Mutex::new(())),
                sidecar,
            })
        }

        pub fn sidecar(&self) -> &ModelSidecar {
            &self.sidecar
        }

        pub fn path(&self) -> &Path {
            &self.path
        }

        /// Runs the model and returns its first output. A rank-4 output
        /// `[1, C, H, W]` is global-average-pooled to `C` values.
        pub fn run(&self, input: &[f32]) -> Result<Vec<f32>> {
            let tensor = Tensor::from_shape(&self.input_shape, input)
                .map_err(|e| Error::Inference(format!("{e:#}")))?;
            let _guard = self
                .serial
                .as_ref()
                .map(|m| m.lock().unwrap_or_else(|p| p.into_inner()));
            let outputs = self
                .plan
                .run(tvec!(tensor.into()))
                .map_err(|e| Error::Inference(format!("{e:#}")))?;
            let out = outputs[0]
                .to_array_view::<f32>()
                .map_err(|e| Error::Inference(format!("{e:#}")))?;
            let shape = out.shape().to_vec();
            if shape.len() == 4 {
                let (c, spatial) = (shape[1], shape[2] * shape[3]);
                let flat: Vec<f32> = out.iter().copied().collect();
                Ok((0..c)
                    .map(|ch| {
                        let s: f64 = flat[ch * spatial..(ch + 1) * spatial]
                            .iter()
                            .map(|&v| v as f64)
                            .sum();
                        (s / spatial as f64) as f32
                    })
                    .collect())
            } else {
                Ok(out.iter().copied().collect())
            }
        }
    }
}

#[cfg(not(feature = "onnx"))]
mod imp {
    use super::*;

    pub struct OnnxModel {
        sidecar: ModelSidecar,
    }

    impl OnnxModel {
        pub fn load(path: &Path, _input_shape: &[usize], _sidecar: ModelSidecar) -> Result<Self> {
            Err(Error::ModelLoadFailure {
                path: path.to_path_buf(),
                message: "built without the `onnx` feature".into(),
            })
        }

        pub fn sidecar(&self) -> &ModelSidecar {
            &self.sidecar
        }

        pub fn path(&self) -> &Path {
            unreachable!("cannot be constructed")
        }

        pub fn run(&self, _input: &[f32]) -> Result<Vec<f32>> {
            unreachable!("cannot be constructed")
        }
    }
}

pub use imp::OnnxModel;

impl std::fmt::Debug for OnnxModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxModel")
            .field("sidecar", self.sidecar())
            .finish_non_exhaustive()
    }
}
