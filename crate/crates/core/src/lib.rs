// SPDX-License-Identifier: Apache-2.0

//! Seashell triage: an embedding-similarity gate in front of a binary
//! Pacific/Caribbean coast classifier, plus the dataset tooling around it.
//!
//! ```no_run
//! use std::sync::Arc;
//! use shellgate_core::{build_index, ClassifierSpec, EmbedderSpec, GateConfig, TriageContext};
//! # fn items() -> Vec<(String, shellgate_core::Coast, shellgate_core::EmbeddingVector)> { vec![] }
//! let index = Arc::new(build_index(items()).unwrap());
//! let ctx = TriageContext::from_specs(
//!     &EmbedderSpec::reference(1000),
//!     index,
//!     GateConfig::default(),
//!     &ClassifierSpec::default(),
//! )
//! .unwrap();
//! let verdict = shellgate_core::triage(&std::fs::read("shell.jpg").unwrap(), "req-1", &ctx);
//! println!("{}", serde_json::to_string(&verdict.to_wire()).unwrap());
//! ```

pub mod classify;
pub mod embed;
pub mod error;
pub mod eval;
pub mod gate;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod types;
pub mod vindex;

pub use classify::{ClassifierKind, ClassifierSpec, CoastPrediction};
pub use embed::{EmbedderKind, EmbedderSpec, ImageTensor};
pub use error::{Error, Result};
pub use gate::{Decision, GateConfig, GateVerdict, DEFAULT_K, DEFAULT_LAMBDA};
pub use pipeline::{batch_triage, triage, Status, TriageContext, TriageVerdict, VerdictJson};
pub use types::{Coast, EmbeddingVector};
pub use vindex::{build_index, load_index, save_index, VectorIndex};
