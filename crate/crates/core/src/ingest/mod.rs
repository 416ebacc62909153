// SPDX-License-Identifier: Apache-2.0

//! Dataset manifests, stratified splits and composition statistics.

mod manifest;
mod split;
mod stats;

pub use manifest::{
    parse_csv, parse_jsonl, parse_manifest, DatasetManifest, ManifestFormat, ManifestRecord,
    ShellClass, CSV_HEADER,
};
pub use split::{
    apportion, stratified_split, write_splits_csv, Split, SplitAssignment, SplitOptions,
    SplitRatios, Stratum,
};
pub use stats::{
    compute_stats, ratio_one_decimal, species_mean_embeddings, CoastStats, DatasetStats,
};
