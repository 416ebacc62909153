// SPDX-License-Identifier: Apache-2.0

//! Deterministic stratified train/val/test assignment.
//!
//! Each stratum (family by default) is apportioned independently with the
//! largest-remainder method. Quotas are computed in exact integer arithmetic
//! on ratios quantized to parts per million, so `n × ratio` never suffers
//! from binary rounding. Remainder ties go Train, then Val, then Test.
//!
//! Records inside a stratum are first sorted by id, then shuffled with a
//! ChaCha stream seeded from SHA-256 of `(seed, stratum)`. The result does
//! not depend on manifest row order.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::{DatasetManifest, ManifestRecord};
use crate::error::{Error, Result};

const RATIO_SCALE: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub record_id: String,
    pub split: Split,
}

/// Which taxonomic rank the split is balanced over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    #[default]
    Family,
    Species,
}

impl Stratum {
    fn key(self, r: &ManifestRecord) -> &str {
        match self {
            Stratum::Family => &r.family,
            Stratum::Species => &r.species,
        }
    }
}

/// Train/val/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    /// Checked constructor.
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.weights()?;
        Ok(r)
    }

    /// Parts-per-million weights. Fails unless every ratio is in [0, 1] and
    /// they sum to 1 (to within the quantization step).
    fn weights(&self) -> Result<[u64; 3]> {
        let raw = [self.train, self.val, self.test];
        if raw.iter().any(|r| !r.is_finite() || *r < 0.0 || *r > 1.0) {
            return Err(Error::BadRatios(format!("{raw:?} must each lie in [0, 1]")));
        }
        let w = raw.map(|r| (r * RATIO_SCALE as f64).round() as u64);
        let sum: u64 = w.iter().sum();
        if sum.abs_diff(RATIO_SCALE) > 1 {
            return Err(Error::BadRatios(format!(
                "{raw:?} sum to {}",
                raw.iter().sum::<f64>()
            )));
        }
        Ok(w)
    }
}

/// Largest-remainder apportionment of `n` items over the three splits.
pub fn apportion(n: usize, ratios: &SplitRatios) -> Result<[usize; 3]> {
    let w = ratios.weights()?;
    let total: u64 = w.iter().sum();
    let n = n as u64;
    let mut counts = [0u64; 3];
    let mut remainders = [0u64; 3];
    for i in 0..3 {
        counts[i] = n * w[i] / total;
        remainders[i] = n * w[i] % total;
    }
    let assigned: u64 = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    // Stable sort keeps Train > Val > Test among equal remainders.
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]));
    for &i in order.iter().take((n - assigned) as usize) {
        counts[i] += 1;
    }
    Ok(counts.map(|c| c as usize))
}

#[derive(Debug, Clone)]
pub struct SplitOptions {
    pub ratios: SplitRatios,
    pub seed: u64,
    pub stratum: Stratum,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            ratios: SplitRatios::default(),
            seed: 0,
            stratum: Stratum::Family,
        }
    }
}

/// Assigns every record to exactly one split. Output is sorted by record id.
pub fn stratified_split(
    manifest: &DatasetManifest,
    opts: &SplitOptions,
) -> Result<Vec<SplitAssignment>> {
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    opts.ratios.weights()?;

    let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in manifest.records() {
        strata
            .entry(opts.stratum.key(r))
            .or_default()
            .push(r.record_id.as_str());
    }

    let mut out = Vec::with_capacity(manifest.len());
    for (key, mut ids) in strata {
        ids.sort_unstable();
        ids.shuffle(&mut stratum_rng(opts.seed, key));
        let [train, val, _] = apportion(ids.len(), &opts.ratios)?;
        for (pos, id) in ids.into_iter().enumerate() {
            let split = if pos < train {
                Split::Train
            } else if pos < train + val {
                Split::Val
            } else {
                Split::Test
            };
            out.push(SplitAssignment {
                record_id: id.to_string(),
                split,
            });
        }
    }
    out.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    Ok(out)
}

fn stratum_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([0u8]);
    h.update(key.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Writes the `record_id,split` CSV.
pub fn write_splits_csv<W: Write>(assignments: &[SplitAssignment], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["record_id", "split"])?;
    for a in assignments {
        w.write_record([a.record_id.as_str(), a.split.as_str()])?;
    }
    w.flush()
}
