// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ShellClass};
use crate::error::{Error, Result};
use crate::types::{Coast, EmbeddingVector};

/// Composition figures for one coast.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoastStats {
    pub species_count: usize,
    pub image_count: usize,
    pub gastropod_species: usize,
    pub bivalve_species: usize,
    /// `image_count / species_count` rounded half-up to one decimal.
    pub avg_images_per_species: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub pacific: CoastStats,
    pub caribbean: CoastStats,
}

impl DatasetStats {
    pub fn coast(&self, coast: Coast) -> &CoastStats {
        match coast {
            Coast::Pacific => &self.pacific,
            Coast::Caribbean => &self.caribbean,
        }
    }

    pub fn to_markdown(&self) -> String {
        let p = &self.pacific;
        let c = &self.caribbean;
        let mut s = String::from("| Metric | Pacific | Caribbean |\n|---|---:|---:|\n");
        s += &format!(
            "| Total Species | {} | {} |\n",
            p.species_count, c.species_count
        );
        s += &format!("| Total Images | {} | {} |\n", p.image_count, c.image_count);
        s += &format!(
            "| Gastropod Species | {} | {} |\n",
            p.gastropod_species, c.gastropod_species
        );
        s += &format!(
            "| Bivalve Species | {} | {} |\n",
            p.bivalve_species, c.bivalve_species
        );
        s += &format!(
            "| Avg. Images/Species | {:.1} | {:.1} |\n",
            p.avg_images_per_species, c.avg_images_per_species
        );
        s
    }
}

/// Rounds `num / den` half-up to one decimal using integer arithmetic.
/// A zero denominator yields 0.0.
pub fn ratio_one_decimal(num: usize, den: usize) -> f64 {
    if den == 0 {
        return 0.0;
    }
    let (num, den) = (num as u128, den as u128);
    let tenths = (20 * num + den) / (2 * den);
    tenths as f64 / 10.0
}

/// Per-coast composition. A species is counted once per coast; its shell
/// class is taken from its record with the smallest id.
pub fn compute_stats(manifest: &DatasetManifest) -> DatasetStats {
    let mut species: BTreeMap<(Coast, &str), (&str, ShellClass)> = BTreeMap::new();
    let mut images: HashMap<Coast, usize> = HashMap::new();
    for r in manifest.records() {
        *images.entry(r.coast).or_default() += 1;
        species
            .entry((r.coast, r.species.as_str()))
            .and_modify(|(id, class)| {
                if r.record_id.as_str() < *id {
                    *id = &r.record_id;
                    *class = r.shell_class;
                }
            })
            .or_insert((&r.record_id, r.shell_class));
    }

    let per_coast = |coast: Coast| {
        let mut s = CoastStats {
            image_count: images.get(&coast).copied().unwrap_or(0),
            ..Default::default()
        };
        for (_, class) in species
            .iter()
            .filter(|((c, _), _)| *c == coast)
            .map(|(_, v)| *v)
        {
            s.species_count += 1;
            match class {
                ShellClass::Gastropod => s.gastropod_species += 1,
                ShellClass::Bivalve => s.bivalve_species += 1,
            }
        }
        s.avg_images_per_species = ratio_one_decimal(s.image_count, s.species_count);
        s
    };

    DatasetStats {
        pacific: per_coast(Coast::Pacific),
        caribbean: per_coast(Coast::Caribbean),
    }
}

/// Arithmetic mean embedding per species, keyed by species name.
pub fn species_mean_embeddings(
    manifest: &DatasetManifest,
    embeddings: &HashMap<String, EmbeddingVector>,
) -> Result<BTreeMap<String, EmbeddingVector>> {
    let mut dim = None;
    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for r in manifest.records() {
        let v = embeddings
            .get(&r.record_id)
            .ok_or_else(|| Error::MissingEmbedding(r.record_id.clone()))?;
        let expected = *dim.get_or_insert(v.dim());
        if v.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: v.dim(),
            });
        }
        let (acc, n) = sums
            .entry(r.species.as_str())
            .or_insert_with(|| (vec![0.0; expected], 0));
        for (a, &x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x as f64;
        }
        *n += 1;
    }
    sums.into_iter()
        .map(|(sp, (acc, n))| {
            let mean: Vec<f64> = acc.into_iter().map(|a| a / n as f64).collect();
            Ok((sp.to_string(), EmbeddingVector::from_f64(&mean)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::manifest::ManifestRecord;

    fn rec(id: &str, coast: Coast, species: &str, class: ShellClass) -> ManifestRecord {
        ManifestRecord {
            record_id: id.into(),
            image_path: String::new(),
            coast,
            family: "F".into(),
            genus: "G".into(),
            species: species.into(),
            shell_class: class,
        }
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(ratio_one_decimal(9505, 237), 40.1);
        assert_eq!(ratio_one_decimal(9553, 279), 34.2);
        assert_eq!(ratio_one_decimal(1, 4), 0.3);
        assert_eq!(ratio_one_decimal(5, 0), 0.0);
    }

    #[test]
    fn empty_coast_reports_zero() {
        let m =
            DatasetManifest::new(vec![rec("a", Coast::Pacific, "s", ShellClass::Bivalve)]).unwrap();
        let s = compute_stats(&m);
        assert_eq!(s.caribbean, CoastStats::default());
        assert_eq!(s.pacific.species_count, 1);
        assert_eq!(s.pacific.bivalve_species, 1);
        assert_eq!(s.pacific.avg_images_per_species, 1.0);
    }

    #[test]
    fn species_counted_per_coast() {
        let m = DatasetManifest::new(vec![
            rec("a", Coast::Pacific, "s1", ShellClass::Gastropod),
            rec("b", Coast::Pacific, "s1", ShellClass::Gastropod),
            rec("c", Coast::Pacific, "s2", ShellClass::Bivalve),
            rec("d", Coast::Caribbean, "s1", ShellClass::Gastropod),
        ])
        .unwrap();
        let s = compute_stats(&m);
        assert_eq!(s.pacific.species_count, 2);
        assert_eq!(s.pacific.image_count, 3);
        assert_eq!(s.pacific.gastropod_species, 1);
        assert_eq!(s.caribbean.species_count, 1);
    }

    #[test]
    fn two_point_mean() {
        let m = DatasetManifest::new(vec![
            rec("a", Coast::Pacific, "s", ShellClass::Gastropod),
            rec("b", Coast::Pacific, "s", ShellClass::Gastropod),
        ])
        .unwrap();
        let emb = HashMap::from([
            (
                "a".to_string(),
                EmbeddingVector::new(vec![1.0, 0.0]).unwrap(),
            ),
            (
                "b".to_string(),
                EmbeddingVector::new(vec![0.0, 1.0]).unwrap(),
            ),
        ]);
        let means = species_mean_embeddings(&m, &emb).unwrap();
        assert_eq!(means["s"].as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn single_vector_mean_is_identity() {
        let m = DatasetManifest::new(vec![rec("a", Coast::Pacific, "s", ShellClass::Gastropod)])
            .unwrap();
        let v = EmbeddingVector::new(vec![0.25, -3.5, 7.0]).unwrap();
        let emb = HashMap::from([("a".to_string(), v.clone())]);
        assert_eq!(species_mean_embeddings(&m, &emb).unwrap()["s"], v);
    }

    #[test]
    fn missing_and_mismatched_embeddings() {
        let m = DatasetManifest::new(vec![
            rec("a", Coast::Pacific, "s", ShellClass::Gastropod),
            rec("b", Coast::Pacific, "s", ShellClass::Gastropod),
        ])
        .unwrap();
        let only_a = HashMap::from([("a".to_string(), EmbeddingVector::new(vec![1.0]).unwrap())]);
        assert!(matches!(
            species_mean_embeddings(&m, &only_a),
            Err(Error::MissingEmbedding(id)) if id == "b"
        ));
        let ragged = HashMap::from([
            ("a".to_string(), EmbeddingVector::new(vec![1.0]).unwrap()),
            (
                "b".to_string(),
                EmbeddingVector::new(vec![1.0, 2.0]).unwrap(),
            ),
        ]);
        assert!(matches!(
            species_mean_embeddings(&m, &ragged),
            Err(Error::DimensionMismatch {
                expected: 1,
                actual: 2
            })
        ));
    }
}
