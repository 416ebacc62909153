// SPDX-License-Identifier: Apache-2.0

//! Exact cosine-similarity search over a fixed set of reference embeddings.

mod persist;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use persist::{load_index, save_index, sidecar_path, INDEX_MAGIC, INDEX_VERSION};

use crate::error::{Error, Result};
use crate::types::{dot, norm, Coast, EmbeddingVector};

/// `dot(a, b) / (|a| |b|)` in double precision.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot(a.as_slice(), b.as_slice()) / (na * nb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub record_id: String,
    pub similarity: f64,
}

/// One reference entry, borrowed from the index.
#[derive(Debug, Clone, Copy)]
pub struct IndexEntry<'a> {
    pub record_id: &'a str,
    pub coast: Coast,
    pub vector: &'a [f32],
}

/// Immutable reference set. Entries are kept sorted by record id so the
/// layout, the fingerprint and every search result are independent of the
/// order items were supplied in.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    coasts: Vec<Coast>,
    data: Vec<f32>,
    norms: Vec<f64>,
    fingerprint: u64,
}

impl VectorIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// 64-bit content hash: the first eight bytes of SHA-256 over the
    /// canonical entry sequence.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        format!("{:016x}", self.fingerprint)
    }

    pub fn entry(&self, i: usize) -> IndexEntry<'_> {
        IndexEntry {
            record_id: &self.ids[i],
            coast: self.coasts[i],
            vector: self.vector(i),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = IndexEntry<'_>> + '_ {
        (0..self.len()).map(|i| self.entry(i))
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major vector storage, `len * dim` values.
    pub fn raw_data(&self) -> &[f32] {
        &self.data
    }

    pub fn count_by_coast(&self, coast: Coast) -> usize {
        self.coasts.iter().filter(|&&c| c == coast).count()
    }

    /// Cosine similarity of `query` to every entry, in canonical order.
    pub fn similarities(&self, query: &EmbeddingVector) -> Result<Vec<f64>> {
        let qn = self.check_query(query)?;
        let q = query.as_slice();
        Ok((0..self.len())
            .map(|i| dot(q, self.vector(i)) / (qn * self.norms[i]))
            .collect())
    }

    /// The `min(k, len)` most similar entries, most similar first; equal
    /// similarities are ordered by ascending record id.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        let qn = self.check_query(query)?;
        let q = query.as_slice();
        let k = k.min(self.len());

        // Max-heap on "worse" so the root is the weakest kept candidate.
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for i in 0..self.len() {
            let c = Candidate {
                sim: dot(q, self.vector(i)) / (qn * self.norms[i]),
                pos: i,
            };
            if heap.len() < k {
                heap.push(c);
            } else if c < *heap.peek().expect("k >= 1") {
                heap.pop();
                heap.push(c);
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| Neighbor {
                record_id: self.ids[c.pos].clone(),
                similarity: c.sim,
            })
            .collect())
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<f64> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let qn = query.norm();
        if qn == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(qn)
    }

    pub(crate) fn from_sorted_parts(
        dim: usize,
        ids: Vec<String>,
        coasts: Vec<Coast>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let mut norms = Vec::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            let v = &data[i * dim..(i + 1) * dim];
            if let Some(p) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(p));
            }
            let n = norm(v);
            if n == 0.0 {
                return Err(Error::InvalidField {
                    context: format!("entry `{id}`"),
                    field: "vector".into(),
                    message: "zero vector has no direction".into(),
                });
            }
            norms.push(n);
        }
        let fingerprint = fingerprint(dim, &ids, &coasts, &data);
        Ok(VectorIndex {
            dim,
            ids,
            coasts,
            data,
            norms,
            fingerprint,
        })
    }
}

/// Ordering where "less" means "better": higher similarity, then lower
/// position (= smaller record id).
#[derive(Debug, Clone, Copy)]
struct Candidate {
    sim: f64,
    pos: usize,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .sim
            .total_cmp(&self.sim)
            .then(self.pos.cmp(&other.pos))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

fn fingerprint(dim: usize, ids: &[String], coasts: &[Coast], data: &[f32]) -> u64 {
    let mut h = Sha256::new();
    h.update((dim as u64).to_le_bytes());
    h.update((ids.len() as u64).to_le_bytes());
    for (i, id) in ids.iter().enumerate() {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
        h.update([coasts[i].index() as u8]);
        for v in &data[i * dim..(i + 1) * dim] {
            h.update(v.to_le_bytes());
        }
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Builds an index from `(record_id, coast, vector)` items in any order.
pub fn build_index(items: Vec<(String, Coast, EmbeddingVector)>) -> Result<VectorIndex> {
    let Some(first) = items.first() else {
        return Err(Error::Empty);
    };
    let dim = first.2.dim();
    if dim == 0 {
        return Err(Error::InvalidConfig(
            "index vectors must have dim >= 1".into(),
        ));
    }
    let mut items = items;
    for (_, _, v) in &items {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.dim(),
            });
        }
    }
    items.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = items.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateId {
            context: "index".into(),
            id: w[0].0.clone(),
        });
    }
    let mut ids = Vec::with_capacity(items.len());
    let mut coasts = Vec::with_capacity(items.len());
    let mut data = Vec::with_capacity(items.len() * dim);
    for (id, coast, v) in items {
        ids.push(id);
        coasts.push(coast);
        data.extend_from_slice(v.as_slice());
    }
    VectorIndex::from_sorted_parts(dim, ids, coasts, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    fn item(id: &str, coast: Coast, x: &[f32]) -> (String, Coast, EmbeddingVector) {
        (id.to_string(), coast, v(x))
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fingerprint_ignores_input_order() {
        let a = vec![
            item("a", Coast::Pacific, &[1.0, 0.0]),
            item("b", Coast::Caribbean, &[0.0, 1.0]),
            item("c", Coast::Pacific, &[1.0, 1.0]),
        ];
        let mut b = a.clone();
        b.reverse();
        b.swap(0, 1);
        let (ia, ib) = (build_index(a).unwrap(), build_index(b).unwrap());
        assert_eq!(ia.fingerprint(), ib.fingerprint());
        assert_eq!(ia, ib);
    }

    #[test]
    fn fingerprint_sees_labels() {
        let a = build_index(vec![item("a", Coast::Pacific, &[1.0])]).unwrap();
        let b = build_index(vec![item("a", Coast::Caribbean, &[1.0])]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn build_errors() {
        assert!(matches!(build_index(vec![]), Err(Error::Empty)));
        assert!(matches!(
            build_index(vec![
                item("a", Coast::Pacific, &[1.0]),
                item("a", Coast::Pacific, &[2.0])
            ]),
            Err(Error::DuplicateId { .. })
        ));
        assert!(matches!(
            build_index(vec![
                item("a", Coast::Pacific, &[1.0]),
                item("b", Coast::Pacific, &[2.0, 1.0])
            ]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(build_index(vec![item("z", Coast::Pacific, &[0.0, 0.0])]).is_err());
    }

    #[test]
    fn top_one_exact_match() {
        let idx = build_index(vec![
            item("x", Coast::Pacific, &[1.0, 0.0]),
            item("y", Coast::Caribbean, &[0.0, 1.0]),
        ])
        .unwrap();
        let n = idx.top_k(&v(&[1.0, 0.0]), 1).unwrap();
        assert_eq!(
            n,
            vec![Neighbor {
                record_id: "x".into(),
                similarity: 1.0
            }]
        );
    }

    #[test]
    fn k_clamps_to_size() {
        let idx = build_index(vec![
            item("x", Coast::Pacific, &[1.0, 0.0]),
            item("y", Coast::Caribbean, &[0.0, 1.0]),
        ])
        .unwrap();
        let n = idx.top_k(&v(&[1.0, 0.2]), 10).unwrap();
        assert_eq!(n.len(), 2);
        assert_eq!(n[0].record_id, "x");
    }

    #[test]
    fn ties_break_by_record_id() {
        let idx = build_index(vec![
            item("c", Coast::Pacific, &[1.0, 0.0]),
            item("a", Coast::Pacific, &[2.0, 0.0]),
            item("b", Coast::Pacific, &[0.5, 0.0]),
            item("d", Coast::Pacific, &[0.0, 1.0]),
        ])
        .unwrap();
        let ids: Vec<_> = idx
            .top_k(&v(&[1.0, 0.0]), 3)
            .unwrap()
            .into_iter()
            .map(|n| n.record_id)
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn query_errors() {
        let idx = build_index(vec![item("x", Coast::Pacific, &[1.0, 0.0])]).unwrap();
        assert!(matches!(
            idx.top_k(&v(&[0.0, 0.0]), 1),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            idx.top_k(&v(&[1.0]), 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(idx.top_k(&v(&[1.0, 0.0]), 0).is_err());
    }
}
