//! Validated in-memory label data: vocabulary, annotations, knowledge edges,
//! and word-embedding tables.
//!
//! Text parsing lives in the `kssnet` crate; the constructors here take
//! already-tokenized records and enforce the invariants.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Matrix, Result};

/// Ordered label names. Position in the list is the label index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVocabulary {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl LabelVocabulary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut index = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::DuplicateLabel(name.clone()));
            }
        }
        Ok(LabelVocabulary { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> Option<&str> {
        self.names.get(i).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub labels: BTreeSet<usize>,
}

/// Multi-label annotations over a vocabulary of `n_labels` labels.
///
/// Samples with no labels are kept; they contribute nothing to co-occurrence
/// statistics and are counted by [`AnnotationSet::empty_samples`].
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    n_labels: usize,
    samples: Vec<Sample>,
}

impl AnnotationSet {
    pub fn new(n_labels: usize, samples: Vec<Sample>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateSample(s.id.clone()));
            }
            if let Some(&bad) = s.labels.iter().find(|&&l| l >= n_labels) {
                return Err(Error::LabelOutOfRange { index: bad, n: n_labels });
            }
        }
        Ok(AnnotationSet { n_labels, samples })
    }

    /// Convenience constructor from bare label-index sets; sample ids are
    /// their positions.
    pub fn from_label_sets<I, L>(n_labels: usize, sets: I) -> Result<Self>
    where
        I: IntoIterator<Item = L>,
        L: IntoIterator<Item = usize>,
    {
        let samples = sets
            .into_iter()
            .enumerate()
            .map(|(i, labels)| Sample { id: i.to_string(), labels: labels.into_iter().collect() })
            .collect();
        AnnotationSet::new(n_labels, samples)
    }

    /// Resolves `(sample_id, label names)` records against `vocab`. Every
    /// unresolvable name is reported in one error.
    pub fn from_named<S: AsRef<str>>(
        vocab: &LabelVocabulary,
        records: impl IntoIterator<Item = (String, Vec<S>)>,
    ) -> Result<Self> {
        let mut unknown = BTreeSet::new();
        let mut samples = Vec::new();
        for (id, names) in records {
            let mut labels = BTreeSet::new();
            for name in &names {
                match vocab.index_of(name.as_ref()) {
                    Some(i) => {
                        labels.insert(i);
                    }
                    None => {
                        unknown.insert(name.as_ref().to_string());
                    }
                }
            }
            samples.push(Sample { id, labels });
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownLabels(unknown.into_iter().collect()));
        }
        AnnotationSet::new(vocab.len(), samples)
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn empty_samples(&self) -> usize {
        self.samples.iter().filter(|s| s.labels.is_empty()).count()
    }

    pub fn mean_labels_per_sample(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let total: usize = self.samples.iter().map(|s| s.labels.len()).sum();
        total as f64 / self.samples.len() as f64
    }

    /// Dense `samples × n_labels` 0/1 target matrix.
    pub fn target_matrix(&self) -> Matrix {
        let mut t = Matrix::zeros(self.samples.len(), self.n_labels);
        for (i, s) in self.samples.iter().enumerate() {
            for &l in &s.labels {
                t[(i, l)] = 1.0;
            }
        }
        t
    }

    /// Relabels every sample with `perm[label]`.
    pub fn permute_labels(&self, perm: &[usize]) -> AnnotationSet {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample { id: s.id.clone(), labels: s.labels.iter().map(|&l| perm[l]).collect() })
            .collect();
        AnnotationSet { n_labels: self.n_labels, samples }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeEdge {
    pub head: usize,
    pub tail: usize,
    pub relation: String,
    pub weight: f64,
}

/// Weighted, typed relations between labels. Several relations may connect
/// the same ordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeEdgeList {
    n_labels: usize,
    edges: Vec<KnowledgeEdge>,
    dropped: usize,
}

impl KnowledgeEdgeList {
    pub fn new(n_labels: usize, edges: Vec<KnowledgeEdge>) -> Result<Self> {
        for e in &edges {
            if e.head >= n_labels || e.tail >= n_labels {
                return Err(Error::LabelOutOfRange { index: e.head.max(e.tail), n: n_labels });
            }
            if !(e.weight >= 0.0) || !e.weight.is_finite() {
                return Err(Error::NegativeWeight {
                    head: e.head.to_string(),
                    tail: e.tail.to_string(),
                    weight: e.weight,
                });
            }
        }
        Ok(KnowledgeEdgeList { n_labels, edges, dropped: 0 })
    }

    /// Resolves `(head, relation, tail, weight)` records. Records naming a
    /// label outside the vocabulary are dropped and counted, since external
    /// knowledge bases rarely cover every label.
    pub fn from_named(
        vocab: &LabelVocabulary,
        records: impl IntoIterator<Item = (String, String, String, f64)>,
    ) -> Result<Self> {
        let mut edges = Vec::new();
        let mut dropped = 0;
        for (head, relation, tail, weight) in records {
            if !(weight >= 0.0) || !weight.is_finite() {
                return Err(Error::NegativeWeight { head, tail, weight });
            }
            match (vocab.index_of(&head), vocab.index_of(&tail)) {
                (Some(h), Some(t)) => edges.push(KnowledgeEdge { head: h, tail: t, relation, weight }),
                _ => dropped += 1,
            }
        }
        Ok(KnowledgeEdgeList { n_labels: vocab.len(), edges, dropped })
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn edges(&self) -> &[KnowledgeEdge] {
        &self.edges
    }

    /// Records dropped during resolution because an endpoint was unknown.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn permute_labels(&self, perm: &[usize]) -> KnowledgeEdgeList {
        let edges = self
            .edges
            .iter()
            .map(|e| KnowledgeEdge { head: perm[e.head], tail: perm[e.tail], ..e.clone() })
            .collect();
        KnowledgeEdgeList { n_labels: self.n_labels, edges, dropped: self.dropped }
    }
}

/// Token → dense vector table (GloVe-style).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter { name: "embedding dim", value: 0.0, range: ">= 1" });
        }
        Ok(EmbeddingTable { dim, rows: BTreeMap::new() })
    }

    pub fn insert(&mut self, token: impl Into<String>, row: Vec<f64>) -> Result<()> {
        let token = token.into();
        if row.len() != self.dim {
            return Err(Error::EmbeddingWidth { token, expected: self.dim, found: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding row"));
        }
        self.rows.insert(token, row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.rows.get(token).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Lowercases and splits a label name on whitespace and hyphens.
pub fn tokenize(label: &str) -> Vec<String> {
    label
        .split(|c: char| c.is_whitespace() || c == '-')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Initial label embeddings, one row per vocabulary entry.
///
/// A label whose lowercased name is itself a table key uses that row.
/// Otherwise the row is the mean of the rows of its resolvable words; words
/// are summed in sorted order so the result does not depend on word order.
pub fn build_initial_embeddings(table: &EmbeddingTable, vocab: &LabelVocabulary) -> Result<Matrix> {
    let mut out = Matrix::zeros(vocab.len(), table.dim());
    for (i, name) in vocab.names().iter().enumerate() {
        let row = out.row_mut(i);
        if let Some(v) = table.get(&name.to_lowercase()) {
            row.copy_from_slice(v);
            continue;
        }
        let mut words = tokenize(name);
        words.sort_unstable();
        let vectors: Vec<&[f64]> = words.iter().filter_map(|w| table.get(w)).collect();
        if vectors.is_empty() {
            return Err(Error::UnresolvedLabel(name.clone()));
        }
        for v in &vectors {
            for (r, x) in row.iter_mut().zip(v.iter()) {
                *r += x;
            }
        }
        let count = vectors.len() as f64;
        for r in row.iter_mut() {
            *r /= count;
        }
    }
    Ok(out)
}
