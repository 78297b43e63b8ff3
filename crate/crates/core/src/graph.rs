//! KS graph construction.
//!
//! The pipeline fuses a statistical co-occurrence graph with a knowledge-prior
//! graph:
//!
//! ```text
//! A_S  = [P(j | i) >= t]                      (binarized conditional probability)
//! A_K  = max relation weight between i and j
//! A    = λ·norm(A_S) + (1 − λ)·norm(A_K)
//! A_τ  = A with entries below τ zeroed
//! A_KS = η·A_τ + (1 − η)·I
//! ```
//!
//! where `norm(X) = D^{-1/2} X D^{-1/2}` with `D` the row-degree diagonal.
//! The GCN consumes `norm(A_KS)`.

use alloc::format;
use alloc::vec::Vec;

use crate::ingest::{AnnotationSet, KnowledgeEdgeList};
use crate::{Error, Matrix, Result};

/// Square, nonnegative, finite matrix over the label set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix(Matrix);

impl AdjacencyMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::shape("AdjacencyMatrix::new", format!("{}x{} is not square", m.rows(), m.cols())));
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("adjacency"));
        }
        if let Some(&v) = m.as_slice().iter().find(|&&v| v < 0.0) {
            return Err(Error::InvalidParameter { name: "adjacency entry", value: v, range: ">= 0" });
        }
        Ok(AdjacencyMatrix(m))
    }

    pub fn identity(n: usize) -> Self {
        AdjacencyMatrix(Matrix::identity(n))
    }

    pub fn zeros(n: usize) -> Self {
        AdjacencyMatrix(Matrix::zeros(n, n))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn is_symmetric(&self) -> bool {
        self.0.is_symmetric()
    }

    pub fn nnz(&self) -> usize {
        self.0.nnz()
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.0.row_sums()
    }

    pub fn permute(&self, perm: &[usize]) -> AdjacencyMatrix {
        AdjacencyMatrix(self.0.permute_symmetric(perm))
    }
}

/// Where the post-superimposing normalization happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizationPlacement {
    /// Threshold and identity-mix the raw convex combination, then normalize
    /// `A_KS` once for the GCN.
    #[default]
    AfterIdentityMix,
    /// Normalize the convex combination before thresholding; `A_KS` is then
    /// passed to the GCN as is.
    AfterSuperimpose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphPipelineConfig {
    /// Weight of the statistical graph in the convex combination.
    pub lambda: f64,
    /// Entries of the combined graph below this are dropped.
    pub tau: f64,
    /// Weight of the filtered graph against the identity.
    pub eta: f64,
    /// Conditional-probability cut for binarizing the statistical graph.
    pub binarize_threshold: f64,
    pub normalization: NormalizationPlacement,
}

impl GraphPipelineConfig {
    /// Image setting: λ = 0.4, τ = 0.02, η = 0.4.
    pub const COCO: GraphPipelineConfig = GraphPipelineConfig {
        lambda: 0.4,
        tau: 0.02,
        eta: 0.4,
        binarize_threshold: 0.4,
        normalization: NormalizationPlacement::AfterIdentityMix,
    };

    /// Video setting: λ = 0.6, τ = 0.03, η = 0.4.
    pub const CHARADES: GraphPipelineConfig = GraphPipelineConfig {
        lambda: 0.6,
        tau: 0.03,
        eta: 0.4,
        binarize_threshold: 0.4,
        normalization: NormalizationPlacement::AfterIdentityMix,
    };

    pub fn validate(&self) -> Result<()> {
        check_unit("lambda", self.lambda)?;
        check_unit("eta", self.eta)?;
        check_unit("binarize_threshold", self.binarize_threshold)?;
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidParameter { name: "tau", value: self.tau, range: "[0, inf)" });
        }
        Ok(())
    }
}

impl Default for GraphPipelineConfig {
    fn default() -> Self {
        GraphPipelineConfig::COCO
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, value, range: "[0, 1]" })
    }
}

/// Pairwise and per-label occurrence counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Cooccurrence {
    /// `pairs[(i, j)]`: samples containing both `i` and `j`; zero diagonal.
    pub pairs: Matrix,
    /// `labels[i]`: samples containing `i`.
    pub labels: Vec<f64>,
}

pub fn cooccurrence_counts(ann: &AnnotationSet, n: usize) -> Result<Cooccurrence> {
    if ann.n_labels() != n {
        return Err(Error::shape("cooccurrence_counts", format!("annotations over {} labels, expected {n}", ann.n_labels())));
    }
    let mut pairs = Matrix::zeros(n, n);
    let mut labels = alloc::vec![0.0; n];
    for s in ann.samples() {
        for &i in &s.labels {
            labels[i] += 1.0;
            for &j in &s.labels {
                if i != j {
                    pairs[(i, j)] += 1.0;
                }
            }
        }
    }
    Ok(Cooccurrence { pairs, labels })
}

/// Conditional probabilities `P[i][j] = M[i][j] / N[i]`, zero when `N[i] = 0`.
pub fn conditional_probabilities(counts: &Cooccurrence) -> Matrix {
    let n = counts.labels.len();
    Matrix::from_fn(n, n, |i, j| {
        if counts.labels[i] > 0.0 {
            counts.pairs[(i, j)] / counts.labels[i]
        } else {
            0.0
        }
    })
}

/// Binarized statistical graph: `A_S[i][j] = 1` iff `P(j | i) >= t`, zero diagonal.
pub fn statistical_adjacency(counts: &Cooccurrence, t: f64) -> AdjacencyMatrix {
    let p = conditional_probabilities(counts);
    let n = p.rows();
    AdjacencyMatrix(Matrix::from_fn(n, n, |i, j| if i != j && p[(i, j)] >= t { 1.0 } else { 0.0 }))
}

/// Knowledge graph: each entry is the largest weight over all relations
/// linking the two labels, in either direction.
pub fn knowledge_adjacency(edges: &KnowledgeEdgeList, n: usize) -> Result<AdjacencyMatrix> {
    if edges.n_labels() != n {
        return Err(Error::shape("knowledge_adjacency", format!("edges over {} labels, expected {n}", edges.n_labels())));
    }
    let mut a = Matrix::zeros(n, n);
    for e in edges.edges() {
        for (i, j) in [(e.head, e.tail), (e.tail, e.head)] {
            if e.weight > a[(i, j)] {
                a[(i, j)] = e.weight;
            }
        }
    }
    Ok(AdjacencyMatrix(a))
}

/// `D^{-1/2} A D^{-1/2}` with row-sum degrees. Zero-degree nodes get
/// `D^{-1/2} = 0`, leaving their rows and columns zero.
pub fn normalize(a: &AdjacencyMatrix) -> AdjacencyMatrix {
    let d = a.degrees();
    let n = a.n();
    AdjacencyMatrix(Matrix::from_fn(n, n, |i, j| {
        let v = a.get(i, j);
        if v == 0.0 || d[i] <= 0.0 || d[j] <= 0.0 {
            0.0
        } else {
            v / libm::sqrt(d[i] * d[j])
        }
    }))
}

/// `λ·a + (1 − λ)·b`.
pub fn superimpose(a: &AdjacencyMatrix, b: &AdjacencyMatrix, lambda: f64) -> Result<AdjacencyMatrix> {
    check_unit("lambda", lambda)?;
    let m = a.0.zip_with(&b.0, "superimpose", |x, y| lambda * x + (1.0 - lambda) * y)?;
    Ok(AdjacencyMatrix(m))
}

/// Zeroes entries strictly below `tau`.
pub fn threshold_filter(a: &AdjacencyMatrix, tau: f64) -> Result<AdjacencyMatrix> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter { name: "tau", value: tau, range: "[0, inf)" });
    }
    Ok(AdjacencyMatrix(a.0.map(|v| if v < tau { 0.0 } else { v })))
}

/// `η·a + (1 − η)·I`.
pub fn identity_mix(a: &AdjacencyMatrix, eta: f64) -> Result<AdjacencyMatrix> {
    check_unit("eta", eta)?;
    let n = a.n();
    Ok(AdjacencyMatrix(Matrix::from_fn(n, n, |i, j| {
        let self_loop = if i == j { 1.0 - eta } else { 0.0 };
        eta * a.get(i, j) + self_loop
    })))
}

/// Ordered pairs with a nonzero entry.
pub fn edge_set(a: &AdjacencyMatrix) -> Vec<(usize, usize)> {
    let n = a.n();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if a.get(i, j) != 0.0 {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Every intermediate of the KS-graph pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct KsGraph {
    pub statistical: AdjacencyMatrix,
    pub knowledge: AdjacencyMatrix,
    pub statistical_normalized: AdjacencyMatrix,
    pub knowledge_normalized: AdjacencyMatrix,
    /// Convex combination (normalized when placement is `AfterSuperimpose`).
    pub superimposed: AdjacencyMatrix,
    pub filtered: AdjacencyMatrix,
    /// `A_KS`.
    pub ks: AdjacencyMatrix,
    /// `A_KS'`, the propagation matrix for the GCN.
    pub ks_normalized: AdjacencyMatrix,
}

pub fn build_ks_graph(
    ann: &AnnotationSet,
    edges: &KnowledgeEdgeList,
    config: &GraphPipelineConfig,
) -> Result<KsGraph> {
    config.validate()?;
    let n = ann.n_labels();
    let counts = cooccurrence_counts(ann, n)?;
    let statistical = statistical_adjacency(&counts, config.binarize_threshold);
    let knowledge = knowledge_adjacency(edges, n)?;
    let statistical_normalized = normalize(&statistical);
    let knowledge_normalized = normalize(&knowledge);
    let mut superimposed = superimpose(&statistical_normalized, &knowledge_normalized, config.lambda)?;
    if config.normalization == NormalizationPlacement::AfterSuperimpose {
        superimposed = normalize(&superimposed);
    }
    let filtered = threshold_filter(&superimposed, config.tau)?;
    let ks = identity_mix(&filtered, config.eta)?;
    let ks_normalized = match config.normalization {
        NormalizationPlacement::AfterIdentityMix => normalize(&ks),
        NormalizationPlacement::AfterSuperimpose => ks.clone(),
    };
    Ok(KsGraph {
        statistical,
        knowledge,
        statistical_normalized,
        knowledge_normalized,
        superimposed,
        filtered,
        ks,
        ks_normalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::KnowledgeEdge;
    use alloc::string::ToString;
    use alloc::vec;

    fn adj(rows: &[[f64; 2]]) -> AdjacencyMatrix {
        AdjacencyMatrix::new(Matrix::from_rows(rows)).unwrap()
    }

    #[test]
    fn cooccurrence_examples() {
        let ann = AnnotationSet::from_label_sets(2, [vec![0, 1], vec![0]]).unwrap();
        let c = cooccurrence_counts(&ann, 2).unwrap();
        assert_eq!(c.pairs, Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
        assert_eq!(c.labels, vec![2.0, 1.0]);

        let empty = AnnotationSet::from_label_sets(2, Vec::<Vec<usize>>::new()).unwrap();
        let c = cooccurrence_counts(&empty, 2).unwrap();
        assert_eq!(c.pairs, Matrix::zeros(2, 2));
        assert_eq!(c.labels, vec![0.0, 0.0]);

        let ann = AnnotationSet::from_label_sets(2, [vec![0, 1], vec![0, 1], vec![0, 1]]).unwrap();
        let c = cooccurrence_counts(&ann, 2).unwrap();
        assert_eq!(c.pairs[(0, 1)], 3.0);
        assert_eq!(c.labels, vec![3.0, 3.0]);
    }

    #[test]
    fn statistical_adjacency_examples() {
        let counts = Cooccurrence { pairs: Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]), labels: vec![1.0, 2.0] };
        let a = statistical_adjacency(&counts, 0.4);
        assert_eq!(a.matrix(), &Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
        // P(0|1) = 0.5 sits exactly on the threshold and is kept.
        let a = statistical_adjacency(&counts, 0.5);
        assert_eq!(a.get(1, 0), 1.0);
        let a = statistical_adjacency(&counts, 0.6);
        assert_eq!(a.get(1, 0), 0.0);

        let zero = Cooccurrence { pairs: Matrix::zeros(3, 3), labels: vec![0.0; 3] };
        assert_eq!(statistical_adjacency(&zero, 0.4).nnz(), 0);
    }

    #[test]
    fn knowledge_adjacency_takes_max_relation() {
        let edge = |rel: &str, w| KnowledgeEdge { head: 0, tail: 1, relation: rel.to_string(), weight: w };
        let k = KnowledgeEdgeList::new(3, vec![edge("used_for", 0.5), edge("is_a", 1.0)]).unwrap();
        let a = knowledge_adjacency(&k, 3).unwrap();
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(1, 0), 1.0);
        assert_eq!(a.get(0, 2), 0.0);
        let k = KnowledgeEdgeList::new(2, vec![edge("r", 0.7)]).unwrap();
        assert_eq!(knowledge_adjacency(&k, 2).unwrap().get(0, 1), 0.7);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&AdjacencyMatrix::identity(2)), AdjacencyMatrix::identity(2));
        assert_eq!(normalize(&adj(&[[0.0, 2.0], [2.0, 0.0]])), adj(&[[0.0, 1.0], [1.0, 0.0]]));
        let a = AdjacencyMatrix::new(Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 1.0]])).unwrap();
        let n = normalize(&a);
        for k in 0..3 {
            assert_eq!(n.get(1, k), 0.0);
            assert_eq!(n.get(k, 1), 0.0);
        }
    }

    #[test]
    fn superimpose_examples() {
        let s = adj(&[[0.0, 1.0], [1.0, 0.0]]);
        let k = adj(&[[0.0, 0.5], [0.5, 0.0]]);
        assert_eq!(superimpose(&s, &k, 1.0).unwrap(), s);
        assert_eq!(superimpose(&s, &k, 0.0).unwrap(), k);
        let a = superimpose(&s, &k, 0.4).unwrap();
        assert!(a.matrix().max_abs_diff(&Matrix::from_rows(&[[0.0, 0.7], [0.7, 0.0]])) < 1e-15);
        assert!(superimpose(&s, &AdjacencyMatrix::identity(3), 0.5).is_err());
        assert!(superimpose(&s, &k, 1.5).is_err());
    }

    #[test]
    fn threshold_examples() {
        let a = adj(&[[0.15, 0.2], [0.3, 0.0]]);
        assert_eq!(threshold_filter(&a, 0.0).unwrap(), a);
        let f = threshold_filter(&a, 0.2).unwrap();
        assert_eq!(f, adj(&[[0.0, 0.2], [0.3, 0.0]]));
    }

    #[test]
    fn identity_mix_examples() {
        let a = adj(&[[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(identity_mix(&a, 1.0).unwrap(), a);
        assert_eq!(identity_mix(&a, 0.0).unwrap(), AdjacencyMatrix::identity(2));
        let m = identity_mix(&a, 0.4).unwrap();
        assert!(m.matrix().max_abs_diff(&Matrix::from_rows(&[[0.6, 0.4], [0.4, 0.6]])) < 1e-15);
    }

    #[test]
    fn edge_set_examples() {
        assert_eq!(edge_set(&AdjacencyMatrix::identity(2)), vec![(0, 0), (1, 1)]);
        assert!(edge_set(&AdjacencyMatrix::zeros(2)).is_empty());
        assert_eq!(edge_set(&adj(&[[0.5, 0.2], [0.0, 0.0]])), vec![(0, 0), (0, 1)]);
    }

    #[test]
    fn pipeline_endpoints() {
        let ann = AnnotationSet::from_label_sets(3, [vec![0, 1], vec![1, 2], vec![0, 1, 2], vec![2]]).unwrap();
        let k = KnowledgeEdgeList::new(
            3,
            vec![KnowledgeEdge { head: 0, tail: 2, relation: "r".to_string(), weight: 0.3 }],
        )
        .unwrap();
        let cfg = GraphPipelineConfig { lambda: 1.0, tau: 0.0, eta: 1.0, ..GraphPipelineConfig::COCO };
        let g = build_ks_graph(&ann, &k, &cfg).unwrap();
        assert_eq!(g.ks, g.statistical_normalized);
        let cfg = GraphPipelineConfig { lambda: 0.0, tau: 0.0, eta: 0.0, ..GraphPipelineConfig::COCO };
        let g = build_ks_graph(&ann, &k, &cfg).unwrap();
        assert_eq!(g.ks, AdjacencyMatrix::identity(3));
        assert_eq!(g.ks_normalized, AdjacencyMatrix::identity(3));
    }

    #[test]
    fn config_validation() {
        assert!(GraphPipelineConfig::COCO.validate().is_ok());
        assert!(GraphPipelineConfig::CHARADES.validate().is_ok());
        let bad = GraphPipelineConfig { lambda: 1.5, ..GraphPipelineConfig::COCO };
        assert!(matches!(bad.validate(), Err(Error::InvalidParameter { name: "lambda", .. })));
        let bad = GraphPipelineConfig { tau: -0.1, ..GraphPipelineConfig::COCO };
        assert!(bad.validate().is_err());
    }
}
