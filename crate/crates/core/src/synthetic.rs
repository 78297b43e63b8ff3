//! Planted-co-occurrence image dataset.
//!
//! Each label is a colored sprite (4 colors × 2 shapes). Labels come in
//! pairs `(2k, 2k+1)`: the anchor `2k` appears independently with
//! probability `anchor_rate`; its partner appears with probability
//! `partner_given_anchor` when the anchor is present and
//! `partner_given_absent` otherwise. The conditional-probability matrix is
//! therefore known in closed form (see [`expected_conditionals`]).
//!
//! Images are `3 × size × size`: the canvas is split into 4×4 cells, every
//! present label is drawn as a 3×3 sprite in its own random cell at a random
//! offset, and Gaussian noise is added everywhere.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::ingest::{AnnotationSet, EmbeddingTable, KnowledgeEdge, KnowledgeEdgeList, LabelVocabulary, Sample};
use crate::lateral::FeatureMap;
use crate::{Error, Matrix, Result};

pub const COLORS: [(&str, [f64; 3]); 4] = [
    ("red", [1.0, 0.0, 0.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("yellow", [1.0, 1.0, 0.0]),
];

pub const SHAPES: [(&str, [[u8; 3]; 3]); 2] = [
    ("square", [[1, 1, 1], [1, 0, 1], [1, 1, 1]]),
    ("cross", [[0, 1, 0], [1, 1, 1], [0, 1, 0]]),
];

const CELL: usize = 4;

/// Number of distinct sprites.
pub const MAX_LABELS: usize = COLORS.len() * SHAPES.len();

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// Even, at most [`MAX_LABELS`].
    pub n_labels: usize,
    pub samples: usize,
    /// Side length in pixels; a multiple of 4.
    pub image_size: usize,
    pub anchor_rate: f64,
    pub partner_given_anchor: f64,
    pub partner_given_absent: f64,
    /// Sprite intensity of partner labels relative to anchors.
    pub partner_contrast: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_labels: 8,
            samples: 2000,
            image_size: 16,
            anchor_rate: 0.35,
            partner_given_anchor: 0.8,
            partner_given_absent: 0.05,
            partner_contrast: 1.0,
            noise_std: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_labels == 0 || self.n_labels % 2 != 0 || self.n_labels > MAX_LABELS {
            return Err(Error::InvalidParameter { name: "n_labels", value: self.n_labels as f64, range: "even, 2..=8" });
        }
        if self.image_size == 0 || self.image_size % CELL != 0 {
            return Err(Error::InvalidParameter { name: "image_size", value: self.image_size as f64, range: "positive multiple of 4" });
        }
        let cells = (self.image_size / CELL) * (self.image_size / CELL);
        if cells < self.n_labels {
            return Err(Error::InvalidParameter { name: "image_size", value: self.image_size as f64, range: "one cell per label" });
        }
        for (name, v) in [
            ("anchor_rate", self.anchor_rate),
            ("partner_given_anchor", self.partner_given_anchor),
            ("partner_given_absent", self.partner_given_absent),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter { name, value: v, range: "[0, 1]" });
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidParameter { name: "noise_std", value: self.noise_std, range: "[0, inf)" });
        }
        Ok(())
    }
}

/// Label `i` → `(color, shape)`. Anchors and partners share a shape but not
/// a color, so a pair is never distinguishable by shape alone.
fn sprite_of(label: usize) -> (usize, usize) {
    let pair = label / 2;
    let shape = pair % SHAPES.len();
    let color = (label % 2) * 2 + pair / SHAPES.len();
    (color % COLORS.len(), shape)
}

pub fn label_name(label: usize) -> String {
    let (c, s) = sprite_of(label);
    format!("{} {}", COLORS[c].0, SHAPES[s].0)
}

pub fn vocabulary(n_labels: usize) -> Result<LabelVocabulary> {
    LabelVocabulary::new((0..n_labels).map(label_name))
}

/// Random word vectors for every color and shape word.
pub fn embedding_table(dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = EmbeddingTable::new(dim)?;
    for word in COLORS.iter().map(|c| c.0).chain(SHAPES.iter().map(|s| s.0)) {
        let row = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        table.insert(word, row)?;
    }
    Ok(table)
}

/// Prior relations: each anchor is related to its partner, and sprites
/// sharing a shape are weakly related.
pub fn knowledge_edges(n_labels: usize) -> Result<KnowledgeEdgeList> {
    let mut edges = Vec::new();
    for a in (0..n_labels).step_by(2) {
        edges.push(KnowledgeEdge { head: a, tail: a + 1, relation: "RelatedTo".to_string(), weight: 0.9 });
    }
    for i in 0..n_labels {
        for j in i + 1..n_labels {
            if sprite_of(i).1 == sprite_of(j).1 {
                edges.push(KnowledgeEdge { head: i, tail: j, relation: "SimilarTo".to_string(), weight: 0.3 });
            }
        }
    }
    KnowledgeEdgeList::new(n_labels, edges)
}

/// Population conditional probabilities `P(j | i)` implied by the config.
pub fn expected_conditionals(cfg: &SyntheticConfig) -> Matrix {
    let n = cfg.n_labels;
    let pa = cfg.anchor_rate;
    let pp = pa * cfg.partner_given_anchor + (1.0 - pa) * cfg.partner_given_absent;
    let marginal = |l: usize| if l % 2 == 0 { pa } else { pp };
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else if i / 2 != j / 2 {
            marginal(j)
        } else if i % 2 == 0 {
            cfg.partner_given_anchor
        } else if pp > 0.0 {
            pa * cfg.partner_given_anchor / pp
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<FeatureMap>,
    pub annotations: AnnotationSet,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn targets(&self) -> Matrix {
        self.annotations.target_matrix()
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|_| Error::InvalidParameter { name: "noise_std", value: cfg.noise_std, range: "[0, inf)" })?;
    let size = cfg.image_size;
    let grid = size / CELL;
    let mut cells: Vec<usize> = (0..grid * grid).collect();
    let mut inputs = Vec::with_capacity(cfg.samples);
    let mut samples = Vec::with_capacity(cfg.samples);
    for idx in 0..cfg.samples {
        let mut labels = Vec::new();
        for a in (0..cfg.n_labels).step_by(2) {
            let anchor = rng.random::<f64>() < cfg.anchor_rate;
            let p = if anchor { cfg.partner_given_anchor } else { cfg.partner_given_absent };
            let partner = rng.random::<f64>() < p;
            if anchor {
                labels.push(a);
            }
            if partner {
                labels.push(a + 1);
            }
        }
        let mut image: Vec<f64> = (0..3 * size * size).map(|_| noise.sample(&mut rng)).collect();
        cells.shuffle(&mut rng);
        for (&label, &cell) in labels.iter().zip(&cells) {
            let (color, shape) = sprite_of(label);
            let contrast = if label % 2 == 1 { cfg.partner_contrast } else { 1.0 };
            let oy = (cell / grid) * CELL + rng.random_range(0..=CELL - 3);
            let ox = (cell % grid) * CELL + rng.random_range(0..=CELL - 3);
            for (dy, row) in SHAPES[shape].1.iter().enumerate() {
                for (dx, &on) in row.iter().enumerate() {
                    if on == 0 {
                        continue;
                    }
                    for (ch, &intensity) in COLORS[color].1.iter().enumerate() {
                        image[(ch * size + oy + dy) * size + ox + dx] += contrast * intensity;
                    }
                }
            }
        }
        inputs.push(FeatureMap::new_2d(3, size, size, image)?);
        samples.push(Sample { id: format!("syn{idx:05}"), labels: labels.into_iter().collect() });
    }
    Ok(Dataset { inputs, annotations: AnnotationSet::new(cfg.n_labels, samples)? })
}
