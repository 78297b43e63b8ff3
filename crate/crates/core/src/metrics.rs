//! Multi-label evaluation: mAP, per-class CP/CR/CF1 and overall OP/OR/OF1.
//!
//! AP is the non-interpolated average of precision at each positive's rank.
//! Classes without positives are left out of mAP and of the per-class
//! averages; the count is reported.

use alloc::format;
use alloc::vec::Vec;

use crate::gcn::sigmoid;
use crate::{Error, Matrix, Result};

/// Scores and aligned 0/1 targets, `samples × classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: Matrix,
    targets: Matrix,
}

impl ScoreMatrix {
    pub fn new(scores: Matrix, targets: Matrix) -> Result<Self> {
        if scores.shape() != targets.shape() {
            return Err(Error::shape("ScoreMatrix::new", format!("scores {:?} vs targets {:?}", scores.shape(), targets.shape())));
        }
        if !scores.is_finite() {
            return Err(Error::NonFinite("scores"));
        }
        if let Some(&t) = targets.as_slice().iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::InvalidTarget(t));
        }
        Ok(ScoreMatrix { scores, targets })
    }

    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn samples(&self) -> usize {
        self.scores.rows()
    }

    pub fn classes(&self) -> usize {
        self.scores.cols()
    }

    fn column(m: &Matrix, j: usize) -> Vec<f64> {
        (0..m.rows()).map(|i| m[(i, j)]).collect()
    }
}

/// Higher first; `-0.0` and `0.0` tie. Callers guarantee finite inputs.
fn descending(a: f64, b: f64) -> core::cmp::Ordering {
    b.partial_cmp(&a).expect("finite scores")
}

/// AP of one class. Ties in score keep the original sample order.
pub fn average_precision(scores: &[f64], targets: &[f64]) -> Result<f64> {
    if scores.len() != targets.len() {
        return Err(Error::shape("average_precision", format!("{} scores, {} targets", scores.len(), targets.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let positives = targets.iter().filter(|&&t| t == 1.0).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| descending(scores[a], scores[b]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if targets[i] == 1.0 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub map: f64,
    /// `None` for classes without positives.
    pub per_class: Vec<Option<f64>>,
    pub excluded: usize,
}

pub fn map_score(sm: &ScoreMatrix) -> Result<MapReport> {
    let mut per_class = Vec::with_capacity(sm.classes());
    for j in 0..sm.classes() {
        let s = ScoreMatrix::column(&sm.scores, j);
        let t = ScoreMatrix::column(&sm.targets, j);
        per_class.push(match average_precision(&s, &t) {
            Ok(ap) => Some(ap),
            Err(Error::NoPositives) => None,
            Err(e) => return Err(e),
        });
    }
    let included: Vec<f64> = per_class.iter().flatten().copied().collect();
    if included.is_empty() {
        return Err(Error::AllClassesExcluded);
    }
    let map = included.iter().sum::<f64>() / included.len() as f64;
    Ok(MapReport { map, excluded: per_class.len() - included.len(), per_class })
}

/// How scores become binary predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecisionRule {
    /// Score ≥ threshold.
    Threshold(f64),
    /// sigmoid(score) ≥ threshold, for logits.
    SigmoidThreshold(f64),
    /// The `k` highest scores of each sample; ties go to the lower class index.
    TopK(usize),
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule::SigmoidThreshold(0.5)
    }
}

pub fn predictions(sm: &ScoreMatrix, rule: DecisionRule) -> Matrix {
    let (rows, cols) = sm.scores.shape();
    match rule {
        DecisionRule::Threshold(t) => sm.scores.map(|s| if s >= t { 1.0 } else { 0.0 }),
        DecisionRule::SigmoidThreshold(t) => sm.scores.map(|s| if sigmoid(s) >= t { 1.0 } else { 0.0 }),
        DecisionRule::TopK(k) => {
            let mut out = Matrix::zeros(rows, cols);
            for i in 0..rows {
                let row = sm.scores.row(i);
                let mut order: Vec<usize> = (0..cols).collect();
                order.sort_by(|&a, &b| descending(row[a], row[b]));
                for &j in order.iter().take(k) {
                    out[(i, j)] = 1.0;
                }
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrfReport {
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    pub or: f64,
    pub of1: f64,
    /// Classes without positives, left out of CP/CR.
    pub excluded_classes: usize,
    /// Included classes with no positive predictions; their precision counts as 0.
    pub classes_without_predictions: usize,
    /// Set when nothing at all was predicted positive, making OP 0 by convention.
    pub no_predictions: bool,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

pub fn prf_suite(sm: &ScoreMatrix, rule: DecisionRule) -> PrfReport {
    let pred = predictions(sm, rule);
    let (rows, cols) = pred.shape();
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    let (mut p_sum, mut r_sum) = (0.0, 0.0);
    let (mut included, mut without_pred) = (0usize, 0usize);
    for j in 0..cols {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for i in 0..rows {
            match (pred[(i, j)] == 1.0, sm.targets[(i, j)] == 1.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
        if tp + fneg == 0 {
            continue;
        }
        included += 1;
        if tp + fp == 0 {
            without_pred += 1;
        } else {
            p_sum += tp as f64 / (tp + fp) as f64;
        }
        r_sum += tp as f64 / (tp + fneg) as f64;
    }
    let (cp, cr) = if included > 0 { (p_sum / included as f64, r_sum / included as f64) } else { (0.0, 0.0) };
    let op = if tp_all + fp_all > 0 { tp_all as f64 / (tp_all + fp_all) as f64 } else { 0.0 };
    let or = if tp_all + fn_all > 0 { tp_all as f64 / (tp_all + fn_all) as f64 } else { 0.0 };
    PrfReport {
        cp,
        cr,
        cf1: harmonic(cp, cr),
        op,
        or,
        of1: harmonic(op, or),
        excluded_classes: cols - included,
        classes_without_predictions: without_pred,
        no_predictions: tp_all + fp_all == 0,
    }
}
