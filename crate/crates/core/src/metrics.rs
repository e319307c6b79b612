//! Clustering evaluation: B³, V-measure and Adjusted Rand Index.
//!
//! All three are computed from the contingency table `n_ij` (items in
//! predicted cluster `i` and gold class `j`).
//!
//! | Metric | Range | Notes |
//! |--------|-------|-------|
//! | B³ P/R/F1 | [0, 1] | element-averaged, self-pairs included |
//! | homogeneity / completeness / V | [0, 1] | entropies in nats |
//! | ARI | [-1, 1] | permutation-model chance correction |

use crate::instance::Partition;
use serde::Serialize;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("partitions have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("partitions are empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub b3_precision: f64,
    pub b3_recall: f64,
    pub b3_f1: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_f1: f64,
    pub ari: f64,
}

struct Contingency {
    n: usize,
    /// (pred cluster, gold class) → count
    cells: Vec<((usize, usize), usize)>,
    pred_sizes: Vec<usize>,
    gold_sizes: Vec<usize>,
}

impl Contingency {
    fn new(pred: &[usize], gold: &[usize]) -> Result<Self, MetricsError> {
        if pred.len() != gold.len() {
            return Err(MetricsError::LengthMismatch(pred.len(), gold.len()));
        }
        if pred.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut cells: HashMap<(usize, usize), usize> = HashMap::new();
        let np = pred.iter().max().map_or(0, |m| m + 1);
        let ng = gold.iter().max().map_or(0, |m| m + 1);
        let mut pred_sizes = vec![0; np];
        let mut gold_sizes = vec![0; ng];
        for (&c, &g) in pred.iter().zip(gold) {
            *cells.entry((c, g)).or_default() += 1;
            pred_sizes[c] += 1;
            gold_sizes[g] += 1;
        }
        let mut cells: Vec<_> = cells.into_iter().collect();
        cells.sort_unstable();
        Ok(Contingency {
            n: pred.len(),
            cells,
            pred_sizes,
            gold_sizes,
        })
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

fn b_cubed_labels(pred: &[usize], gold: &[usize]) -> Result<(f64, f64, f64), MetricsError> {
    let t = Contingency::new(pred, gold)?;
    // each item in cell (i,j) has n_ij cluster-mates sharing its class
    let (mut p, mut r) = (0.0, 0.0);
    for &((i, j), nij) in &t.cells {
        let nij = nij as f64;
        p += nij * nij / t.pred_sizes[i] as f64;
        r += nij * nij / t.gold_sizes[j] as f64;
    }
    let n = t.n as f64;
    let (p, r) = (p / n, r / n);
    Ok((p, r, harmonic(p, r)))
}

fn entropy(sizes: &[usize], n: usize) -> f64 {
    let n = n as f64;
    -sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let q = s as f64 / n;
            q * q.ln()
        })
        .sum::<f64>()
}

fn v_measure_labels(pred: &[usize], gold: &[usize]) -> Result<(f64, f64, f64), MetricsError> {
    let t = Contingency::new(pred, gold)?;
    let n = t.n as f64;
    let (mut h_gold_given_pred, mut h_pred_given_gold) = (0.0, 0.0);
    for &((i, j), nij) in &t.cells {
        let nij = nij as f64;
        h_gold_given_pred -= nij / n * (nij / t.pred_sizes[i] as f64).ln();
        h_pred_given_gold -= nij / n * (nij / t.gold_sizes[j] as f64).ln();
    }
    let h_gold = entropy(&t.gold_sizes, t.n);
    let h_pred = entropy(&t.pred_sizes, t.n);
    let homo = if h_gold == 0.0 {
        1.0
    } else {
        1.0 - h_gold_given_pred / h_gold
    };
    let comp = if h_pred == 0.0 {
        1.0
    } else {
        1.0 - h_pred_given_gold / h_pred
    };
    // clamp rounding noise from the ratio of entropies
    let homo = homo.clamp(0.0, 1.0);
    let comp = comp.clamp(0.0, 1.0);
    Ok((homo, comp, harmonic(homo, comp)))
}

fn pairs(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

fn ari_labels(pred: &[usize], gold: &[usize]) -> Result<f64, MetricsError> {
    let t = Contingency::new(pred, gold)?;
    let index: f64 = t.cells.iter().map(|&(_, c)| pairs(c)).sum();
    let a: f64 = t.pred_sizes.iter().map(|&s| pairs(s)).sum();
    let b: f64 = t.gold_sizes.iter().map(|&s| pairs(s)).sum();
    let total = pairs(t.n);
    // (index − expected) / (max − expected), scaled by the pair total so the
    // integer-valued parts stay exact until the final division
    let num = index * total - a * b;
    let denom = 0.5 * (a + b) * total - a * b;
    if denom == 0.0 {
        // identical pair relations iff every co-clustered pair is co-classed and vice versa
        return Ok(if index == a && index == b { 1.0 } else { 0.0 });
    }
    Ok(num / denom)
}

fn check(pred: &Partition, gold: &Partition) -> Result<(), MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), gold.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Element-averaged B³ precision, recall and F1.
pub fn b_cubed(pred: &Partition, gold: &Partition) -> Result<(f64, f64, f64), MetricsError> {
    check(pred, gold)?;
    b_cubed_labels(&pred.labels, &gold.labels)
}

/// Homogeneity (each cluster holds one class), completeness (each class sits
/// in one cluster) and their harmonic mean.
pub fn v_measure(pred: &Partition, gold: &Partition) -> Result<(f64, f64, f64), MetricsError> {
    check(pred, gold)?;
    v_measure_labels(&pred.labels, &gold.labels)
}

pub fn ari(pred: &Partition, gold: &Partition) -> Result<f64, MetricsError> {
    check(pred, gold)?;
    ari_labels(&pred.labels, &gold.labels)
}

pub fn score(pred: &Partition, gold: &Partition) -> Result<Scores, MetricsError> {
    let (b3_precision, b3_recall, b3_f1) = b_cubed(pred, gold)?;
    let (homogeneity, completeness, v_f1) = v_measure(pred, gold)?;
    let ari = ari(pred, gold)?;
    Ok(Scores {
        b3_precision,
        b3_recall,
        b3_f1,
        homogeneity,
        completeness,
        v_f1,
        ari,
    })
}

impl Scores {
    /// Single-line JSON with six decimals:
    /// `{"b3":{"p":..,"r":..,"f1":..},"v":{"homo":..,"comp":..,"f1":..},"ari":..}`
    pub fn to_json_line(&self) -> String {
        format!(
            r#"{{"b3":{{"p":{:.6},"r":{:.6},"f1":{:.6}}},"v":{{"homo":{:.6},"comp":{:.6},"f1":{:.6}}},"ari":{:.6}}}"#,
            self.b3_precision,
            self.b3_recall,
            self.b3_f1,
            self.homogeneity,
            self.completeness,
            self.v_f1,
            self.ari
        )
    }
}
