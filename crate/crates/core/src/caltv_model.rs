//! Price-category count heads.
//!
//! Each price category `m` gets a softmax over the truncated counts
//! `0..=cap_m`. Training minimizes the unweighted sum of the per-category
//! cross-entropies; prediction reads out the expected count of every head
//! and reconstructs LTV as `sum_m price_m * E[count_m]`.
//!
//! The count-0 class is part of every softmax and of the loss, so
//! non-paying samples still produce gradient and every row is a proper
//! distribution. It contributes nothing to the expected count.

use crate::dataset::{Money, PriceCatalog};
use crate::error::{Error, Result};
use crate::nn::ops::{cross_entropy, softmax_into};

/// Probability rows, one per price category; row `m` has `cap_m + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaltvPrediction {
    pub expected_counts: Vec<f64>,
    pub ltv: Money,
}

/// Cross-entropy of one head against its truncated count label.
pub fn head_loss(probs: &[f64], label: u32) -> Result<f64> {
    let cap = probs.len().saturating_sub(1);
    if label as usize > cap {
        return Err(Error::InvalidArgument(format!(
            "count label {label} exceeds the head's cap {cap}"
        )));
    }
    cross_entropy(probs, label as usize)
}

/// Sum of [`head_loss`] over every head of every sample, unweighted.
pub fn total_loss(outputs: &[HeadOutputs], labels: &[Vec<u32>]) -> Result<f64> {
    if outputs.len() != labels.len() {
        return Err(Error::dims("count label rows", outputs.len(), labels.len()));
    }
    let mut total = 0.0;
    for (heads, counts) in outputs.iter().zip(labels) {
        if heads.rows.len() != counts.len() {
            return Err(Error::dims(
                "heads per sample",
                heads.rows.len(),
                counts.len(),
            ));
        }
        for (row, &y) in heads.rows.iter().zip(counts) {
            total += head_loss(row, y)?;
        }
    }
    Ok(total)
}

/// `sum_{c >= 1} c * p_c`.
pub fn expected_count(probs: &[f64]) -> f64 {
    probs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(c, p)| c as f64 * p)
        .sum()
}

pub fn predict_ltv(outputs: &HeadOutputs, catalog: &PriceCatalog) -> Result<CaltvPrediction> {
    if outputs.rows.len() != catalog.len() {
        return Err(Error::dims("heads", catalog.len(), outputs.rows.len()));
    }
    for (row, &cap) in outputs.rows.iter().zip(catalog.caps()) {
        if row.len() != cap as usize + 1 {
            return Err(Error::dims("head classes", cap as usize + 1, row.len()));
        }
    }
    let expected_counts: Vec<f64> = outputs.rows.iter().map(|r| expected_count(r)).collect();
    let ltv = expected_counts
        .iter()
        .zip(catalog.prices())
        .map(|(n, p)| n * p)
        .sum();
    Ok(CaltvPrediction {
        expected_counts,
        ltv,
    })
}

/// Maps a network output row onto the per-category softmax segments.
#[derive(Debug, Clone, PartialEq)]
pub struct CaltvHead {
    catalog: PriceCatalog,
    offsets: Vec<usize>,
    width: usize,
}

impl CaltvHead {
    pub fn new(catalog: PriceCatalog) -> Self {
        let mut offsets = Vec::with_capacity(catalog.len());
        let mut width = 0;
        for &cap in catalog.caps() {
            offsets.push(width);
            width += cap as usize + 1;
        }
        CaltvHead {
            catalog,
            offsets,
            width,
        }
    }

    pub fn catalog(&self) -> &PriceCatalog {
        &self.catalog
    }

    /// Total logits: `sum_m (cap_m + 1)`.
    pub fn output_dim(&self) -> usize {
        self.width
    }

    fn segment(&self, m: usize) -> std::ops::Range<usize> {
        let start = self.offsets[m];
        start..start + self.catalog.caps()[m] as usize + 1
    }

    pub fn head_outputs(&self, logits: &[f64]) -> HeadOutputs {
        let rows = (0..self.catalog.len())
            .map(|m| {
                let seg = &logits[self.segment(m)];
                let mut p = vec![0.0; seg.len()];
                softmax_into(seg, &mut p);
                p
            })
            .collect();
        HeadOutputs { rows }
    }

    /// Summed per-category cross-entropy for one sample, computed as a
    /// log-softmax so that confident wrong heads keep a finite gradient.
    /// Writes `softmax - onehot(label)` for every head into `grad`.
    pub fn loss_and_grad(&self, logits: &[f64], counts: &[u32], grad: &mut [f64]) -> Result<f64> {
        if counts.len() != self.catalog.len() {
            return Err(Error::dims(
                "count labels",
                self.catalog.len(),
                counts.len(),
            ));
        }
        let mut loss = 0.0;
        for (m, &y) in counts.iter().enumerate() {
            let cap = self.catalog.caps()[m];
            if y > cap {
                return Err(Error::InvalidArgument(format!(
                    "count label {y} exceeds cap {cap} in category {m}"
                )));
            }
            let range = self.segment(m);
            let seg = &logits[range.clone()];
            let g = &mut grad[range];
            let log_norm = softmax_into(seg, g);
            let max = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            loss += log_norm - (seg[y as usize] - max);
            g[y as usize] -= 1.0;
        }
        Ok(loss)
    }

    pub fn predict(&self, logits: &[f64]) -> CaltvPrediction {
        predict_ltv(&self.head_outputs(logits), &self.catalog)
            .expect("heads congruent by construction")
    }
}
