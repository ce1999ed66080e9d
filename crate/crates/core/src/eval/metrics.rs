//! Threshold-free ranking metrics for a binary split of scores.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Scores of a positive class (OOD or misclassified) and a negative class.
/// Higher scores should indicate the positive class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBinary {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl ScoredBinary {
    pub fn new(pos: Vec<f64>, neg: Vec<f64>) -> Result<Self> {
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::EmptyScores);
        }
        if pos.iter().chain(&neg).any(|s| s.is_nan()) {
            return Err(Error::Domain { function: "ScoredBinary::new", value: f64::NAN });
        }
        Ok(ScoredBinary { pos, neg })
    }

    pub fn pos(&self) -> &[f64] {
        &self.pos
    }

    pub fn neg(&self) -> &[f64] {
        &self.neg
    }

    /// (score, is_positive), sorted by score descending.
    fn ranked(&self) -> Vec<(f64, bool)> {
        let mut all: Vec<(f64, bool)> =
            self.pos.iter().map(|&s| (s, true)).chain(self.neg.iter().map(|&s| (s, false))).collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        all
    }
}

/// P(pos > neg) + ½·P(pos = neg) over all pairs, via midranks.
pub fn auroc(s: &ScoredBinary) -> f64 {
    let ranked = s.ranked();
    let n = ranked.len();
    // ascending midranks; ranked is descending so rank of index i is n − i
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && ranked[j + 1].0 == ranked[i].0 {
            j += 1;
        }
        // ascending ranks of the tie block are n − j ..= n − i
        let mid = ((n - j) + (n - i)) as f64 / 2.0;
        let pos_in_block = ranked[i..=j].iter().filter(|r| r.1).count();
        pos_rank_sum += mid * pos_in_block as f64;
        i = j + 1;
    }
    let (np, nn) = (s.pos.len() as f64, s.neg.len() as f64);
    (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

/// Average precision: Σ (R_k − R_{k−1})·P_k over distinct thresholds, with
/// each group of equal scores admitted as a single threshold.
pub fn aupr(s: &ScoredBinary) -> f64 {
    let ranked = s.ranked();
    let total_pos = s.pos.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < ranked.len() {
        let mut j = i;
        let mut block_pos = 0;
        while j < ranked.len() && ranked[j].0 == ranked[i].0 {
            if ranked[j].1 {
                block_pos += 1;
            }
            j += 1;
        }
        tp += block_pos;
        fp += (j - i) - block_pos;
        if block_pos > 0 {
            ap += (block_pos as f64 / total_pos) * (tp as f64 / (tp + fp) as f64);
        }
        i = j;
    }
    ap
}
