use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// |pred ∩ gold| / |pred ∪ gold|; 1 when both are empty.
pub fn set_iou<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> f64 {
    let inter = pred.intersection(gold).count();
    let union = pred.len() + gold.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// 2|pred ∩ gold| / (|pred| + |gold|); 1 when both are empty.
pub fn set_f1<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> f64 {
    let denom = pred.len() + gold.len();
    if denom == 0 {
        1.0
    } else {
        2.0 * pred.intersection(gold).count() as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize, other_empty: bool) -> f64 {
    if den == 0 {
        if other_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Precision/recall/F1 of `pred` against `gold`. An empty denominator scores
/// 1 when both sides are empty and 0 otherwise.
pub fn precision_recall<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> PrecisionRecall {
    let hit = pred.intersection(gold).count();
    let both_empty = pred.is_empty() && gold.is_empty();
    let precision = ratio(hit, pred.len(), both_empty);
    let recall = ratio(hit, gold.len(), both_empty);
    // harmonic mean written over counts, so it is exact up to one rounding
    let f1 = if both_empty { 1.0 } else { 2.0 * hit as f64 / (pred.len() + gold.len()) as f64 };
    PrecisionRecall { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditMetrics {
    pub insertion: PrecisionRecall,
    pub deletion: PrecisionRecall,
}

/// Insertions are items added relative to `base`, deletions items dropped.
pub fn edit_metrics<T: Ord + Clone>(
    base: &BTreeSet<T>,
    pred: &BTreeSet<T>,
    gold: &BTreeSet<T>,
) -> EditMetrics {
    let ins_pred: BTreeSet<T> = pred.difference(base).cloned().collect();
    let ins_gold: BTreeSet<T> = gold.difference(base).cloned().collect();
    let del_pred: BTreeSet<T> = base.difference(pred).cloned().collect();
    let del_gold: BTreeSet<T> = base.difference(gold).cloned().collect();
    EditMetrics {
        insertion: precision_recall(&ins_pred, &ins_gold),
        deletion: precision_recall(&del_pred, &del_gold),
    }
}
