//! Ranking metrics and the two evaluation protocols: out-of-distribution
//! detection and misclassification detection.
//!
//! AUROC and AUPR are computed with exact integer pair/rank counting, so
//! results are reproducible to the bit and can be compared against
//! exhaustive oracles with `==`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::dirichlet::{uncertainty_scores, UncertaintyChannel};
use crate::model::ForwardOutput;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no positive examples in the evaluation set")]
    NoPositives,
    #[error("no negative examples in the evaluation set")]
    NoNegatives,
    #[error("evaluation mask selects no nodes")]
    EmptyMask,
}

fn assert_ranking_input(scores: &[f64], positives: &[bool], op: &str) {
    assert_eq!(
        scores.len(),
        positives.len(),
        "{op}: {} scores for {} labels",
        scores.len(),
        positives.len()
    );
    assert!(
        scores.iter().all(|s| s.is_finite()),
        "{op}: scores must be finite"
    );
}

/// Probability that a uniformly random positive outranks a uniformly random
/// negative, ties credited 1/2 (the Mann–Whitney statistic). Counting is
/// exact in integers; the only rounding is the final division.
pub fn auroc(scores: &[f64], positives: &[bool]) -> Result<f64, EvalError> {
    assert_ranking_input(scores, positives, "auroc");
    let m = scores.len();
    let p = positives.iter().filter(|&&b| b).count() as u64;
    let n = m as u64 - p;
    if p == 0 {
        return Err(EvalError::NoPositives);
    }
    if n == 0 {
        return Err(EvalError::NoNegatives);
    }

    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let (mut wins, mut ties, mut negatives_below) = (0u64, 0u64, 0u64);
    let mut i = 0;
    while i < m {
        let mut j = i;
        let (mut pos_here, mut neg_here) = (0u64, 0u64);
        while j < m && scores[idx[j]] == scores[idx[i]] {
            if positives[idx[j]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        wins += pos_here * negatives_below;
        ties += pos_here * neg_here;
        negatives_below += neg_here;
        i = j;
    }
    Ok((2 * wins + ties) as f64 / (2 * p * n) as f64)
}

/// Average precision: walk ranks in score-descending order (ties keep input
/// order; the sort is stable), sum `precision_at_rank` at every positive,
/// and normalize by P last — a perfect ranking sums P exact ones and divides
/// to exactly 1.0, so the result never leaves the unit interval.
pub fn aupr(scores: &[f64], positives: &[bool]) -> Result<f64, EvalError> {
    assert_ranking_input(scores, positives, "aupr");
    let p = positives.iter().filter(|&&b| b).count();
    if p == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut precision_sum = 0.0;
    let mut true_positives = 0u64;
    for (rank0, &i) in order.iter().enumerate() {
        if positives[i] {
            true_positives += 1;
            precision_sum += true_positives as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(precision_sum / p as f64)
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Fraction of masked nodes whose argmax concentration matches the label;
/// argmax ties resolve to the lowest class index.
pub fn id_accuracy(alpha: &Tensor, y: &[usize], eval_mask: &[bool]) -> Result<f64, EvalError> {
    let shape = alpha.shape();
    let (n, k) = (shape[0], shape[1]);
    assert_eq!(y.len(), n, "id_accuracy: {} labels for {n} rows", y.len());
    assert_eq!(eval_mask.len(), n, "id_accuracy: {} mask entries for {n} rows", eval_mask.len());
    let v = alpha.values();
    let (mut total, mut correct) = (0usize, 0usize);
    for i in 0..n {
        if !eval_mask[i] {
            continue;
        }
        total += 1;
        if argmax_lowest(&v[i * k..(i + 1) * k]) == y[i] {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(EvalError::EmptyMask);
    }
    Ok(correct as f64 / total as f64)
}

/// One uncertainty channel's metrics, or the reason they are undefined.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ChannelResult {
    Ok { auroc: f64, aupr: f64 },
    Err { error: String },
}

impl ChannelResult {
    fn compute(scores: &[f64], positives: &[bool]) -> ChannelResult {
        let a = auroc(scores, positives);
        let p = aupr(scores, positives);
        match (a, p) {
            (Ok(auroc), Ok(aupr)) => ChannelResult::Ok { auroc, aupr },
            (Err(e), _) | (_, Err(e)) => ChannelResult::Err { error: e.to_string() },
        }
    }

    pub fn auroc(&self) -> Option<f64> {
        match self {
            ChannelResult::Ok { auroc, .. } => Some(*auroc),
            ChannelResult::Err { .. } => None,
        }
    }

    pub fn aupr(&self) -> Option<f64> {
        match self {
            ChannelResult::Ok { aupr, .. } => Some(*aupr),
            ChannelResult::Err { .. } => None,
        }
    }
}

/// Detection metrics for the three uncertainty channels plus in-distribution
/// accuracy. Channel names follow the aleatoric/epistemic, with/without
/// diffusion scheme.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub id_acc: f64,
    pub alea_w: ChannelResult,
    pub epi_w: ChannelResult,
    pub epi_wo: ChannelResult,
}

fn subset<T: Copy>(all: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| all[i]).collect()
}

/// OOD detection: positives are the OOD nodes inside the evaluation set.
/// Aleatoric and with-diffusion epistemic scores come from the diffused
/// concentrations; the without-diffusion channel reads the pre-diffusion
/// ones. `id_acc` is measured on the non-OOD part of the evaluation set.
pub fn eval_ood(
    out: &ForwardOutput,
    y: &[usize],
    ood_mask: &[bool],
    eval_mask: &[bool],
) -> Result<EvalReport, EvalError> {
    let n = ood_mask.len();
    assert_eq!(eval_mask.len(), n, "eval_ood: mask length mismatch");
    let eval_idx: Vec<usize> = (0..n).filter(|&i| eval_mask[i]).collect();
    if eval_idx.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    let positives = subset(ood_mask, &eval_idx);

    let alea = uncertainty_scores(&out.alpha, UncertaintyChannel::Alea);
    let epi = uncertainty_scores(&out.alpha, UncertaintyChannel::EpiOod);
    let epi_feat = uncertainty_scores(&out.alpha_feat, UncertaintyChannel::EpiOod);

    let id_mask: Vec<bool> = (0..n).map(|i| eval_mask[i] && !ood_mask[i]).collect();
    let id_acc = id_accuracy(&out.alpha, y, &id_mask)?;

    Ok(EvalReport {
        id_acc,
        alea_w: ChannelResult::compute(&subset(&alea, &eval_idx), &positives),
        epi_w: ChannelResult::compute(&subset(&epi, &eval_idx), &positives),
        epi_wo: ChannelResult::compute(&subset(&epi_feat, &eval_idx), &positives),
    })
}

/// Misclassification detection: positives are evaluation nodes whose argmax
/// concentration disagrees with the label. Run like OOD detection except the
/// epistemic score is the negative largest concentration entry. With every
/// node classified correctly there are no positives and the channels carry
/// error markers instead of metrics.
pub fn eval_misclassification(
    out: &ForwardOutput,
    y: &[usize],
    eval_mask: &[bool],
) -> Result<EvalReport, EvalError> {
    let shape = out.alpha.shape();
    let (n, k) = (shape[0], shape[1]);
    assert_eq!(eval_mask.len(), n, "eval_misclassification: mask length mismatch");
    let eval_idx: Vec<usize> = (0..n).filter(|&i| eval_mask[i]).collect();
    if eval_idx.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    let v = out.alpha.values();
    let positives: Vec<bool> = eval_idx
        .iter()
        .map(|&i| argmax_lowest(&v[i * k..(i + 1) * k]) != y[i])
        .collect();

    let alea = uncertainty_scores(&out.alpha, UncertaintyChannel::Alea);
    let epi = uncertainty_scores(&out.alpha, UncertaintyChannel::EpiMisc);
    let epi_feat = uncertainty_scores(&out.alpha_feat, UncertaintyChannel::EpiMisc);

    let id_acc = id_accuracy(&out.alpha, y, eval_mask)?;

    Ok(EvalReport {
        id_acc,
        alea_w: ChannelResult::compute(&subset(&alea, &eval_idx), &positives),
        epi_w: ChannelResult::compute(&subset(&epi, &eval_idx), &positives),
        epi_wo: ChannelResult::compute(&subset(&epi_feat, &eval_idx), &positives),
    })
}
