use crate::data::ClassLabel;
use crate::error::{Error, Result};

/// F1, precision and recall for `positive`; any 0/0 ratio is taken as 0.
pub fn f1_precision_recall(
    preds: &[ClassLabel],
    truths: &[ClassLabel],
    positive: ClassLabel,
) -> Result<(f64, f64, f64)> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if preds.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in preds.iter().zip(truths) {
        match (p == positive, t == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((f1, precision, recall))
}

/// Average precision: sweep scores from high to low, one step per distinct
/// score, adding `precision * Δrecall` at each step.
pub fn auprc(scores: &[f64], truths: &[bool]) -> Result<f64> {
    if scores.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} truths",
            scores.len(),
            truths.len()
        )));
    }
    let positives = truths.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(Error::Insufficient("auprc needs at least one positive".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        let mut group_tp = 0;
        while i < order.len() && scores[order[i]] == score {
            group_tp += usize::from(truths[order[i]]);
            seen += 1;
            i += 1;
        }
        if group_tp > 0 {
            tp += group_tp;
            ap += (tp as f64 / seen as f64) * (group_tp as f64 / positives as f64);
        }
    }
    Ok(ap)
}
