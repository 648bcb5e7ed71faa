use alloc::vec::Vec;

use crate::error::MilError;

/// ROC AUC as the normalized Mann-Whitney statistic: concordant pairs plus
/// half the tied pairs, over `#pos * #neg`. Ties are handled with mid-ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MilError> {
    if scores.len() != labels.len() {
        return Err(MilError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MilError::UndefinedAuc);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // sum of (1-based) mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let positives = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += mid_rank * positives as f64;
        start = end;
    }

    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}
