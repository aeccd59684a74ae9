//! ID-vs-OOD metrics with ID as the positive class (higher score = more ID).

use log::warn;

use crate::error::{Error, Result};

fn nonempty(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::Contract("ID and OOD score lists must be non-empty".into()));
    }
    Ok(())
}

/// Mann–Whitney AUROC: `P(id > ood) + ½ P(id = ood)`, via sort-and-rank with midranks.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    nonempty(id_scores, ood_scores)?;
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Rank sums are integers or half-integers, exact in f64 far beyond any realistic N.
    let mut id_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share the midrank
        let midrank = (i + 1 + j) as f64 / 2.0;
        let ids = all[i..j].iter().filter(|x| x.1).count();
        id_rank_sum += midrank * ids as f64;
        i = j;
    }
    let n_id = id_scores.len() as f64;
    let n_ood = ood_scores.len() as f64;
    let u = id_rank_sum - n_id * (n_id + 1.0) / 2.0;
    Ok(u / (n_id * n_ood))
}

/// FPR at 95% ID acceptance. The threshold is the `⌈0.05·|ID|⌉`-th smallest ID
/// score; both ID and OOD items at or above it count as accepted.
/// Returns `(fpr, threshold)`.
pub fn fpr95(id_scores: &[f64], ood_scores: &[f64]) -> Result<(f64, f64)> {
    nonempty(id_scores, ood_scores)?;
    if id_scores.len() < 20 {
        warn!(
            "FPR95 over only {} ID scores is coarse",
            id_scores.len()
        );
    }
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = sorted.len().div_ceil(20).max(1);
    let threshold = sorted[rank - 1];
    let passed = ood_scores.iter().filter(|&&s| s >= threshold).count();
    Ok((passed as f64 / ood_scores.len() as f64, threshold))
}
