//! Rank correlation with exact permutation p-values, and the centipawn summary.

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest sample for which the permutation p-value is enumerated.
pub const MAX_EXACT_ITEMS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// One-sided `P(ρ ≥ ρ_obs)` over all `n!` rank permutations.
    pub p_exact: f64,
    pub n: usize,
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Spearman's ρ of `(x, y)` pairs with an exact one-sided p-value.
pub fn spearman(values: &[(f64, f64)]) -> Result<SpearmanResult> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: n });
    }
    if n > MAX_EXACT_ITEMS {
        return Err(Error::TooManyItems { max: MAX_EXACT_ITEMS, got: n });
    }
    if values.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("spearman input"));
    }
    let rx = average_ranks(&values.iter().map(|v| v.0).collect::<Vec<_>>());
    let ry = average_ranks(&values.iter().map(|v| v.1).collect::<Vec<_>>());
    let rho = pearson(&rx, &ry).ok_or(Error::ConstantInput("spearman input"))?;

    // Heap's algorithm over the y ranks.
    let mut perm = ry.clone();
    let mut c = vec![0usize; n];
    // The identity arrangement is the observed one and always counts.
    let mut hits = 1usize;
    let mut total = 1usize;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            total += 1;
            if pearson(&rx, &perm).is_some_and(|r| r >= rho - 1e-12) {
                hits += 1;
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(SpearmanResult { rho, p_exact: hits as f64 / total as f64, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CentipawnSummary {
    /// Mean of `ln|cp_branch − cp_greedy|`.
    pub mean_abs_log_cp: f64,
    /// Population standard deviation of the same quantity.
    pub std: f64,
    pub count: usize,
    /// Records whose evaluation did not change (log undefined).
    pub unchanged: usize,
}

/// Summarizes the log magnitude of the evaluation change across a branch.
pub fn centipawn_summary(evals: &[(f64, f64)]) -> Result<CentipawnSummary> {
    if evals.is_empty() {
        return Err(Error::NoEvalData);
    }
    let logs: Vec<f64> = evals
        .iter()
        .map(|(g, b)| (b - g).abs())
        .filter(|d| *d > 0.0 && d.is_finite())
        .map(f64::ln)
        .collect();
    if logs.is_empty() {
        return Err(Error::NoEvalData);
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(CentipawnSummary { mean_abs_log_cp: mean, std: var.sqrt(), count: logs.len(), unchanged: evals.len() - logs.len() })
}
