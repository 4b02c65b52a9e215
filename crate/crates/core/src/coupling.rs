//! Curvature-rotated states and their couplings to probe world vectors.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{check_dim, Error, Result};
use crate::linalg::RotationOperator;
use crate::probe::{Piece, Probe, Side};

/// `q = H y − y`, through the support block when `H` is low-rank.
pub fn q_vector(h: &RotationOperator, y: &DVector<f64>) -> Result<DVector<f64>> {
    h.apply_minus_identity(y)
}

/// `|q·w| / (‖q‖ ‖w‖)`.
pub fn coupling(q: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
    check_dim(q.len(), w.len())?;
    let (qn, wn) = (q.norm(), w.norm());
    if qn == 0.0 {
        return Err(Error::ZeroVector("q"));
    }
    if wn == 0.0 {
        return Err(Error::ZeroVector("world vector"));
    }
    Ok((q.dot(w).abs() / (qn * wn)).min(1.0))
}

/// Couplings of `q` against every probe, in probe order.
pub fn couplings(q: &DVector<f64>, probes: &[Probe]) -> Result<Vec<f64>> {
    let qn = q.norm();
    if qn == 0.0 {
        return Err(Error::ZeroVector("q"));
    }
    probes
        .iter()
        .map(|p| {
            check_dim(q.len(), p.w.len())?;
            Ok((q.dot(&p.w).abs() / (qn * p.w.norm())).min(1.0))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeHit {
    pub probe: u32,
    pub value: f64,
}

/// Largest coupling among active probes and among the rest (the bulk).
/// Ties go to the lowest probe id.
pub fn max_probes(values: &[f64], active: &[u32]) -> Result<(ProbeHit, ProbeHit)> {
    let mut is_active = vec![false; values.len()];
    for &id in active {
        let slot = is_active.get_mut(id as usize).ok_or_else(|| {
            Error::Config(format!("active probe id {id} outside {} probes", values.len()))
        })?;
        *slot = true;
    }
    let mut best: [Option<ProbeHit>; 2] = [None, None];
    for (i, &v) in values.iter().enumerate() {
        let slot = &mut best[usize::from(!is_active[i])];
        if slot.map_or(true, |b| v > b.value) {
            *slot = Some(ProbeHit { probe: i as u32, value: v });
        }
    }
    match best {
        [Some(a), Some(b)] => Ok((a, b)),
        [None, _] => Err(Error::EmptySet("active probes")),
        [_, None] => Err(Error::EmptySet("bulk probes")),
    }
}

/// The two internal states following a branch point.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePair {
    pub y_greedy: DVector<f64>,
    pub y_branch: DVector<f64>,
}

impl StatePair {
    pub fn new(y_greedy: DVector<f64>, y_branch: DVector<f64>) -> Result<Self> {
        check_dim(y_greedy.len(), y_branch.len())?;
        Ok(Self { y_greedy, y_branch })
    }

    pub fn swapped(&self) -> Self {
        Self { y_greedy: self.y_branch.clone(), y_branch: self.y_greedy.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRow {
    pub record_id: u64,
    pub q_greedy: DVector<f64>,
    pub q_branch: DVector<f64>,
    pub greedy: Vec<f64>,
    pub branch: Vec<f64>,
    pub max_active_greedy: ProbeHit,
    pub max_bulk_greedy: ProbeHit,
    pub max_active_branch: ProbeHit,
    pub max_bulk_branch: ProbeHit,
}

pub fn coupling_row(
    record_id: u64,
    h: &RotationOperator,
    pair: &StatePair,
    probes: &[Probe],
    active: &[u32],
) -> Result<CouplingRow> {
    let q_greedy = q_vector(h, &pair.y_greedy)?;
    let q_branch = q_vector(h, &pair.y_branch)?;
    coupling_row_from_q(record_id, q_greedy, q_branch, probes, active)
}

/// Like [`coupling_row`] for q vectors computed elsewhere.
pub fn coupling_row_from_q(
    record_id: u64,
    q_greedy: DVector<f64>,
    q_branch: DVector<f64>,
    probes: &[Probe],
    active: &[u32],
) -> Result<CouplingRow> {
    let greedy = couplings(&q_greedy, probes)?;
    let branch = couplings(&q_branch, probes)?;
    let (max_active_greedy, max_bulk_greedy) = max_probes(&greedy, active)?;
    let (max_active_branch, max_bulk_branch) = max_probes(&branch, active)?;
    Ok(CouplingRow {
        record_id,
        q_greedy,
        q_branch,
        greedy,
        branch,
        max_active_greedy,
        max_bulk_greedy,
        max_active_branch,
        max_bulk_branch,
    })
}

/// `(Δq, Δy) = (q′ − q, y′ − y)`, branch minus greedy.
pub fn delta_vectors(row: &CouplingRow, pair: &StatePair) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dim(row.q_greedy.len(), pair.y_greedy.len())?;
    check_dim(row.q_branch.len(), pair.y_branch.len())?;
    Ok((&row.q_branch - &row.q_greedy, &pair.y_branch - &pair.y_greedy))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PieceGroup {
    pub side: Side,
    pub piece: Piece,
    pub mean_coupling: f64,
    /// Number of (row, probe) couplings averaged.
    pub count: usize,
}

/// Mean coupling of `Δq` with the probes of each (side, piece) group.
/// Rows with `Δq = 0` carry no direction and are skipped.
pub fn piece_spectrum(delta_qs: &[DVector<f64>], probes: &[Probe]) -> Result<Vec<PieceGroup>> {
    let mut acc: BTreeMap<(Side, Piece), (f64, usize)> = BTreeMap::new();
    for dq in delta_qs {
        if dq.norm() == 0.0 {
            continue;
        }
        for (p, c) in probes.iter().zip(couplings(dq, probes)?) {
            let e = acc.entry((p.label.side, p.label.piece)).or_default();
            e.0 += c;
            e.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|((side, piece), (sum, count))| PieceGroup { side, piece, mean_coupling: sum / count as f64, count })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FileRate {
    pub file: char,
    pub count: usize,
    pub total: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Central credible mass reported by [`file_distribution`].
pub const CREDIBLE_MASS: f64 = 0.68;

/// Per-file share of the given max-probe hits with a flat-prior Beta
/// posterior: mean `(k+1)/(N+2)` and the central 68% interval.
pub fn file_distribution(max_probe_ids: &[u32], probes: &[Probe]) -> Result<Vec<FileRate>> {
    let mut counts = [0usize; 8];
    for &id in max_probe_ids {
        let p = probes
            .get(id as usize)
            .ok_or_else(|| Error::Config(format!("probe id {id} outside {} probes", probes.len())))?;
        counts[p.label.square.file as usize] += 1;
    }
    let total = max_probe_ids.len();
    let tail = 0.5 * (1.0 - CREDIBLE_MASS);
    counts
        .iter()
        .enumerate()
        .map(|(f, &k)| {
            let (a, b) = ((k + 1) as f64, (total - k + 1) as f64);
            let beta = Beta::new(a, b).map_err(|e| Error::Config(e.to_string()))?;
            Ok(FileRate {
                file: (b'a' + f as u8) as char,
                count: k,
                total,
                mean: a / (a + b),
                lower: beta.inverse_cdf(tail),
                upper: beta.inverse_cdf(1.0 - tail),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupling_examples() {
        let w = DVector::from_column_slice(&[1.0, 2.0, -1.0]);
        assert!((coupling(&w, &w).unwrap() - 1.0).abs() < 1e-15);
        assert!((coupling(&(-&w), &w).unwrap() - 1.0).abs() < 1e-15);
        let q = DVector::from_column_slice(&[2.0, -1.0, 0.0]);
        assert_eq!(coupling(&q, &w).unwrap(), 0.0);
        assert!(matches!(coupling(&DVector::zeros(3), &w), Err(Error::ZeroVector(_))));
    }

    #[test]
    fn max_probe_rules() {
        let (a, b) = max_probes(&[0.1, 0.9, 0.3], &[0]).unwrap();
        assert_eq!((a.probe, b.probe), (0, 1));
        let (a, b) = max_probes(&[0.5; 6], &[3, 4]).unwrap();
        assert_eq!((a.probe, b.probe), (3, 0));
        assert!(max_probes(&[0.1, 0.2], &[]).is_err());
        assert!(max_probes(&[0.1, 0.2], &[0, 1]).is_err());
        assert!(max_probes(&[0.1, 0.2], &[5]).is_err());
    }

    #[test]
    fn flat_prior_when_empty() {
        let d = file_distribution(&[], &[]).unwrap();
        assert_eq!(d.len(), 8);
        for r in d {
            assert_eq!(r.mean, 0.5);
            assert!((r.lower - 0.16).abs() < 1e-9 && (r.upper - 0.84).abs() < 1e-9);
        }
    }
}
