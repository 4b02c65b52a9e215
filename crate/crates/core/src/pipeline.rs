//! End-to-end orchestration: holonomy per record, couplings, PCA, clusters,
//! and the aggregate statistics.
//!
//! Records are processed by an order-preserving parallel map and every
//! reduction runs sequentially in record order afterwards, so outputs do not
//! depend on the worker count.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ablation::AblationSpec;
use crate::coupling::{coupling_row_from_q, delta_vectors, file_distribution, piece_spectrum, CouplingRow, FileRate, PieceGroup};
use crate::dataset::{unembed_matrix, Dataset};
use crate::error::{Error, Result};
use crate::holonomy::{clover_holonomy, HolonomyConfig};
use crate::pca::{pca, select_clusters, ClusterConfig, Clusters, Continuation, Pca};
use crate::probe::{Piece, Probe, Side};
use crate::stats::{centipawn_summary, spearman, CentipawnSummary, SpearmanResult};

/// Records whose q is shorter than this fraction of `‖y‖` are quarantined.
pub const ZERO_Q_RELATIVE: f64 = 1e-12;

/// What the couplings are computed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingTarget {
    /// `q = Hy − y`.
    #[default]
    Difference,
    /// `Hy` itself, kept as a diagnostic.
    Rotated,
}

/// Which couplings enter the per-continuation mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingAverage {
    #[default]
    AllProbes,
    MaxProbes,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub holonomy: HolonomyConfig,
    pub ablation: Option<AblationSpec>,
    pub clusters: ClusterConfig,
    pub target: CouplingTarget,
    pub average: CouplingAverage,
    /// Worker count; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectStage {
    Geometry,
    Holonomy,
    Ablation,
    ZeroQ,
    Coupling,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reject {
    pub record_id: u64,
    pub stage: RejectStage,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolonomyRow {
    pub record_id: u64,
    pub charge: f64,
    pub holonomy_minus_identity: f64,
    pub curvature_norm: f64,
    pub clover_gap: f64,
    pub exp_consistency: f64,
    pub orthogonality_defect: f64,
    pub plane_sine: f64,
    pub degenerate: bool,
    /// `‖R − I‖_F` of the operator actually applied to `y`.
    pub operator_minus_identity: f64,
}

#[derive(Debug, Clone)]
pub struct RecordOutcome {
    pub index: usize,
    pub holonomy: HolonomyRow,
    pub row: CouplingRow,
    pub delta_q: DVector<f64>,
    pub delta_y: DVector<f64>,
    pub eval: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct RecordsOutput {
    pub outcomes: Vec<RecordOutcome>,
    pub rejects: Vec<Reject>,
    /// Holonomy rows of every record that got that far, including those later
    /// quarantined for a vanishing q.
    pub holonomy_rows: Vec<HolonomyRow>,
}

/// Outcome of one record: either a full row or the reject, plus the holonomy
/// row when the holonomy itself succeeded.
type Processed = (Option<HolonomyRow>, std::result::Result<RecordOutcome, Reject>);

fn process_one(
    ds: &Dataset,
    index: usize,
    unembed: Option<&Arc<DMatrix<f64>>>,
    probes: &[Probe],
    cfg: &PipelineConfig,
) -> Processed {
    let rec = &ds.records[index];
    let reject = |stage, e: Error| Reject { record_id: rec.record_id, stage, reason: e.to_string() };

    let g = match ds.geometry(index, unembed) {
        Ok(g) => g,
        Err(e) => return (None, Err(reject(RejectStage::Geometry, e))),
    };
    let hol = match clover_holonomy(&g, &cfg.holonomy) {
        Ok(h) => h,
        Err(e) => return (None, Err(reject(RejectStage::Holonomy, e))),
    };
    let op = match &cfg.ablation {
        None => hol.holonomy.clone(),
        Some(spec) => match spec.operator(&g, &hol.holonomy, rec.record_id) {
            Ok(op) => op,
            Err(e) => return (None, Err(reject(RejectStage::Ablation, e))),
        },
    };
    let hrow = HolonomyRow {
        record_id: rec.record_id,
        charge: hol.charge,
        holonomy_minus_identity: hol.holonomy.frobenius_minus_identity(),
        curvature_norm: hol.curvature.frobenius_norm(),
        clover_gap: hol.diagnostics.clover_vs_closed_form_gap,
        exp_consistency: hol.diagnostics.exp_consistency,
        orthogonality_defect: hol.holonomy.orthogonality_defect(),
        plane_sine: hol.diagnostics.plane_sine,
        degenerate: hol.diagnostics.degenerate,
        operator_minus_identity: op.frobenius_minus_identity(),
    };

    let outcome = (|| {
        let pair = ds.state_pair(index).map_err(|e| reject(RejectStage::Geometry, e))?;
        let apply = |y: &DVector<f64>| -> Result<DVector<f64>> {
            match cfg.target {
                CouplingTarget::Difference => op.apply_minus_identity(y),
                CouplingTarget::Rotated => op.apply(y),
            }
        };
        let qg = apply(&pair.y_greedy).map_err(|e| reject(RejectStage::Coupling, e))?;
        let qb = apply(&pair.y_branch).map_err(|e| reject(RejectStage::Coupling, e))?;
        for (q, y, which) in [(&qg, &pair.y_greedy, "greedy"), (&qb, &pair.y_branch, "branch")] {
            if !(q.norm() >= ZERO_Q_RELATIVE * y.norm()) || q.norm() == 0.0 {
                return Err(Reject {
                    record_id: rec.record_id,
                    stage: RejectStage::ZeroQ,
                    reason: format!("{which} q vanishes (|q| = {:e}, |y| = {:e})", q.norm(), y.norm()),
                });
            }
        }
        let row = coupling_row_from_q(rec.record_id, qg, qb, probes, &rec.active)
            .map_err(|e| reject(RejectStage::Coupling, e))?;
        let (delta_q, delta_y) = delta_vectors(&row, &pair).map_err(|e| reject(RejectStage::Coupling, e))?;
        Ok(RecordOutcome {
            index,
            holonomy: hrow,
            row,
            delta_q,
            delta_y,
            eval: rec.eval.map(|e| (f64::from(e.cp_greedy), f64::from(e.cp_branch))),
        })
    })();
    (Some(hrow), outcome)
}

/// Runs `f` on a dedicated pool of `threads` workers, or inline on the
/// ambient pool when `threads` is `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Holonomy, operator, q vectors and couplings for every record.
pub fn process_records(ds: &Dataset, cfg: &PipelineConfig) -> Result<RecordsOutput> {
    cfg.holonomy.validate()?;
    let probes = ds.probes()?;
    let unembed = unembed_matrix(ds);
    let processed: Vec<Processed> = with_threads(cfg.threads, || {
        (0..ds.records.len())
            .into_par_iter()
            .map(|i| process_one(ds, i, unembed.as_ref(), &probes, cfg))
            .collect()
    })?;
    let mut out = RecordsOutput::default();
    for (hrow, result) in processed {
        out.holonomy_rows.extend(hrow);
        match result {
            Ok(o) => out.outcomes.push(o),
            Err(r) => out.rejects.push(r),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointRef {
    /// Index into [`RecordsOutput::outcomes`].
    pub outcome: usize,
    pub record_id: u64,
    pub continuation: Continuation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EarFiles {
    pub ear: &'static str,
    /// `active` or `bulk` max-probe set.
    pub set: &'static str,
    pub rates: Vec<FileRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SideSpearman {
    pub side: Side,
    /// `None` when the test is undefined for this population (e.g. ties only).
    pub result: Option<SpearmanResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanCoupling {
    pub greedy: f64,
    pub branch: f64,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub records: RecordsOutput,
    /// One entry per q vector: greedy then branch for each outcome.
    pub points: Vec<PointRef>,
    pub pca2: Option<Pca>,
    pub pca3: Option<Pca>,
    pub clusters: Option<Clusters>,
    pub file_distributions: Vec<EarFiles>,
    pub piece_spectrum: Vec<PieceGroup>,
    pub spearman: Vec<SideSpearman>,
    pub centipawn: Option<CentipawnSummary>,
    pub mean_coupling: Option<MeanCoupling>,
    pub probes: Vec<Probe>,
    /// Wall time per stage, in seconds.
    pub timings: Vec<(&'static str, f64)>,
}

impl Analysis {
    /// Cluster label of each point, in [`Analysis::points`] order.
    pub fn point_clusters(&self) -> Vec<&'static str> {
        let mut labels = vec!["bulk"; self.points.len()];
        if let Some(c) = &self.clusters {
            for (set, name) in [
                (&c.greedy_line, "greedy-line"),
                (&c.branch_line, "branch-line"),
                (&c.left_ear, "left-ear"),
                (&c.right_ear, "right-ear"),
            ] {
                for &i in set {
                    labels[i] = name;
                }
            }
        }
        labels
    }
}

fn side_spearman(groups: &[PieceGroup], side: Side) -> SideSpearman {
    let pairs: Vec<(f64, f64)> = groups
        .iter()
        .filter(|g| g.side == side)
        .filter_map(|g| g.piece.value().map(|v| (g.mean_coupling, v)))
        .collect();
    match spearman(&pairs) {
        Ok(r) => SideSpearman { side, result: Some(r), note: None },
        Err(e) => SideSpearman { side, result: None, note: Some(e.to_string()) },
    }
}

/// Full analysis of a dataset under `cfg`.
pub fn analyze(ds: &Dataset, cfg: &PipelineConfig) -> Result<Analysis> {
    let mut timings = Vec::new();
    let t = Instant::now();
    let records = process_records(ds, cfg)?;
    timings.push(("records", t.elapsed().as_secs_f64()));
    let probes = ds.probes()?;

    let t = Instant::now();
    let mut points = Vec::with_capacity(2 * records.outcomes.len());
    let mut qs = Vec::with_capacity(2 * records.outcomes.len());
    for (k, o) in records.outcomes.iter().enumerate() {
        for (c, q) in [(Continuation::Greedy, &o.row.q_greedy), (Continuation::Branch, &o.row.q_branch)] {
            points.push(PointRef { outcome: k, record_id: o.row.record_id, continuation: c });
            qs.push(q.clone());
        }
    }
    let pca2 = if qs.len() > 2 && ds.n() >= 2 { Some(pca(&qs, 2)?) } else { None };
    let pca3 = if qs.len() > 3 && ds.n() >= 3 { Some(pca(&qs, 3)?) } else { None };
    timings.push(("pca", t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let labels: Vec<Continuation> = points.iter().map(|p| p.continuation).collect();
    let clusters = match (&pca2, &pca3) {
        (Some(p2), Some(p3)) => Some(select_clusters(&p2.projections, &p3.projections, &labels, &cfg.clusters)?),
        _ => None,
    };

    let mut file_distributions = Vec::new();
    if let Some(c) = &clusters {
        for (ear, members) in [("left", &c.left_ear), ("right", &c.right_ear)] {
            for set in ["active", "bulk"] {
                let ids: Vec<u32> = members
                    .iter()
                    .map(|&i| {
                        let row = &records.outcomes[points[i].outcome].row;
                        match (points[i].continuation, set) {
                            (Continuation::Greedy, "active") => row.max_active_greedy.probe,
                            (Continuation::Greedy, _) => row.max_bulk_greedy.probe,
                            (Continuation::Branch, "active") => row.max_active_branch.probe,
                            (Continuation::Branch, _) => row.max_bulk_branch.probe,
                        }
                    })
                    .collect();
                file_distributions.push(EarFiles { ear, set, rates: file_distribution(&ids, &probes)? });
            }
        }
    }

    let delta_qs: Vec<DVector<f64>> = records.outcomes.iter().map(|o| o.delta_q.clone()).collect();
    let spectrum = piece_spectrum(&delta_qs, &probes)?;
    let spearman = [Side::Mine, Side::Yours].into_iter().map(|s| side_spearman(&spectrum, s)).collect();

    let evals: Vec<(f64, f64)> = records.outcomes.iter().filter_map(|o| o.eval).collect();
    let centipawn = if evals.is_empty() { None } else { Some(centipawn_summary(&evals)?) };

    let mean_coupling = if records.outcomes.is_empty() {
        None
    } else {
        let mean = |pick: &dyn Fn(&CouplingRow) -> f64| {
            records.outcomes.iter().map(|o| pick(&o.row)).sum::<f64>() / records.outcomes.len() as f64
        };
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Some(match cfg.average {
            CouplingAverage::AllProbes => MeanCoupling { greedy: mean(&|r| avg(&r.greedy)), branch: mean(&|r| avg(&r.branch)) },
            CouplingAverage::MaxProbes => MeanCoupling {
                greedy: mean(&|r| 0.5 * (r.max_active_greedy.value + r.max_bulk_greedy.value)),
                branch: mean(&|r| 0.5 * (r.max_active_branch.value + r.max_bulk_branch.value)),
            },
        })
    };
    timings.push(("aggregate", t.elapsed().as_secs_f64()));

    Ok(Analysis {
        records,
        points,
        pca2,
        pca3,
        clusters,
        file_distributions,
        piece_spectrum: spectrum,
        spearman,
        centipawn,
        mean_coupling,
        probes,
        timings,
    })
}

/// Piece values entering the rank correlation, king excluded.
pub fn ranked_pieces() -> impl Iterator<Item = (Piece, f64)> {
    Piece::ALL.into_iter().filter_map(|p| p.value().map(|v| (p, v)))
}
