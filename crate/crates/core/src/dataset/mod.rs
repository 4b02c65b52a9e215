//! Dataset storage, validation, and synthetic generation.
//!
//! Files hold 32-bit floats; everything handed to the analysis is widened to
//! 64-bit on load. Round-tripping through `f32` is therefore the precision
//! floor for comparing results across implementations.

mod format;
mod synth;

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub use format::{
    Dataset, DatasetHeader, EvalOnDisk, ProbeOnDisk, RecordOnDisk, FLAG_EVAL, FLAG_UNEMBED, FLAG_Z_POST_NORM,
    HEADER_LEN, MAGIC, VERSION,
};
pub use synth::{sha256_hex, synth, synth_dataset, BlurProfile, DatasetSummary, PlantedRole, PlantedStructure, SynthConfig};

use crate::connection::{softmax, top_two, BranchGeometry};
use crate::coupling::StatePair;
use crate::error::{Error, Result};
use crate::linalg::UnitVector;
use crate::probe::{Probe, ProbeLabel};

/// Allowed deviation of a stored `z` from unit norm.
pub const Z_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Range,
    Ordering,
    Record,
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub kind: FaultKind,
    pub failures: usize,
    pub first_record: Option<u64>,
    pub first_probe: Option<usize>,
    pub detail: Option<String>,
    #[serde(skip)]
    probabilities: Option<(f32, f32)>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }

    /// Turns the first failing check into an error of the matching class.
    pub fn into_result(self) -> Result<()> {
        let Some(c) = self.checks.into_iter().find(|c| !c.passed()) else {
            return Ok(());
        };
        let reason = format!("{}: {}", c.name, c.detail.clone().unwrap_or_default());
        Err(match (c.kind, c.first_record, c.first_probe) {
            (_, None, Some(index)) | (FaultKind::Probe, _, Some(index)) => Error::InvalidProbe { index, reason },
            (FaultKind::Range, Some(record_id), _) => Error::ValueOutOfRange { record_id, reason },
            (FaultKind::Ordering, Some(record_id), _) => {
                let (p1, p2) = c.probabilities.unwrap_or((f32::NAN, f32::NAN));
                Error::ProbabilityOrdering { record_id, p1, p2 }
            }
            (_, Some(record_id), _) => Error::InvalidRecord { record_id, reason },
            (_, None, None) => Error::InvalidRecord { record_id: u64::MAX, reason },
        })
    }
}

struct Tally {
    result: CheckResult,
}

impl Tally {
    fn new(name: &'static str, kind: FaultKind) -> Self {
        Self { result: CheckResult { name, kind, failures: 0, first_record: None, first_probe: None, detail: None, probabilities: None } }
    }

    fn record(&mut self, id: u64, detail: impl FnOnce() -> String) {
        if self.result.failures == 0 {
            self.result.first_record = Some(id);
            self.result.detail = Some(detail());
        }
        self.result.failures += 1;
    }

    fn probe(&mut self, index: usize, detail: impl FnOnce() -> String) {
        if self.result.failures == 0 {
            self.result.first_probe = Some(index);
            self.result.detail = Some(detail());
        }
        self.result.failures += 1;
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt()
}

/// Value-level checks on a structurally decoded dataset.
pub fn validate_dataset(ds: &Dataset) -> ValidationReport {
    let h = &ds.header;
    let mut shape = Tally::new("shape", FaultKind::Record);
    if let Err(e) = ds.check_shape() {
        shape.result.failures = 1;
        shape.result.detail = Some(e.to_string());
        return ValidationReport { checks: vec![shape.result] };
    }

    let mut labels = Tally::new("probe_labels", FaultKind::Probe);
    let mut probe_values = Tally::new("probe_values", FaultKind::Probe);
    let mut seen_labels = HashSet::new();
    for (i, p) in ds.probes.iter().enumerate() {
        match p.label.parse::<ProbeLabel>() {
            Ok(l) if !seen_labels.insert(l) => labels.probe(i, || format!("duplicate label {}", p.label)),
            Ok(_) => {}
            Err(_) => labels.probe(i, || format!("label `{}` does not parse", p.label)),
        }
        let finite = p.w.iter().chain([&p.b, &p.accuracy, &p.f1]).all(|x| x.is_finite());
        if !finite || norm(&p.w) == 0.0 || !(0.0..=1.0).contains(&p.accuracy) || !(0.0..=1.0).contains(&p.f1) {
            probe_values.probe(i, || format!("probe {} has non-finite, zero, or out-of-range values", p.label));
        }
    }
    if let Some(u) = &ds.unembed {
        if u.iter().any(|x| !x.is_finite()) {
            probe_values.result.failures += 1;
            probe_values.result.detail.get_or_insert_with(|| "unembedding matrix is not finite".into());
        }
    }

    let mut finite = Tally::new("finite_values", FaultKind::Range);
    let mut z_norm = Tally::new("z_norm", FaultKind::Range);
    let mut p_range = Tally::new("probability_range", FaultKind::Range);
    let mut p_order = Tally::new("probability_order", FaultKind::Ordering);
    let mut tokens = Tally::new("token_distinct", FaultKind::Record);
    let mut token_range = Tally::new("token_range", FaultKind::Range);
    let mut active = Tally::new("active_ids", FaultKind::Range);
    let mut ids = Tally::new("unique_record_ids", FaultKind::Record);
    let mut ranking = Tally::new("unembed_ranking", FaultKind::Record);
    let mut seen_ids = HashSet::new();
    let unembed = unembed_matrix(ds);

    for r in &ds.records {
        let id = r.record_id;
        let floats = [&r.z, &r.v1, &r.v2, &r.y_greedy, &r.y_branch];
        let eval_ok = r.eval.is_none_or(|e| e.cp_greedy.is_finite() && e.cp_branch.is_finite());
        let all_finite = r.p1.is_finite() && r.p2.is_finite() && eval_ok && floats.iter().all(|v| v.iter().all(|x| x.is_finite()));
        if !all_finite {
            finite.record(id, || "non-finite value".into());
            continue;
        }
        let zn = norm(&r.z);
        if (zn - 1.0).abs() > Z_NORM_TOLERANCE {
            z_norm.record(id, || format!("‖z‖ = {zn}"));
        }
        let (p1, p2) = (f64::from(r.p1), f64::from(r.p2));
        if !(p1 > 0.0 && p1 <= 1.0 && (0.0..=1.0).contains(&p2) && p1 + p2 <= 1.0 + 1e-6) {
            p_range.record(id, || format!("p1={p1}, p2={p2}"));
        }
        if r.p2 > r.p1 {
            if p_order.result.failures == 0 {
                p_order.result.probabilities = Some((r.p1, r.p2));
            }
            p_order.record(id, || format!("p1={}, p2={}", r.p1, r.p2));
        }
        if r.token1 == r.token2 {
            tokens.record(id, || format!("token1 = token2 = {}", r.token1));
        }
        if h.has_unembed() && (r.token1 >= h.vocab_size || r.token2 >= h.vocab_size) {
            token_range.record(id, || format!("token outside vocabulary of size {}", h.vocab_size));
        }
        let sorted = r.active.windows(2).all(|w| w[0] < w[1]);
        if !sorted || r.active.iter().any(|&a| a >= h.probe_count) {
            active.record(id, || "active ids must be strictly increasing and below probe_count".into());
        }
        if !seen_ids.insert(id) {
            ids.record(id, || "duplicate record id".into());
        }
        if let Some(v) = &unembed {
            if r.token1 < h.vocab_size && r.token2 < h.vocab_size && r.token1 != r.token2 {
                let z = to_f64(&r.z);
                let top = top_two(&softmax(&(v.as_ref() * &z)));
                if top != (r.token1, r.token2) && top != (r.token2, r.token1) {
                    ranking.record(id, || format!("softmax(V z) ranks {top:?} on top"));
                }
            }
        }
    }

    let checks = [shape, labels, probe_values, finite, z_norm, p_range, p_order, tokens, token_range, active, ids, ranking]
        .into_iter()
        .map(|t| t.result)
        .collect();
    ValidationReport { checks }
}

/// Reads a file and reports every check. Header and truncation faults are
/// returned as errors because nothing after them can be interpreted.
pub fn validate(path: impl AsRef<Path>) -> Result<ValidationReport> {
    Ok(validate_dataset(&Dataset::read_unchecked(path)?))
}

pub(crate) fn to_f64(v: &[f32]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().map(|&x| f64::from(x)))
}

pub(crate) fn to_f32(v: &DVector<f64>) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// The `l × n` unembedding matrix, if the file carries one.
pub fn unembed_matrix(ds: &Dataset) -> Option<Arc<DMatrix<f64>>> {
    let n = ds.header.n as usize;
    ds.unembed.as_ref().map(|u| {
        let l = u.len() / n;
        Arc::new(DMatrix::from_row_iterator(l, n, u.iter().map(|&x| f64::from(x))))
    })
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.header.n as usize
    }

    pub fn probes(&self) -> Result<Vec<Probe>> {
        self.probes
            .iter()
            .map(|p| Probe::new(&p.label, to_f64(&p.w), p.b.into(), p.accuracy.into(), p.f1.into()))
            .collect()
    }

    /// The branch geometry of record `index`, with `V` attached when present.
    pub fn geometry(&self, index: usize, unembed: Option<&Arc<DMatrix<f64>>>) -> Result<BranchGeometry> {
        let r = &self.records[index];
        let z = UnitVector::new(to_f64(&r.z))?;
        let g = BranchGeometry::new(z, to_f64(&r.v1), to_f64(&r.v2), r.p1.into(), r.p2.into(), r.token1, r.token2)?;
        match unembed {
            Some(v) => g.with_unembed(v.clone()),
            None => Ok(g),
        }
    }

    pub fn state_pair(&self, index: usize) -> Result<StatePair> {
        let r = &self.records[index];
        StatePair::new(to_f64(&r.y_greedy), to_f64(&r.y_branch))
    }
}
