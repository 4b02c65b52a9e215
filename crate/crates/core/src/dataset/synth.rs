//! Seeded synthetic datasets, optionally with planted q structure.
//!
//! Planted records are built backwards from the q vector they should produce.
//! In the record's chart `[z, u, v]` the curvature is `h = ε² F` with axis
//! `ω`, so `h y = ω × y` and its image is the plane `ω⊥`. Pick an orthonormal
//! pair `p₁, p₂` spanning that plane and embed the chart with
//! `B = T₁ p₁ᵀ + T₂ p₂ᵀ + e_r ω̂ᵀ`, where `T₁, T₂` are global target directions
//! and `e_r` is a random direction orthogonal to them. A target
//! `t = α T₁ + β T₂` is then reached by `y₃ = ε² (t₃ × ω̂) / |ω|` with
//! `t₃ = α p₁ + β p₂`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::format::{Dataset, DatasetHeader, EvalOnDisk, ProbeOnDisk, RecordOnDisk, FLAG_EVAL, FLAG_UNEMBED, VERSION};
use super::to_f32;
use crate::connection::{select_plane, softmax, top_two, BranchGeometry, ChargeMode};
use crate::error::{Error, Result};
use crate::holonomy::curvature_closed_form;
use crate::linalg::UnitVector;
use crate::probe::probe_family;

/// Nominal ε used to size planted y vectors; q scales as ε², so any other
/// analysis ε rescales the whole population uniformly.
const NOMINAL_EPSILON: f64 = 1e-3;

/// `p₁ ~ U[p1_min, p1_max]`, `p₂ = s (1 − p₁)` with `s ~ U[share_min, share_max]`,
/// clipped so `p₂ ≤ p₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurProfile {
    pub p1_min: f64,
    pub p1_max: f64,
    pub share_min: f64,
    pub share_max: f64,
}

impl BlurProfile {
    /// Both top tokens near one half.
    pub const fn maximal() -> Self {
        Self { p1_min: 0.5, p1_max: 0.5, share_min: 0.8, share_max: 1.0 }
    }

    /// `p₁ = 0.999` with almost nothing left for the runner-up.
    pub const fn confident() -> Self {
        Self { p1_min: 0.999, p1_max: 0.999, share_min: 0.001, share_max: 0.02 }
    }

    /// Every record chargeless.
    pub const fn chargeless() -> Self {
        Self { p1_min: 0.6, p1_max: 0.95, share_min: 0.0, share_max: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.p1_min
            && self.p1_min <= self.p1_max
            && self.p1_max <= 1.0
            && 0.0 <= self.share_min
            && self.share_min <= self.share_max
            && self.share_max <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid blur profile {self:?}")))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
        let p1 = self.p1_min + a * (self.p1_max - self.p1_min);
        let share = self.share_min + b * (self.share_max - self.share_min);
        (p1, (share * (1.0 - p1)).min(p1))
    }
}

impl Default for BlurProfile {
    fn default() -> Self {
        Self { p1_min: 0.5, p1_max: 0.8, share_min: 0.5, share_max: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedStructure {
    /// Share of records whose two q vectors sit in one of the two ears.
    pub ear_fraction: f64,
    /// Share of records whose q vectors lie on the greedy and branch lines.
    pub line_fraction: f64,
    /// Share of `‖y‖²` inside the record's support for planted records; the
    /// rest is noise the holonomy cannot see.
    pub alignment: f64,
}

impl Default for PlantedStructure {
    fn default() -> Self {
        Self { ear_fraction: 0.08, line_fraction: 0.3, alignment: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n: usize,
    pub record_count: usize,
    pub probe_count: usize,
    pub blur_profile: BlurProfile,
    pub planted: Option<PlantedStructure>,
    /// Ship an unembedding matrix of this many rows and derive tokens,
    /// probabilities, and embeddings from it. Not combinable with planting.
    pub vocab_size: Option<u32>,
    pub with_eval: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n: 64,
            record_count: 200,
            probe_count: 737,
            blur_profile: BlurProfile::default(),
            planted: None,
            vocab_size: None,
            with_eval: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.blur_profile.validate()?;
        if self.n < 4 {
            return Err(Error::Config(format!("n must be at least 4, got {}", self.n)));
        }
        if !(2..=768).contains(&self.probe_count) {
            return Err(Error::Config(format!("probe_count must lie in 2..=768, got {}", self.probe_count)));
        }
        if let Some(p) = &self.planted {
            let in_unit = |x: f64| (0.0..=1.0).contains(&x);
            if !in_unit(p.ear_fraction) || !in_unit(p.line_fraction) || p.ear_fraction + p.line_fraction > 1.0 {
                return Err(Error::Config("planted fractions must lie in [0, 1] and sum to at most 1".into()));
            }
            if !(p.alignment > 0.0 && p.alignment <= 1.0) {
                return Err(Error::Config("planted alignment must lie in (0, 1]".into()));
            }
            if self.n < 8 {
                return Err(Error::Config("planted structure needs n >= 8".into()));
            }
            if self.vocab_size.is_some() {
                return Err(Error::Config("planted structure cannot be combined with an unembedding matrix".into()));
            }
        }
        if let Some(l) = self.vocab_size {
            if l < 3 {
                return Err(Error::Config("vocab_size must be at least 3".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantedRole {
    Bulk,
    LeftEar,
    RightEar,
    Lines,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub sha256: String,
    pub bytes: usize,
    pub record_count: usize,
    pub probe_count: usize,
    pub n: usize,
    pub mean_charge: f64,
    /// Role of each record, in file order.
    pub roles: Vec<PlantedRole>,
    /// Ear plane `(e_a, e_b)` and line direction `e_c` when planted.
    pub planted_directions: Option<[Vec<f64>; 3]>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = gaussian(rng, n);
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Random unit vector orthogonal to the orthonormal columns `q`.
fn unit_orthogonal(rng: &mut ChaCha8Rng, q: &[&DVector<f64>]) -> DVector<f64> {
    let n = q[0].len();
    loop {
        let mut v = gaussian(rng, n);
        for _ in 0..2 {
            for b in q {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

/// Flips `v` so its largest-magnitude entry is positive.
fn sign_fix(v: DVector<f64>) -> DVector<f64> {
    let lead = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
    if lead < 0.0 {
        -v
    } else {
        v
    }
}

struct PlantedRecord {
    z: DVector<f64>,
    v1: DVector<f64>,
    v2: DVector<f64>,
    y_greedy: DVector<f64>,
    y_branch: DVector<f64>,
}

/// Builds one planted record whose q vectors approximate `ε² t_g` and `ε² t_b`,
/// with targets given as coefficients on `(t1, t2)`.
#[allow(clippy::too_many_arguments)]
fn plant(
    rng: &mut ChaCha8Rng,
    p: (f64, f64),
    t1: &DVector<f64>,
    t2: &DVector<f64>,
    avoid: &[&DVector<f64>],
    targets: [(f64, f64); 2],
    alignment: f64,
) -> Result<PlantedRecord> {
    // chart geometry: z = e1, v1 = (a, b, 0), v2 = (c, d, e) with b, e > 0
    let (v1_3, v2_3, omega) = loop {
        let v1_3 = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(0.5..1.0), 0.0);
        let v2_3 = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.5..1.0));
        let g3 = BranchGeometry::new(
            UnitVector::basis(3, 0),
            DVector::from_column_slice(v1_3.as_slice()),
            DVector::from_column_slice(v2_3.as_slice()),
            p.0,
            p.1,
            0,
            1,
        )?;
        let plane = select_plane(&g3)?;
        let h = curvature_closed_form(&g3, &plane, NOMINAL_EPSILON, NOMINAL_EPSILON, ChargeMode::Frozen)?.to_dense();
        let omega = Vector3::new(h[(2, 1)], h[(0, 2)], h[(1, 0)]);
        if omega.norm() > 1e-3 * NOMINAL_EPSILON.powi(2) * p.0 * p.1 {
            break (v1_3, v2_3, omega);
        }
    };
    let w_hat = omega.normalize();
    let r = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
    let p1 = (r - w_hat * w_hat.dot(&r)).normalize();
    let p2 = w_hat.cross(&p1);

    let mut basis_avoid: Vec<&DVector<f64>> = vec![t1, t2];
    basis_avoid.extend_from_slice(avoid);
    let e_r = unit_orthogonal(rng, &basis_avoid);
    let b = DMatrix::from_columns(&[t1.clone(), t2.clone(), e_r.clone()])
        * DMatrix::from_row_slice(3, 3, &[p1.x, p1.y, p1.z, p2.x, p2.y, p2.z, w_hat.x, w_hat.y, w_hat.z]);

    let eps2 = NOMINAL_EPSILON * NOMINAL_EPSILON;
    let lift = |v: Vector3<f64>| &b * DVector::from_column_slice(v.as_slice());
    let mut ys = targets.iter().map(|&(alpha, beta)| {
        let t3 = p1 * alpha + p2 * beta;
        t3.cross(&w_hat) * (eps2 / omega.norm())
    });
    let (yg3, yb3) = (ys.next().expect("two targets"), ys.next().expect("two targets"));

    let cols: Vec<DVector<f64>> = (0..3).map(|j| b.column(j).into_owned()).collect();
    let support: Vec<&DVector<f64>> = cols.iter().collect();
    let noisy = |rng: &mut ChaCha8Rng, y3: Vector3<f64>| {
        let ys = lift(y3);
        let scale = ys.norm() * ((1.0 - alignment) / alignment).sqrt();
        if scale == 0.0 {
            ys
        } else {
            ys + unit_orthogonal(rng, &support) * scale
        }
    };
    let y_greedy = noisy(rng, yg3);
    let y_branch = noisy(rng, yb3);
    Ok(PlantedRecord {
        z: lift(Vector3::new(1.0, 0.0, 0.0)),
        v1: lift(v1_3),
        v2: lift(v2_3),
        y_greedy,
        y_branch,
    })
}

/// Generates the dataset in memory.
pub fn synth_dataset(config: &SynthConfig) -> Result<(Dataset, DatasetSummary)> {
    config.validate()?;
    let n = config.n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let labels = probe_family();
    let probes: Vec<ProbeOnDisk> = labels[..config.probe_count]
        .iter()
        .map(|l| ProbeOnDisk {
            label: l.to_string(),
            w: to_f32(&unit(&mut rng, n)),
            b: (0.1 * rng.sample::<f64, _>(StandardNormal)) as f32,
            accuracy: rng.random_range(0.6..0.95) as f32,
            f1: rng.random_range(0.5..0.95) as f32,
        })
        .collect();

    let unembed = config.vocab_size.map(|l| {
        let rows: Vec<DVector<f64>> = (0..l).map(|_| unit(&mut rng, n) * 10.0).collect();
        DMatrix::from_fn(l as usize, n, |i, j| f64::from(rows[i][j] as f32))
    });

    let directions = config.planted.map(|_| {
        let a = sign_fix(unit(&mut rng, n));
        let b = sign_fix(unit_orthogonal(&mut rng, &[&a]));
        let c = sign_fix(unit_orthogonal(&mut rng, &[&a, &b]));
        [a, b, c]
    });

    let mut roles = vec![PlantedRole::Bulk; config.record_count];
    if let Some(p) = &config.planted {
        let ears = (p.ear_fraction * config.record_count as f64).round() as usize;
        let lines = (p.line_fraction * config.record_count as f64).round() as usize;
        for (i, r) in roles.iter_mut().enumerate().take((ears + lines).min(config.record_count)) {
            *r = if i < ears {
                if i % 2 == 0 {
                    PlantedRole::LeftEar
                } else {
                    PlantedRole::RightEar
                }
            } else {
                PlantedRole::Lines
            };
        }
        roles.shuffle(&mut rng);
    }

    let mut records = Vec::with_capacity(config.record_count);
    let mut charge_sum = 0.0;
    for (i, role) in roles.iter().enumerate() {
        let (mut p1, mut p2) = config.blur_profile.draw(&mut rng);
        let (token1, token2): (u32, u32);
        let (z, v1, v2, y_greedy, y_branch) = match (role, &directions, &unembed) {
            (PlantedRole::Bulk, _, None) => {
                let z = unit(&mut rng, n);
                let v1 = unit(&mut rng, n);
                let v2 = unit(&mut rng, n);
                // match the typical norm of planted y vectors
                let scale = config.planted.map_or(1.0, |p| p.alignment.sqrt().recip());
                let yg = unit(&mut rng, n) * scale;
                let yb = unit(&mut rng, n) * scale;
                token1 = rng.random_range(0..1000);
                token2 = (token1 + rng.random_range(1..1000)) % 1000;
                (z, v1, v2, yg, yb)
            }
            (PlantedRole::Bulk, _, Some(v)) => {
                let l = v.nrows() as u32;
                let (z, t1, t2) = loop {
                    let a = rng.random_range(0..l);
                    let b = (a + rng.random_range(1..l)) % l;
                    let raw = v.row(a as usize).transpose() + v.row(b as usize).transpose() + gaussian(&mut rng, n) * 0.3;
                    let z = raw.normalize();
                    let probs = softmax(&(v * &z));
                    let top = top_two(&probs);
                    if top == (a, b) || top == (b, a) {
                        p1 = probs[top.0 as usize];
                        p2 = probs[top.1 as usize];
                        break (z, top.0, top.1);
                    }
                };
                token1 = t1;
                token2 = t2;
                let v1 = v.row(t1 as usize).transpose();
                let v2 = v.row(t2 as usize).transpose();
                (z, v1, v2, unit(&mut rng, n), unit(&mut rng, n))
            }
            (role, Some([ea, eb, ec]), _) => {
                let planted = config.planted.expect("directions imply planting");
                let jitter = |rng: &mut ChaCha8Rng| 0.03 * rng.sample::<f64, _>(StandardNormal);
                let rec = match role {
                    PlantedRole::LeftEar | PlantedRole::RightEar => {
                        let sx = if *role == PlantedRole::LeftEar { -0.8 } else { 0.8 };
                        let rho = rng.random_range(0.9..1.1);
                        let tg = (rho * sx + jitter(&mut rng), rho * 0.6 + jitter(&mut rng));
                        let tb = (rho * sx + jitter(&mut rng), rho * 0.6 + jitter(&mut rng));
                        plant(&mut rng, (p1, p2), ea, eb, &[ec], [tg, tb], planted.alignment)?
                    }
                    _ => {
                        let delta = 0.008;
                        let sg = rng.random_range(-0.4..0.4);
                        let sb = rng.random_range(-0.4..0.4);
                        plant(&mut rng, (p1, p2), ec, ea, &[eb], [(sg, delta), (sb, -delta)], planted.alignment)?
                    }
                };
                token1 = rng.random_range(0..1000);
                token2 = (token1 + rng.random_range(1..1000)) % 1000;
                (rec.z, rec.v1, rec.v2, rec.y_greedy, rec.y_branch)
            }
            (_, None, _) => unreachable!("roles other than bulk require planting"),
        };
        let eval = config.with_eval.then(|| {
            let g: f64 = 50.0 * rng.sample::<f64, _>(StandardNormal);
            let change = (4.5 + 1.5 * rng.sample::<f64, _>(StandardNormal)).exp();
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            EvalOnDisk { cp_greedy: g as f32, cp_branch: (g + sign * change) as f32 }
        });
        let (p1, p2) = (p1 as f32, p2 as f32);
        charge_sum += 4.0 * f64::from(p1) * f64::from(p2);
        let active_count = rng.random_range(2..=32usize).min(config.probe_count - 1);
        let mut active: Vec<u32> = rand::seq::index::sample(&mut rng, config.probe_count, active_count)
            .into_iter()
            .map(|x| x as u32)
            .collect();
        active.sort_unstable();
        records.push(RecordOnDisk {
            record_id: i as u64,
            token1,
            token2,
            p1,
            p2: p2.min(p1),
            z: to_f32(&z),
            v1: to_f32(&v1),
            v2: to_f32(&v2),
            y_greedy: to_f32(&y_greedy),
            y_branch: to_f32(&y_branch),
            active,
            eval,
        });
    }

    let mut flags = 0;
    if config.with_eval {
        flags |= FLAG_EVAL;
    }
    if unembed.is_some() {
        flags |= FLAG_UNEMBED;
    }
    let ds = Dataset {
        header: DatasetHeader {
            version: VERSION,
            n: n as u32,
            probe_count: config.probe_count as u32,
            record_count: config.record_count as u32,
            flags,
            vocab_size: config.vocab_size.unwrap_or(0),
        },
        probes,
        unembed: unembed.map(|v| v.transpose().iter().map(|&x| x as f32).collect()),
        records,
    };
    let bytes = ds.encode()?;
    let summary = DatasetSummary {
        sha256: sha256_hex(&bytes),
        bytes: bytes.len(),
        record_count: config.record_count,
        probe_count: config.probe_count,
        n,
        mean_charge: if config.record_count > 0 { charge_sum / config.record_count as f64 } else { 0.0 },
        roles,
        planted_directions: directions.map(|d| d.map(|v| v.iter().copied().collect())),
    };
    Ok((ds, summary))
}

/// Generates the dataset and writes it to `out_path`.
pub fn synth(config: &SynthConfig, out_path: impl AsRef<Path>) -> Result<DatasetSummary> {
    let (ds, summary) = synth_dataset(config)?;
    ds.write(out_path)?;
    Ok(summary)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
