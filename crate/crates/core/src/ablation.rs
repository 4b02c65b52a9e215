//! Control operators that replace the holonomy in the coupling analysis.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::connection::BranchGeometry;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dense_exp_minus_identity, RotationOperator, UnitVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    RandomSoN,
    RotateV1,
    RotateV2,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [AblationMode::RandomSoN, AblationMode::RotateV1, AblationMode::RotateV2];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::RandomSoN => "random-so-n",
            AblationMode::RotateV1 => "rotate-v1",
            AblationMode::RotateV2 => "rotate-v2",
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub mode: AblationMode,
    pub seed: Option<u64>,
}

impl AblationSpec {
    pub fn new(mode: AblationMode, seed: Option<u64>) -> Result<Self> {
        match (mode, seed) {
            (AblationMode::RandomSoN, None) => Err(Error::Config("random-so-n ablation needs a seed".into())),
            (AblationMode::RandomSoN, Some(_)) | (_, None) => Ok(Self { mode, seed }),
            (_, Some(_)) => Err(Error::Config(format!("{} ablation takes no seed", mode.as_str()))),
        }
    }

    /// The operator standing in for `reference` at one record. Random
    /// rotations draw from a stream keyed by `(seed, record_id)`.
    pub fn operator(&self, g: &BranchGeometry, reference: &RotationOperator, record_id: u64) -> Result<RotationOperator> {
        match self.mode {
            AblationMode::RandomSoN => {
                let seed = self.seed.ok_or_else(|| Error::Config("random-so-n ablation needs a seed".into()))?;
                random_matched_rotation(reference, record_seed(seed, record_id))
            }
            AblationMode::RotateV1 => rotate_onto(g.z(), g.v1()),
            AblationMode::RotateV2 => rotate_onto(g.z(), g.v2()),
        }
    }
}

/// SplitMix64 finalizer over the pair, so neighbouring ids get unrelated streams.
pub fn record_seed(seed: u64, record_id: u64) -> u64 {
    let mut x = seed ^ record_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// A random rotation `exp(τS)` with `‖exp(τS) − I‖_F = ‖H − I‖_F`.
///
/// Every element of SO(n) has Frobenius norm `√n`, so the distance from the
/// identity is the quantity matched. `S` is a seeded antisymmetrized
/// Gaussian; `τ` is found by bisection on the spectral expression
/// `‖exp(τS) − I‖_F² = Σ 4 sin²(τθ_k/2)`, which is monotone up to `τθ_max = π`.
pub fn random_matched_rotation(reference: &RotationOperator, seed: u64) -> Result<RotationOperator> {
    let n = reference.dim();
    let target = reference.frobenius_minus_identity();
    if target == 0.0 {
        return Ok(RotationOperator::identity(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let s = (&g - g.transpose()) * std::f64::consts::FRAC_1_SQRT_2;

    let thetas: Vec<f64> = (-(&s * &s)).symmetric_eigenvalues().iter().map(|l| l.max(0.0).sqrt()).collect();
    let theta_max = thetas.iter().copied().fold(0.0, f64::max);
    if theta_max == 0.0 {
        return Err(Error::RootFinding("random generator vanished".into()));
    }
    let dist = |tau: f64| thetas.iter().map(|t| (2.0 * (0.5 * tau * t).sin()).powi(2)).sum::<f64>().sqrt();

    let (mut lo, mut hi) = (0.0, std::f64::consts::PI / theta_max);
    if dist(hi) < target {
        return Err(Error::RootFinding(format!("‖H − I‖_F = {target} exceeds the reachable range of the generator")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dist(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    Ok(RotationOperator::Dense { delta: dense_exp_minus_identity(&(s * tau)) })
}

/// The planar rotation in `span{z, t}` taking `z` to `t / ‖t‖`.
pub fn rotate_onto(z: &UnitVector, target: &DVector<f64>) -> Result<RotationOperator> {
    check_dim(z.dim(), target.len())?;
    let t = UnitVector::new(target.clone())?;
    let zv = z.as_vector();
    let c = zv.dot(t.as_vector());
    if c <= -1.0 + 1e-12 {
        return Err(Error::AntipodalTarget);
    }
    let mut r = t.as_vector() - zv * c;
    let k = r.dot(zv);
    r.axpy(-k, zv, 1.0);
    let s = r.norm();
    if s == 0.0 {
        return Ok(RotationOperator::identity(z.dim()));
    }
    let angle = s.atan2(c);
    let basis = DMatrix::from_columns(&[zv.clone(), r / s]);
    let (sin, half) = (angle.sin(), (0.5 * angle).sin());
    let cm1 = -2.0 * half * half;
    Ok(RotationOperator::LowRank { basis, delta: DMatrix::from_row_slice(2, 2, &[cm1, -sin, sin, cm1]) })
}
