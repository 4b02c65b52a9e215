use nalgebra::{DMatrix, DVector};

use super::basis::union_basis;
use super::{ensure_finite_mat, skew_defect};
use crate::error::{check_dim, Error, Result};

/// Largest support dimension kept in low-rank form. Merges that would exceed
/// it fall back to the dense representation.
pub const MAX_LOW_RANK: usize = 4;

/// An element of 𝔰𝔬(n).
#[derive(Debug, Clone, PartialEq)]
pub enum SkewOperator {
    Dense(DMatrix<f64>),
    /// `basis · coeffs · basisᵀ` with orthonormal `basis` (n × k) and skew
    /// `coeffs` (k × k).
    LowRank { basis: DMatrix<f64>, coeffs: DMatrix<f64> },
}

impl SkewOperator {
    pub fn zero(n: usize) -> Self {
        SkewOperator::LowRank { basis: DMatrix::zeros(n, 0), coeffs: DMatrix::zeros(0, 0) }
    }

    pub fn dense(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidOperator(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
        }
        ensure_finite_mat(&m, "skew operator")?;
        let defect = skew_defect(&m);
        if defect > 1e-10 * m.norm().max(1.0) {
            return Err(Error::InvalidOperator(format!("matrix is not skew (‖M+Mᵀ‖_F = {defect:e})")));
        }
        Ok(SkewOperator::Dense(m))
    }

    pub fn low_rank(basis: DMatrix<f64>, coeffs: DMatrix<f64>) -> Result<Self> {
        let k = basis.ncols();
        if k > MAX_LOW_RANK {
            return Err(Error::InvalidOperator(format!("support dimension {k} exceeds {MAX_LOW_RANK}")));
        }
        if coeffs.nrows() != k || coeffs.ncols() != k {
            return Err(Error::InvalidOperator(format!(
                "coefficient block is {}x{}, basis has {k} columns",
                coeffs.nrows(),
                coeffs.ncols()
            )));
        }
        ensure_finite_mat(&basis, "support basis")?;
        ensure_finite_mat(&coeffs, "skew coefficients")?;
        let gram_defect = (basis.transpose() * &basis - DMatrix::identity(k, k)).amax();
        if gram_defect > 1e-10 {
            return Err(Error::InvalidOperator(format!("support basis is not orthonormal (defect {gram_defect:e})")));
        }
        if skew_defect(&coeffs) > 1e-12 * coeffs.norm().max(1.0) {
            return Err(Error::InvalidOperator("coefficient block is not skew".into()));
        }
        Ok(SkewOperator::LowRank { basis, coeffs })
    }

    pub fn dim(&self) -> usize {
        match self {
            SkewOperator::Dense(m) => m.nrows(),
            SkewOperator::LowRank { basis, .. } => basis.nrows(),
        }
    }

    /// Support dimension for the low-rank form, `n` for dense.
    pub fn support_dim(&self) -> usize {
        match self {
            SkewOperator::Dense(m) => m.nrows(),
            SkewOperator::LowRank { basis, .. } => basis.ncols(),
        }
    }

    pub fn is_low_rank(&self) -> bool {
        matches!(self, SkewOperator::LowRank { .. })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SkewOperator::Dense(m) => m.clone(),
            SkewOperator::LowRank { basis, coeffs } => {
                if basis.ncols() == 0 {
                    return DMatrix::zeros(basis.nrows(), basis.nrows());
                }
                basis * coeffs * basis.transpose()
            }
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            SkewOperator::Dense(m) => m * x,
            SkewOperator::LowRank { basis, coeffs } => {
                if basis.ncols() == 0 {
                    return Ok(DVector::zeros(x.len()));
                }
                basis * (coeffs * (basis.transpose() * x))
            }
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            SkewOperator::Dense(m) => m.norm(),
            SkewOperator::LowRank { coeffs, .. } => coeffs.norm(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        match self {
            SkewOperator::Dense(m) => SkewOperator::Dense(m * s),
            SkewOperator::LowRank { basis, coeffs } => {
                SkewOperator::LowRank { basis: basis.clone(), coeffs: coeffs * s }
            }
        }
    }

    /// `self + s · other`, merging supports when both are low-rank.
    pub fn add_scaled(&self, other: &SkewOperator, s: f64) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        match (self, other) {
            (
                SkewOperator::LowRank { basis: ba, coeffs: ca },
                SkewOperator::LowRank { basis: bb, coeffs: cb },
            ) => {
                let (u, pa, pb) = union_basis(ba, bb);
                if u.ncols() > MAX_LOW_RANK {
                    return Ok(SkewOperator::Dense(self.to_dense() + other.to_dense() * s));
                }
                let coeffs = &pa * ca * pa.transpose() + (&pb * cb * pb.transpose()) * s;
                Ok(SkewOperator::LowRank { basis: u, coeffs })
            }
            _ => Ok(SkewOperator::Dense(self.to_dense() + other.to_dense() * s)),
        }
    }

    pub fn sub(&self, other: &SkewOperator) -> Result<Self> {
        self.add_scaled(other, -1.0)
    }

    /// Frobenius distance to another operator of the same dimension.
    pub fn distance(&self, other: &SkewOperator) -> Result<f64> {
        Ok(self.sub(other)?.frobenius_norm())
    }
}

/// The Lie bracket `[A, B] = AB − BA`.
pub fn commutator(a: &SkewOperator, b: &SkewOperator) -> Result<SkewOperator> {
    check_dim(a.dim(), b.dim())?;
    match (a, b) {
        (
            SkewOperator::LowRank { basis: ba, coeffs: ca },
            SkewOperator::LowRank { basis: bb, coeffs: cb },
        ) => {
            let (u, pa, pb) = union_basis(ba, bb);
            let ma = &pa * ca * pa.transpose();
            let mb = &pb * cb * pb.transpose();
            let c = &ma * &mb - &mb * &ma;
            if u.ncols() > MAX_LOW_RANK {
                return Ok(SkewOperator::Dense(&u * c * u.transpose()));
            }
            Ok(SkewOperator::LowRank { basis: u, coeffs: c })
        }
        _ => {
            let ma = a.to_dense();
            let mb = b.to_dense();
            Ok(SkewOperator::Dense(&ma * &mb - &mb * &ma))
        }
    }
}
