use nalgebra::{DMatrix, DVector};

use super::basis::union_basis;
use super::{ensure_finite_mat, MAX_LOW_RANK};
use crate::error::{check_dim, Error, Result};

/// An element of SO(n), stored as its offset from the identity.
///
/// The low-rank form acts as `I + basis · delta · basisᵀ`: a `k × k` rotation
/// block on an orthonormal support basis and the identity elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub enum RotationOperator {
    Dense { delta: DMatrix<f64> },
    LowRank { basis: DMatrix<f64>, delta: DMatrix<f64> },
}

impl RotationOperator {
    pub fn identity(n: usize) -> Self {
        RotationOperator::LowRank { basis: DMatrix::zeros(n, 0), delta: DMatrix::zeros(0, 0) }
    }

    /// Wraps an explicit orthogonal matrix, checking the group invariants.
    pub fn from_matrix(r: &DMatrix<f64>) -> Result<Self> {
        if !r.is_square() {
            return Err(Error::InvalidOperator("rotation matrix is not square".into()));
        }
        ensure_finite_mat(r, "rotation")?;
        let n = r.nrows();
        let op = RotationOperator::Dense { delta: r - DMatrix::identity(n, n) };
        op.validate()?;
        Ok(op)
    }

    pub fn low_rank(basis: DMatrix<f64>, block: &DMatrix<f64>) -> Result<Self> {
        let k = basis.ncols();
        if block.nrows() != k || block.ncols() != k {
            return Err(Error::InvalidOperator("rotation block does not match basis".into()));
        }
        let op = RotationOperator::LowRank { basis, delta: block - DMatrix::identity(k, k) };
        op.validate()?;
        Ok(op)
    }

    /// Checks `‖RᵀR − I‖_F ≤ 1e-8` and `det R = 1 ± 1e-6`.
    pub fn validate(&self) -> Result<()> {
        if let RotationOperator::LowRank { basis, .. } = self {
            let k = basis.ncols();
            if (basis.transpose() * basis - DMatrix::identity(k, k)).amax() > 1e-10 {
                return Err(Error::InvalidOperator("rotation support basis is not orthonormal".into()));
            }
        }
        let defect = self.orthogonality_defect();
        if defect > 1e-8 {
            return Err(Error::InvalidOperator(format!("not orthogonal (‖RᵀR − I‖_F = {defect:e})")));
        }
        let det = self.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidOperator(format!("determinant {det} is not 1")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            RotationOperator::Dense { delta } => delta.nrows(),
            RotationOperator::LowRank { basis, .. } => basis.nrows(),
        }
    }

    pub fn is_low_rank(&self) -> bool {
        matches!(self, RotationOperator::LowRank { .. })
    }

    /// `R − I` as an `n × n` matrix.
    pub fn minus_identity_dense(&self) -> DMatrix<f64> {
        match self {
            RotationOperator::Dense { delta } => delta.clone(),
            RotationOperator::LowRank { basis, delta } => {
                if basis.ncols() == 0 {
                    return DMatrix::zeros(basis.nrows(), basis.nrows());
                }
                basis * delta * basis.transpose()
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.minus_identity_dense() + DMatrix::identity(n, n)
    }

    /// The `k × k` rotation block (the full matrix for the dense form).
    pub fn block(&self) -> DMatrix<f64> {
        match self {
            RotationOperator::Dense { delta } => delta + DMatrix::identity(delta.nrows(), delta.nrows()),
            RotationOperator::LowRank { delta, .. } => delta + DMatrix::identity(delta.nrows(), delta.nrows()),
        }
    }

    fn delta(&self) -> &DMatrix<f64> {
        match self {
            RotationOperator::Dense { delta } | RotationOperator::LowRank { delta, .. } => delta,
        }
    }

    /// `(R − I) y`, computed through the support block when available.
    pub fn apply_minus_identity(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), y.len())?;
        Ok(match self {
            RotationOperator::Dense { delta } => delta * y,
            RotationOperator::LowRank { basis, delta } => {
                if basis.ncols() == 0 {
                    return Ok(DVector::zeros(y.len()));
                }
                basis * (delta * (basis.transpose() * y))
            }
        })
    }

    pub fn apply(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.apply_minus_identity(y)? + y)
    }

    /// The inverse rotation `Rᵀ`.
    pub fn transpose(&self) -> Self {
        match self {
            RotationOperator::Dense { delta } => RotationOperator::Dense { delta: delta.transpose() },
            RotationOperator::LowRank { basis, delta } => {
                RotationOperator::LowRank { basis: basis.clone(), delta: delta.transpose() }
            }
        }
    }

    /// The product `self · other` (apply `other` first).
    pub fn compose(&self, other: &RotationOperator) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        match (self, other) {
            (
                RotationOperator::LowRank { basis: ba, delta: da },
                RotationOperator::LowRank { basis: bb, delta: db },
            ) => {
                let (u, pa, pb) = union_basis(ba, bb);
                if u.ncols() <= MAX_LOW_RANK {
                    let la = &pa * da * pa.transpose();
                    let lb = &pb * db * pb.transpose();
                    let delta = &la + &lb + &la * &lb;
                    return Ok(RotationOperator::LowRank { basis: u, delta });
                }
            }
            _ => {}
        }
        let a = self.minus_identity_dense();
        let b = other.minus_identity_dense();
        Ok(RotationOperator::Dense { delta: &a + &b + &a * &b })
    }

    /// `‖R − I‖_F`.
    pub fn frobenius_minus_identity(&self) -> f64 {
        self.delta().norm()
    }

    /// `‖RᵀR − I‖_F`, evaluated as `‖Δ + Δᵀ + ΔᵀΔ‖_F`.
    pub fn orthogonality_defect(&self) -> f64 {
        let d = self.delta();
        (d + d.transpose() + d.transpose() * d).norm()
    }

    /// Determinant, taken on the support block for the low-rank form.
    pub fn determinant(&self) -> f64 {
        let b = self.block();
        if b.nrows() == 0 {
            1.0
        } else {
            b.determinant()
        }
    }

    /// Frobenius distance between two rotations of the same dimension.
    pub fn distance(&self, other: &RotationOperator) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        match (self, other) {
            (
                RotationOperator::LowRank { basis: ba, delta: da },
                RotationOperator::LowRank { basis: bb, delta: db },
            ) => {
                let (_, pa, pb) = union_basis(ba, bb);
                Ok((&pa * da * pa.transpose() - &pb * db * pb.transpose()).norm())
            }
            _ => Ok((self.minus_identity_dense() - other.minus_identity_dense()).norm()),
        }
    }
}
