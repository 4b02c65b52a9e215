//! Exterior-algebra and skew-matrix primitives.
//!
//! Everything here works in 64-bit floating point. Operators in 𝔰𝔬(n) and
//! SO(n) come in two representations: a dense `n × n` matrix, or a small
//! `k × k` block acting on an orthonormal support basis (`k ≤ 4`) with the
//! orthogonal complement left untouched. The low-rank form is what makes the
//! holonomy of a single branch point cheap: every connection value is a
//! two-blade, so all the action happens in a three-dimensional subspace.

mod basis;
mod bivector;
mod expm;
mod rotation;
mod skew;
mod vectors;

pub use basis::{orthonormal_basis, union_basis};
pub use bivector::{blade3_volume, phi_iso, SimpleBivector};
pub use expm::{closed_form_exp_minus_identity, dense_exp_minus_identity, expm_skew};
pub use rotation::RotationOperator;
pub use skew::{commutator, SkewOperator, MAX_LOW_RANK};
pub use vectors::{orthonormalize_pair, project_tangent, TangentVector, UnitVector};

use nalgebra::{DMatrix, DVector};

/// Frobenius norm of `m + mᵀ`.
pub fn skew_defect(m: &DMatrix<f64>) -> f64 {
    (m + m.transpose()).norm()
}

pub(crate) fn ensure_finite_vec(v: &DVector<f64>, what: &'static str) -> crate::Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::NonFinite(what))
    }
}

pub(crate) fn ensure_finite_mat(m: &DMatrix<f64>, what: &'static str) -> crate::Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::NonFinite(what))
    }
}
