use nalgebra::DVector;

use super::ensure_finite_vec;
use crate::error::{check_dim, Error, Result};

/// A direction on the output sphere `S^{n-1}`.
///
/// Construction normalizes; the norm of the raw input is kept so datasets can
/// audit how far their states sat from the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector {
    data: DVector<f64>,
    raw_norm: f64,
}

impl UnitVector {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        ensure_finite_vec(&v, "unit vector")?;
        let raw_norm = v.norm();
        if raw_norm == 0.0 {
            return Err(Error::ZeroVector("unit vector"));
        }
        Ok(Self { data: v / raw_norm, raw_norm })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    /// The `i`-th standard basis vector of `R^n`.
    pub fn basis(n: usize, i: usize) -> Self {
        let mut data = DVector::zeros(n);
        data[i] = 1.0;
        Self { data, raw_norm: 1.0 }
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.data
    }

    pub fn raw_norm(&self) -> f64 {
        self.raw_norm
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }
}

/// A vector in the tangent space of the sphere at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    data: DVector<f64>,
    base: UnitVector,
}

impl TangentVector {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.data
    }

    pub fn base(&self) -> &UnitVector {
        &self.base
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { data: &self.data * s, base: self.base.clone() }
    }
}

/// Removes the normal component: `v − (v·base) base`.
///
/// The projection is applied twice so the result stays tangent to working
/// precision even when `v` is nearly parallel to `base`.
pub fn project_tangent(v: &DVector<f64>, base: &UnitVector) -> Result<TangentVector> {
    check_dim(base.dim(), v.len())?;
    let b = base.as_vector();
    let mut data = v.clone();
    for _ in 0..2 {
        let c = data.dot(b);
        data.axpy(-c, b, 1.0);
    }
    Ok(TangentVector { data, base: base.clone() })
}

/// Gram–Schmidt on a pair of tangent vectors sharing a base point.
///
/// Fails with [`Error::DegeneratePlane`] when `u` vanishes or when the part
/// of `w` orthogonal to `u` is below `1e-7 · ‖w‖`.
pub fn orthonormalize_pair(u: &TangentVector, w: &TangentVector) -> Result<(TangentVector, TangentVector)> {
    check_dim(u.dim(), w.dim())?;
    let un = u.norm();
    let wn = w.norm();
    if un == 0.0 || wn == 0.0 {
        return Err(Error::DegeneratePlane);
    }
    let u_hat = &u.data / un;
    let mut r = w.data.clone();
    for _ in 0..2 {
        let c = r.dot(&u_hat);
        r.axpy(-c, &u_hat, 1.0);
    }
    let rn = r.norm();
    if rn < 1e-7 * wn {
        return Err(Error::DegeneratePlane);
    }
    Ok((
        TangentVector { data: u_hat, base: u.base.clone() },
        TangentVector { data: r / rn, base: u.base.clone() },
    ))
}
