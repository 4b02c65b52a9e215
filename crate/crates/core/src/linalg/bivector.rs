use nalgebra::{DMatrix, DVector};

use super::skew::SkewOperator;
use crate::error::{check_dim, Error, Result};

/// The two-blade `a ∧ b`, stored by its spanning vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleBivector {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
}

impl SimpleBivector {
    pub fn new(a: DVector<f64>, b: DVector<f64>) -> Self {
        Self { a, b }
    }

    /// `b ∧ a`, the negation.
    pub fn reversed(&self) -> Self {
        Self { a: self.b.clone(), b: self.a.clone() }
    }
}

/// The isomorphism `∧²(Rⁿ) → 𝔰𝔬(n)`, `a ∧ b ↦ b aᵀ − a bᵀ`.
///
/// The result is returned in low-rank form over an orthonormal basis of
/// `span{a, b}`; its dense expansion is exactly `b aᵀ − a bᵀ` up to rounding.
pub fn phi_iso(bv: &SimpleBivector) -> Result<SkewOperator> {
    let n = bv.a.len();
    check_dim(n, bv.b.len())?;
    if n < 2 {
        return Err(Error::InvalidOperator(format!("bivectors need n >= 2, got {n}")));
    }
    if !bv.a.iter().chain(bv.b.iter()).all(|x| x.is_finite()) {
        return Err(Error::NonFinite("bivector"));
    }
    let an = bv.a.norm();
    if an == 0.0 || bv.b.norm() == 0.0 {
        return Ok(SkewOperator::zero(n));
    }
    // With e1 = a/|a| and b = α e1 + β e2:  b aᵀ − a bᵀ = β|a| (e2 e1ᵀ − e1 e2ᵀ).
    let e1 = &bv.a / an;
    let alpha = e1.dot(&bv.b);
    let mut r = &bv.b - &e1 * alpha;
    let c = e1.dot(&r);
    r.axpy(-c, &e1, 1.0);
    let beta = r.norm();
    if beta <= 1e-15 * bv.b.norm() {
        return Ok(SkewOperator::zero(n));
    }
    let e2 = r / beta;
    let basis = DMatrix::from_columns(&[e1, e2]);
    let w = beta * an;
    let coeffs = DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
    Ok(SkewOperator::LowRank { basis, coeffs })
}

/// Volume of the parallelepiped spanned by `x`, `y`, `z`, i.e. `√det G` for
/// the Gram matrix `G`. Computed as the product of Gram–Schmidt pivots, which
/// avoids the cancellation of forming the determinant directly.
pub fn blade3_volume(x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
    let n = x.len();
    check_dim(n, y.len())?;
    check_dim(n, z.len())?;
    if n < 3 {
        return Err(Error::InvalidOperator(format!("three-blades need n >= 3, got {n}")));
    }
    let mut vol = 1.0;
    let mut done: Vec<DVector<f64>> = Vec::with_capacity(3);
    for v in [x, y, z] {
        let mut r = v.clone();
        for _ in 0..2 {
            for q in &done {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let rn = r.norm();
        if rn <= 1e-14 * v.norm() || rn == 0.0 {
            return Ok(0.0);
        }
        vol *= rn;
        done.push(r / rn);
    }
    Ok(vol)
}
