use nalgebra::DMatrix;

/// Columns whose Gram–Schmidt residual falls below this fraction of their
/// original norm are treated as dependent and dropped.
const DROP_TOL: f64 = 1e-10;

/// Orthonormal basis of the column span of `vectors` (modified Gram–Schmidt
/// with one re-orthogonalization pass). Column order is preserved, so an
/// already orthonormal prefix comes back unchanged up to rounding.
pub fn orthonormal_basis(vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let n = vectors.nrows();
    let mut cols: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(vectors.ncols());
    for j in 0..vectors.ncols() {
        let original = vectors.column(j).into_owned();
        let scale = original.norm();
        if scale == 0.0 {
            continue;
        }
        let mut r = original;
        for _ in 0..2 {
            for q in &cols {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let norm = r.norm();
        if norm > DROP_TOL * scale {
            cols.push(r / norm);
        }
    }
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis for `span(a) + span(b)` where `a` and `b` are both
/// orthonormal column sets. Returns the basis `U` together with the
/// coordinate maps `Uᵀa` and `Uᵀb`.
pub fn union_basis(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut stacked = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    stacked.columns_mut(0, a.ncols()).copy_from(a);
    stacked.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    let u = orthonormal_basis(&stacked);
    let pa = u.transpose() * a;
    let pb = u.transpose() * b;
    (u, pa, pb)
}
