#![allow(dead_code)]

use blurgeom::connection::BranchGeometry;
use blurgeom::linalg::UnitVector;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = gaussian(rng, n);
    let norm = v.norm();
    v / norm
}

pub fn e(n: usize, i: usize) -> DVector<f64> {
    UnitVector::basis(n, i).into_vector()
}

/// z, v1, v2 uniform on the sphere; p1 in [0.5, 0.9], p2 = 1 - p1 scaled.
pub fn random_geometry(rng: &mut ChaCha8Rng, n: usize) -> BranchGeometry {
    let z = UnitVector::new(unit(rng, n)).unwrap();
    let v1 = unit(rng, n);
    let v2 = unit(rng, n);
    let p1 = rng.random_range(0.5..0.9);
    let p2 = rng.random_range(0.2..1.0) * (1.0 - p1);
    BranchGeometry::new(z, v1, v2, p1, p2, 0, 1).unwrap()
}

/// Vector orthogonal to every column of `span`.
pub fn orthogonal_to(rng: &mut ChaCha8Rng, span: &[&DVector<f64>]) -> DVector<f64> {
    let n = span[0].len();
    let q = blurgeom::linalg::orthonormal_basis(&DMatrix::from_columns(
        &span.iter().map(|v| (*v).clone()).collect::<Vec<_>>(),
    ));
    let mut x = gaussian(rng, n);
    for _ in 0..2 {
        x -= &q * (q.transpose() * &x);
    }
    x
}

/// exp(M) by a plain 60-term Taylor sum. Independent of the library's expm.
pub fn taylor_expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=60 {
        term = &term * m / k as f64;
        sum += &term;
    }
    sum
}
