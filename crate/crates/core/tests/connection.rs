mod common;

use std::sync::Arc;

use blurgeom::connection::{
    connection, connection_at_displaced, connection_derivative, probability_charge, select_plane, BranchGeometry,
    ChargeMode,
};
use blurgeom::linalg::{project_tangent, TangentVector, UnitVector};
use blurgeom::Error;
use common::{e, gaussian, orthogonal_to, random_geometry, rng, unit};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn wedge_dense(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    b * a.transpose() - a * b.transpose()
}

fn tangent(g: &BranchGeometry, v: &DVector<f64>) -> TangentVector {
    project_tangent(v, g.z()).unwrap()
}

/// Direct transcription of the connection for the oracle side.
fn connection_oracle(x: &DVector<f64>, g: &BranchGeometry, mu: &DVector<f64>, charge: f64) -> DMatrix<f64> {
    let w = g.v1() * mu.dot(g.v2()) - g.v2() * mu.dot(g.v1());
    wedge_dense(x, &w) * charge
}

fn softmax(x: &DVector<f64>) -> DVector<f64> {
    let m = x.max();
    let e = x.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

#[test]
fn charge_values() {
    assert_eq!(probability_charge(0.5, 0.5).unwrap(), 1.0);
    assert_eq!(probability_charge(0.8, 0.0).unwrap(), 0.0);
    assert!((probability_charge(0.6, 0.4).unwrap() - 4.0 * 0.6 * 0.4).abs() < 1e-15);
}

#[test]
fn canonical_connection_is_minus_the_e1_e3_generator() {
    let g = BranchGeometry::new(UnitVector::basis(4, 0), e(4, 1), e(4, 2), 0.5, 0.5, 0, 1).unwrap();
    let a = connection(&g, &tangent(&g, &e(4, 1))).unwrap().to_dense();
    let want = -wedge_dense(&e(4, 0), &e(4, 2));
    assert!((&a - &want).amax() < 1e-15);
    assert_eq!(a[(0, 2)], 1.0);
    assert_eq!(a[(2, 0)], -1.0);
}

#[test]
fn connection_vanishes_off_the_token_plane_and_without_charge() {
    let mut r = rng(4);
    let g = random_geometry(&mut r, 10);
    let mu = orthogonal_to(&mut r, &[g.z().as_vector(), g.v1(), g.v2()]);
    assert!(connection(&g, &tangent(&g, &mu)).unwrap().frobenius_norm() < 1e-14);

    let chargeless = g.with_probabilities(0.7, 0.0).unwrap();
    let mu = tangent(&g, &gaussian(&mut r, 10));
    assert_eq!(connection(&chargeless, &mu).unwrap().frobenius_norm(), 0.0);
}

#[test]
fn connection_matches_direct_formula() {
    let mut r = rng(8);
    for _ in 0..20 {
        let g = random_geometry(&mut r, 12);
        let mu = tangent(&g, &gaussian(&mut r, 12));
        let got = connection(&g, &mu).unwrap().to_dense();
        let want = connection_oracle(g.z().as_vector(), &g, mu.as_vector(), 4.0 * g.p1() * g.p2());
        assert!((got - &want).norm() <= 1e-12 * want.norm().max(1.0));
    }
}

#[test]
fn zero_displacement_reproduces_the_branch_point() {
    let mut r = rng(15);
    let g = random_geometry(&mut r, 9);
    let mu = tangent(&g, &gaussian(&mut r, 9));
    let at = connection_at_displaced(&g, g.z().as_vector(), &mu, ChargeMode::Frozen).unwrap();
    assert_eq!(at.to_dense(), connection(&g, &mu).unwrap().to_dense());
}

#[test]
fn frozen_charge_ignores_displacement() {
    let mut r = rng(16);
    let g = random_geometry(&mut r, 9);
    let x = g.z().as_vector() + gaussian(&mut r, 9) * 0.05;
    assert_eq!(g.charge_at(&x, ChargeMode::Frozen).unwrap(), probability_charge(g.p1(), g.p2()).unwrap());
}

#[test]
fn recomputed_charge_uses_the_displaced_softmax() {
    let v = Arc::new(DMatrix::<f64>::identity(4, 4));
    let g = BranchGeometry::from_unembed(UnitVector::basis(4, 0), v).unwrap();
    assert_eq!(g.tokens(), (0, 1));
    let x = e(4, 0) + e(4, 1) * 0.01;
    let p = softmax(&x);
    let got = g.charge_at(&x, ChargeMode::Recomputed).unwrap();
    assert!((got - 4.0 * p[0] * p[1]).abs() < 1e-15);

    let mu = tangent(&g, &(e(4, 1) + e(4, 3)));
    let a = connection_at_displaced(&g, &x, &mu, ChargeMode::Recomputed).unwrap().to_dense();
    let want = connection_oracle(&x, &g, mu.as_vector(), 4.0 * p[0] * p[1]);
    assert!((a - want).amax() < 1e-15);
}

#[test]
fn recomputed_mode_needs_an_unembedding_and_a_stable_top_pair() {
    let mut r = rng(17);
    let g = random_geometry(&mut r, 6);
    let mu = tangent(&g, &gaussian(&mut r, 6));
    assert!(matches!(
        connection_at_displaced(&g, g.z().as_vector(), &mu, ChargeMode::Recomputed),
        Err(Error::RecomputedWithoutUnembed)
    ));

    let v = Arc::new(DMatrix::<f64>::identity(4, 4));
    let g = BranchGeometry::from_unembed(UnitVector::from_slice(&[1.0, 0.5, 0.0, 0.0]).unwrap(), v).unwrap();
    let far = DVector::from_column_slice(&[0.0, 0.0, 1.0, 0.9]);
    let mu = tangent(&g, &e(4, 1));
    assert!(matches!(
        connection_at_displaced(&g, &far, &mu, ChargeMode::Recomputed),
        Err(Error::TopTwoChanged { .. })
    ));
}

#[test]
fn recomputed_and_frozen_agree_at_the_branch_point() {
    let mut r = rng(18);
    let n = 8;
    let v = Arc::new(DMatrix::from_columns(&(0..n).map(|_| gaussian(&mut r, 20)).collect::<Vec<_>>()));
    let g = BranchGeometry::from_unembed(UnitVector::new(unit(&mut r, n)).unwrap(), v).unwrap();
    let mu = tangent(&g, &gaussian(&mut r, n));
    let z = g.z().as_vector().clone();
    let frozen = connection_at_displaced(&g, &z, &mu, ChargeMode::Frozen).unwrap().to_dense();
    let recomputed = connection_at_displaced(&g, &z, &mu, ChargeMode::Recomputed).unwrap().to_dense();
    assert_eq!(frozen, recomputed);
}

#[test]
fn plane_selection_examples() {
    let g = BranchGeometry::new(UnitVector::basis(3, 0), e(3, 1), e(3, 2), 0.6, 0.3, 0, 1).unwrap();
    let p = select_plane(&g).unwrap();
    assert_eq!((p.u.as_vector(), p.v.as_vector()), (&e(3, 1), &e(3, 2)));

    let s = std::f64::consts::FRAC_1_SQRT_2;
    let g = BranchGeometry::new(
        UnitVector::basis(3, 0),
        DVector::from_column_slice(&[s, s, 0.0]),
        DVector::from_column_slice(&[s, 0.0, s]),
        0.6,
        0.3,
        0,
        1,
    )
    .unwrap();
    let p = select_plane(&g).unwrap();
    assert!((p.u.as_vector() - e(3, 1)).amax() < 1e-15);
    assert!((p.v.as_vector() - e(3, 2)).amax() < 1e-15);

    let g = BranchGeometry::new(UnitVector::basis(3, 0), e(3, 1), e(3, 1), 0.6, 0.3, 0, 1).unwrap();
    assert!(matches!(select_plane(&g), Err(Error::DegeneratePlane)));
}

#[test]
fn frozen_derivative_is_the_blade_of_the_direction() {
    let mut r = rng(21);
    for _ in 0..10 {
        let g = random_geometry(&mut r, 7);
        let along = tangent(&g, &unit(&mut r, 7));
        let of = tangent(&g, &unit(&mut r, 7));
        let d = connection_derivative(&g, &along, &of, 1e-3, ChargeMode::Frozen).unwrap().to_dense();
        let want = connection_oracle(along.as_vector(), &g, of.as_vector(), 4.0 * g.p1() * g.p2());
        assert!((d - &want).norm() <= 1e-9 * want.norm().max(1e-3));
    }
}

#[test]
fn derivative_of_a_direction_outside_the_token_plane_vanishes() {
    let mut r = rng(22);
    let g = random_geometry(&mut r, 7);
    let of = tangent(&g, &orthogonal_to(&mut r, &[g.z().as_vector(), g.v1(), g.v2()]));
    let along = tangent(&g, &gaussian(&mut r, 7));
    for delta in [1e-1, 1e-3, 1e-6] {
        let d = connection_derivative(&g, &along, &of, delta, ChargeMode::Frozen).unwrap();
        assert!(d.frobenius_norm() < 1e-12);
    }
}

/// Analytic derivative with the charge recomputed from `softmax(V x)`.
fn recomputed_derivative_oracle(g: &BranchGeometry, along: &DVector<f64>, of: &DVector<f64>) -> DMatrix<f64> {
    let v = g.unembed().unwrap();
    let z = g.z().as_vector();
    let p = softmax(&(v.as_ref() * z));
    let (i, j) = (g.tokens().0 as usize, g.tokens().1 as usize);
    let mean_row = v.transpose() * &p;
    let grad = |k: usize| (v.row(k).transpose() - &mean_row) * p[k];
    let dc = 4.0 * (p[j] * grad(i).dot(along) + p[i] * grad(j).dot(along));
    let c = 4.0 * p[i] * p[j];
    let w = g.v1() * of.dot(g.v2()) - g.v2() * of.dot(g.v1());
    wedge_dense(z, &w) * dc + wedge_dense(along, &w) * c
}

#[test]
fn recomputed_derivative_converges_quadratically() {
    let mut r = rng(23);
    let n = 6;
    let v = Arc::new(DMatrix::from_columns(&(0..n).map(|_| gaussian(&mut r, 12)).collect::<Vec<_>>()));
    let g = BranchGeometry::from_unembed(UnitVector::new(unit(&mut r, n)).unwrap(), v).unwrap();
    let along = tangent(&g, &unit(&mut r, n));
    let of = tangent(&g, &unit(&mut r, n));
    assert!(g.charge() > 1e-3);
    let exact = recomputed_derivative_oracle(&g, along.as_vector(), of.as_vector());
    let err = |d: f64| {
        let fd = connection_derivative(&g, &along, &of, d, ChargeMode::Recomputed).unwrap().to_dense();
        (fd - &exact).norm()
    };
    let (e1, e2) = (err(2e-2), err(1e-2));
    let ratio = e1 / e2;
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio} ({e1:e} -> {e2:e})");
}

#[test]
fn derivative_rejects_nonpositive_step() {
    let mut r = rng(24);
    let g = random_geometry(&mut r, 5);
    let t = tangent(&g, &gaussian(&mut r, 5));
    assert!(connection_derivative(&g, &t, &t, 0.0, ChargeMode::Frozen).is_err());
}

#[test]
fn connection_annihilates_the_orthogonal_complement() {
    let mut r = rng(25);
    let g = random_geometry(&mut r, 16);
    let a = connection(&g, &tangent(&g, &gaussian(&mut r, 16))).unwrap();
    for _ in 0..100 {
        let x = orthogonal_to(&mut r, &[g.z().as_vector(), g.v1(), g.v2()]);
        assert!(a.apply(&x).unwrap().norm() <= 1e-10);
    }
}

#[test]
fn connection_is_linear_in_the_charge_product() {
    let mut r = rng(26);
    let g = random_geometry(&mut r, 8);
    let mu = tangent(&g, &gaussian(&mut r, 8));
    let base = connection(&g, &mu).unwrap().to_dense();
    // doubling p1 doubles p1·p2 when the result stays a valid distribution
    let g2 = g.with_probabilities(0.45, 0.2).unwrap();
    let g1 = g.with_probabilities(0.45, 0.1).unwrap();
    let a2 = connection(&g2, &mu).unwrap().to_dense();
    let a1 = connection(&g1, &mu).unwrap().to_dense();
    assert!((&a2 - &a1 * 2.0).norm() <= 1e-12 * a2.norm());
    assert!(base.norm() > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn connection_is_linear_in_the_direction(seed in 0u64..10_000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut r = rng(seed);
        let g = random_geometry(&mut r, 6);
        let m1 = tangent(&g, &gaussian(&mut r, 6));
        let m2 = tangent(&g, &gaussian(&mut r, 6));
        let mix = tangent(&g, &(m1.as_vector() * alpha + m2.as_vector() * beta));
        let lhs = connection(&g, &mix).unwrap().to_dense();
        let rhs = connection(&g, &m1).unwrap().to_dense() * alpha + connection(&g, &m2).unwrap().to_dense() * beta;
        prop_assert!((&lhs - &rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
    }
}
