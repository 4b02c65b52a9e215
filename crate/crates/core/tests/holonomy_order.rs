mod common;

use std::sync::Arc;

use blurgeom::connection::{select_plane, BranchGeometry, ChargeMode};
use blurgeom::holonomy::{
    clover_holonomy, curvature_closed_form, naive_square_holonomy, total_holonomy, transport, EvalPath,
    HolonomyConfig, PolyPath,
};
use blurgeom::linalg::{expm_skew, phi_iso, RotationOperator, SimpleBivector, UnitVector};
use blurgeom::Error;
use common::{e, gaussian, orthogonal_to, random_geometry, rng, taylor_expm, unit};
use nalgebra::{DMatrix, DVector};

fn cfg(epsilon: f64) -> HolonomyConfig {
    HolonomyConfig::with_epsilon(epsilon)
}

fn canonical() -> BranchGeometry {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    BranchGeometry::new(UnitVector::basis(4, 0), (e(4, 0) + e(4, 1)) * s, (e(4, 0) + e(4, 2)) * s, 0.5, 0.5, 0, 1)
        .unwrap()
}

/// Brute-force clover: dense links `exp(−ε A_d(x))` by Taylor series, four
/// squares multiplied out and averaged.
fn brute_force_clover(g: &BranchGeometry, eps: f64) -> DMatrix<f64> {
    let plane = select_plane(g).unwrap();
    let (u, v) = (plane.u.as_vector().clone(), plane.v.as_vector().clone());
    let z = g.z().as_vector().clone();
    let c = 4.0 * g.p1() * g.p2();
    let gen = |x: &DVector<f64>, d: &DVector<f64>| {
        let w = (g.v1() * d.dot(g.v2()) - g.v2() * d.dot(g.v1())) * c;
        &w * x.transpose() - x * w.transpose()
    };
    let link = |x: &DVector<f64>, d: &DVector<f64>| taylor_expm(&(gen(x, d) * -eps));
    let square = |a: &DVector<f64>, b: &DVector<f64>| {
        link(&z, b).transpose()
            * link(&(&z + b * eps), a).transpose()
            * link(&(&z + a * eps), b)
            * link(&z, a)
    };
    let (mu, mv) = (-&u, -&v);
    (square(&u, &v) + square(&v, &mu) + square(&mu, &mv) + square(&mv, &u)) * 0.25
}

#[test]
fn chargeless_point_has_identity_holonomy_and_zero_curvature() {
    let mut r = rng(1);
    let g = random_geometry(&mut r, 8).with_probabilities(0.9, 0.0).unwrap();
    for c in [cfg(1e-3), HolonomyConfig { path: EvalPath::Dense, ..cfg(1e-3) }] {
        let h = clover_holonomy(&g, &c).unwrap();
        assert_eq!(h.holonomy.frobenius_minus_identity(), 0.0);
        assert_eq!(h.curvature.frobenius_norm(), 0.0);
        assert_eq!(naive_square_holonomy(&g, &c).unwrap().holonomy.frobenius_minus_identity(), 0.0);
    }
}

#[test]
fn canonical_clover_matches_brute_force_products() {
    let g = canonical();
    let want = brute_force_clover(&g, 1e-3);
    for path in [EvalPath::LowRank, EvalPath::Dense] {
        let h = clover_holonomy(&g, &HolonomyConfig { path, ..cfg(1e-3) }).unwrap();
        let gap = (h.holonomy.to_dense() - &want).norm();
        assert!(gap <= 1e-12, "{path:?}: {gap:e}");
    }
}

#[test]
fn random_clover_matches_brute_force_products() {
    let mut r = rng(2);
    for _ in 0..5 {
        let g = random_geometry(&mut r, 7);
        let got = clover_holonomy(&g, &cfg(1e-2)).unwrap().holonomy.to_dense();
        assert!((got - brute_force_clover(&g, 1e-2)).norm() <= 1e-12);
    }
}

fn gap(g: &BranchGeometry, eps: f64, clover: bool) -> f64 {
    let h = if clover { clover_holonomy(g, &cfg(eps)) } else { naive_square_holonomy(g, &cfg(eps)) };
    h.unwrap().diagnostics.clover_vs_closed_form_gap
}

#[test]
fn clover_gap_is_fourth_order() {
    let mut r = rng(3);
    for _ in 0..20 {
        let g = random_geometry(&mut r, 16);
        let ratio = gap(&g, 1e-3, true) / gap(&g, 5e-4, true);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn naive_square_gap_is_third_order() {
    let mut r = rng(4);
    for _ in 0..20 {
        let g = random_geometry(&mut r, 16);
        let ratio = gap(&g, 1e-3, false) / gap(&g, 5e-4, false);
        assert!((6.0..=10.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn naive_and_clover_differ_at_third_order() {
    let mut r = rng(5);
    for _ in 0..10 {
        let g = random_geometry(&mut r, 10);
        let d = |eps: f64| {
            let a = clover_holonomy(&g, &cfg(eps)).unwrap().holonomy;
            let b = naive_square_holonomy(&g, &cfg(eps)).unwrap().holonomy;
            a.distance(&b).unwrap()
        };
        let ratio = d(1e-3) / d(5e-4);
        assert!((6.0..=10.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn recomputed_charge_keeps_fourth_order() {
    let mut r = rng(6);
    let n = 8;
    let v = Arc::new(DMatrix::from_columns(&(0..n).map(|_| gaussian(&mut r, 30)).collect::<Vec<_>>()));
    let g = BranchGeometry::from_unembed(UnitVector::new(unit(&mut r, n)).unwrap(), v).unwrap();
    let c = |eps: f64| HolonomyConfig { mode: ChargeMode::Recomputed, ..cfg(eps) };
    let a = clover_holonomy(&g, &c(1e-3)).unwrap().diagnostics.clover_vs_closed_form_gap;
    let b = clover_holonomy(&g, &c(5e-4)).unwrap().diagnostics.clover_vs_closed_form_gap;
    assert!((12.0..=20.0).contains(&(a / b)), "ratio {}", a / b);
}

#[test]
fn leaving_the_smooth_region_is_detected() {
    // second and third logits nearly tied; a large clover swaps them
    let v = Arc::new(DMatrix::<f64>::identity(4, 4));
    let z = UnitVector::from_slice(&[1.0, 0.5, 0.5 - 1e-6, 0.2]).unwrap();
    let g = BranchGeometry::from_unembed(z, v).unwrap();
    let c = HolonomyConfig { mode: ChargeMode::Recomputed, ..cfg(0.05) };
    assert!(matches!(clover_holonomy(&g, &c), Err(Error::TopTwoChanged { .. })));
    assert!(clover_holonomy(&g, &cfg(0.05)).is_ok());
}

#[test]
fn curvature_flips_sign_with_the_plane() {
    let mut r = rng(7);
    for _ in 0..10 {
        let g = random_geometry(&mut r, 9);
        let p = select_plane(&g).unwrap();
        let a = curvature_closed_form(&g, &p, 1e-3, 1e-3, ChargeMode::Frozen).unwrap().to_dense();
        let b = curvature_closed_form(&g, &p.swapped(), 1e-3, 1e-3, ChargeMode::Frozen).unwrap().to_dense();
        assert!((&a + &b).norm() <= 1e-12 * a.norm());
    }
}

/// Regression bound on `‖h − (H − I)‖_F / ε⁴`, measured once over this
/// suite (max ≈ 0.4) and frozen with headroom.
const CLOVER_C: f64 = 2.0;

#[test]
fn curvature_tracks_the_clover_to_fourth_order() {
    let mut r = rng(8);
    let eps = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let g = random_geometry(&mut r, 16);
        let h = clover_holonomy(&g, &cfg(eps)).unwrap();
        let closed = curvature_closed_form(&g, &h.plane, eps, eps, ChargeMode::Frozen).unwrap().to_dense();
        let d = (h.holonomy.minus_identity_dense() - closed).norm() / eps.powi(4);
        worst = worst.max(d);
    }
    assert!(worst <= CLOVER_C, "worst constant {worst}");
}

#[test]
fn holonomy_is_a_rotation_and_consistent_with_its_generator() {
    let mut r = rng(9);
    let eps = 1e-3;
    for _ in 0..50 {
        let g = random_geometry(&mut r, 12);
        for h in [clover_holonomy(&g, &cfg(eps)).unwrap(), naive_square_holonomy(&g, &cfg(eps)).unwrap()] {
            let d = h.holonomy.to_dense();
            assert!((d.transpose() * &d - DMatrix::identity(12, 12)).norm() <= 1e-8);
            assert!((h.holonomy.determinant() - 1.0).abs() <= 1e-6);
            let hd = h.curvature.to_dense();
            assert!((&hd + hd.transpose()).norm() <= 1e-10);
        }
        let h = clover_holonomy(&g, &cfg(eps)).unwrap();
        assert!(h.diagnostics.exp_consistency <= 10.0 * eps.powi(4));
    }
}

#[test]
fn holonomy_is_confined_to_the_token_support() {
    let mut r = rng(10);
    for _ in 0..10 {
        let g = random_geometry(&mut r, 20);
        let h = clover_holonomy(&g, &cfg(1e-3)).unwrap();
        for _ in 0..100 {
            let x = orthogonal_to(&mut r, &[g.z().as_vector(), g.v1(), g.v2()]);
            assert!(h.holonomy.apply_minus_identity(&x).unwrap().norm() <= 1e-9);
        }
    }
}

#[test]
fn low_rank_and_dense_paths_agree() {
    let mut r = rng(11);
    for _ in 0..30 {
        let g = random_geometry(&mut r, 24);
        let a = clover_holonomy(&g, &cfg(1e-3)).unwrap();
        let b = clover_holonomy(&g, &HolonomyConfig { path: EvalPath::Dense, ..cfg(1e-3) }).unwrap();
        assert!(a.holonomy.is_low_rank());
        assert!(a.holonomy.distance(&b.holonomy).unwrap() <= 1e-9);
        assert!(a.curvature.distance(&b.curvature).unwrap() <= 1e-9 * 1e-6);
    }
}

#[test]
fn curvature_splits_into_linear_and_quadratic_charge_terms() {
    let mut r = rng(12);
    let g = random_geometry(&mut r, 8);
    let plane = select_plane(&g).unwrap();
    // charges c = 4 p1 p2 with p1 = 0.5 fixed
    let p2s = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5];
    let samples: Vec<(f64, DMatrix<f64>)> = p2s
        .iter()
        .map(|&p2| {
            let gc = g.with_probabilities(0.5, p2).unwrap();
            let h = curvature_closed_form(&gc, &plane, 1e-3, 1e-3, ChargeMode::Frozen).unwrap().to_dense();
            (2.0 * p2, h)
        })
        .collect();
    // least squares for h(c) = c X + c² Y, entrywise
    let design = DMatrix::from_fn(p2s.len(), 2, |i, j| samples[i].0.powi(j as i32 + 1));
    let pinv = (design.transpose() * &design).try_inverse().unwrap() * design.transpose();
    let n = 8;
    let mut resid: f64 = 0.0;
    let scale = samples.iter().map(|s| s.1.norm()).fold(0.0, f64::max);
    for i in 0..n {
        for j in 0..n {
            let y = DVector::from_iterator(p2s.len(), samples.iter().map(|s| s.1[(i, j)]));
            let coef = &pinv * &y;
            resid = resid.max((&design * coef - y).amax());
        }
    }
    assert!(resid <= 1e-10 * scale, "residual {resid:e} vs scale {scale:e}");
}

#[test]
fn q_is_the_curvature_acting_on_y() {
    let mut r = rng(13);
    let eps = 1e-3;
    for _ in 0..30 {
        let g = random_geometry(&mut r, 16);
        let h = clover_holonomy(&g, &cfg(eps)).unwrap();
        let y = gaussian(&mut r, 16);
        let q = h.holonomy.apply_minus_identity(&y).unwrap();
        let hy = h.curvature.apply(&y).unwrap();
        assert!((q - hy).norm() <= CLOVER_C * eps.powi(4) * y.norm());
    }
}

#[test]
fn degenerate_plane_is_an_error() {
    let g = BranchGeometry::new(UnitVector::basis(5, 0), e(5, 1), e(5, 1) * 2.0, 0.5, 0.4, 0, 1).unwrap();
    assert!(matches!(clover_holonomy(&g, &cfg(1e-3)), Err(Error::DegeneratePlane)));
}

#[test]
fn epsilon_outside_the_allowed_range_is_rejected() {
    let mut r = rng(14);
    let g = random_geometry(&mut r, 5);
    assert!(clover_holonomy(&g, &cfg(0.0)).is_err());
    assert!(clover_holonomy(&g, &cfg(0.2)).is_err());
}

#[test]
fn transport_along_trivial_paths_is_identity() {
    let mut r = rng(15);
    let g = random_geometry(&mut r, 6);
    let single = PolyPath::new(vec![g.z().as_vector().clone()], false).unwrap();
    assert_eq!(transport(&g, &single, 4, ChargeMode::Frozen).unwrap().frobenius_minus_identity(), 0.0);

    let d = orthogonal_to(&mut r, &[g.v1(), g.v2()]);
    let z = g.z().as_vector().clone();
    let path = PolyPath::new(vec![z.clone(), &z + &d * 0.1], false).unwrap();
    let t = transport(&g, &path, 8, ChargeMode::Frozen).unwrap();
    assert!(t.frobenius_minus_identity() < 1e-15);
}

#[test]
fn transport_around_a_square_converges_under_refinement() {
    let mut r = rng(16);
    let g = random_geometry(&mut r, 6);
    let p = select_plane(&g).unwrap();
    let path = PolyPath::square(g.z().as_vector(), p.u.as_vector(), p.v.as_vector(), 1e-2).unwrap();
    let t: Vec<RotationOperator> =
        [1, 8, 64].iter().map(|&s| transport(&g, &path, s, ChargeMode::Frozen).unwrap()).collect();
    let d1 = t[1].distance(&t[0]).unwrap();
    let d2 = t[2].distance(&t[1]).unwrap();
    assert!(d1 >= 4.0 * d2, "{d1:e} then {d2:e}");
    assert!(t[2].orthogonality_defect() <= 1e-8);
}

#[test]
fn transport_rejects_zero_steps_and_bad_paths() {
    let mut r = rng(17);
    let g = random_geometry(&mut r, 4);
    let z = g.z().as_vector().clone();
    assert!(PolyPath::new(vec![z.clone(), z.clone()], false).is_err());
    assert!(PolyPath::new(vec![z.clone(), &z * 2.0], true).is_err());
    let path = PolyPath::new(vec![z.clone(), &z * 1.1], false).unwrap();
    assert!(transport(&g, &path, 0, ChargeMode::Frozen).is_err());
}

fn plane_rotation(n: usize, i: usize, j: usize, angle: f64) -> RotationOperator {
    expm_skew(&phi_iso(&SimpleBivector::new(e(n, i) * angle, e(n, j))).unwrap()).unwrap()
}

#[test]
fn total_holonomy_examples() {
    assert_eq!(total_holonomy(5, &[]).unwrap().frobenius_minus_identity(), 0.0);
    let a = plane_rotation(5, 0, 1, 0.3);
    assert!(total_holonomy(5, std::slice::from_ref(&a)).unwrap().distance(&a).unwrap() < 1e-15);

    let b = plane_rotation(5, 2, 3, -0.7);
    let ab = total_holonomy(5, &[a.clone(), b.clone()]).unwrap();
    let ba = total_holonomy(5, &[b.clone(), a.clone()]).unwrap();
    assert!(ab.distance(&ba).unwrap() <= 1e-10);

    // non-commuting pair: the first element acts first
    let c = plane_rotation(5, 1, 2, 0.4);
    let y = DVector::from_column_slice(&[1.0, 0.2, -0.3, 0.5, 0.0]);
    let seq = c.apply(&a.apply(&y).unwrap()).unwrap();
    let tot = total_holonomy(5, &[a, c]).unwrap().apply(&y).unwrap();
    assert!((seq - tot).norm() <= 1e-14);
}

#[test]
fn total_holonomy_rejects_mixed_dimensions() {
    assert!(total_holonomy(4, &[plane_rotation(5, 0, 1, 0.1)]).is_err());
}
