//! Parallel transport, clover holonomy, and the closed-form curvature.
//!
//! Links follow the lattice convention `U(x, d) = exp(−ε A_d(x))` with
//! `U(x, −d) = U(x, d)ᵀ`. A square with edges `a` then `b` anchored at `z` is
//!
//! ```text
//! U(z, b)ᵀ · U(z + εb, a)ᵀ · U(z + εa, b) · U(z, a)
//! ```
//!
//! and the clover averages the four squares obtained by turning `(μ, ν)` a
//! quarter at a time, `(μ, ν) → (ν, −μ) → (−μ, −ν) → (−ν, μ)`. All four share
//! one orientation, so the odd-order terms cancel pairwise and the average
//! sits `O(ε⁴)` from `exp(h)`. A single square keeps the `O(ε³)` term.
//!
//! Two evaluation paths share the same square algebra. The low-rank path
//! works in the 3-dimensional chart `span{z, u, v} = span{z, v₁, v₂}`, where
//! every link has a closed-form exponential. The dense path works on full
//! `n × n` matrices and serves as the reference.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::connection::{
    connection_at_displaced, connection_derivative, displaced_probabilities, select_plane, BranchGeometry,
    ChargeMode, TangentPlane,
};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    closed_form_exp_minus_identity, commutator, dense_exp_minus_identity, expm_skew, RotationOperator,
    SkewOperator,
};

/// Which representation the clover is evaluated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalPath {
    #[default]
    LowRank,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HolonomyConfig {
    pub epsilon: f64,
    /// Finite-difference step for the curvature; `None` uses `epsilon`.
    pub fd_delta: Option<f64>,
    pub mode: ChargeMode,
    /// Project displaced evaluation points back onto the sphere.
    pub renormalize: bool,
    pub path: EvalPath,
}

impl Default for HolonomyConfig {
    fn default() -> Self {
        Self { epsilon: 1e-3, fd_delta: None, mode: ChargeMode::Frozen, renormalize: false, path: EvalPath::LowRank }
    }
}

impl HolonomyConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }

    pub fn fd_delta(&self) -> f64 {
        self.fd_delta.unwrap_or(self.epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 0.1) {
            return Err(Error::Config(format!("epsilon must lie in (0, 0.1], got {}", self.epsilon)));
        }
        let d = self.fd_delta();
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Config(format!("fd_delta must be positive, got {d}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolonomyDiagnostics {
    /// `‖(H − I) − h‖_F`.
    pub clover_vs_closed_form_gap: f64,
    /// `‖H − exp(h)‖_F`.
    pub exp_consistency: f64,
    /// Sine of the angle between the tangent parts of `v₁` and `v₂`.
    pub plane_sine: f64,
    /// Set when `plane_sine < 1e-4`; the plane exists but is poorly conditioned.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct HolonomyResult {
    pub holonomy: RotationOperator,
    pub curvature: SkewOperator,
    pub plane: TangentPlane,
    pub epsilon: f64,
    pub charge: f64,
    pub diagnostics: HolonomyDiagnostics,
}

/// The geometry of one record expressed in some orthonormal frame.
struct Chart<'a> {
    z: DVector<f64>,
    v1: DVector<f64>,
    v2: DVector<f64>,
    u: DVector<f64>,
    v: DVector<f64>,
    charge: f64,
    tokens: (u32, u32),
    logits: Option<Cow<'a, DMatrix<f64>>>,
    mode: ChargeMode,
    renormalize: bool,
    dense_exp: bool,
}

impl<'a> Chart<'a> {
    fn ambient(g: &'a BranchGeometry, plane: &TangentPlane, cfg: &HolonomyConfig) -> Result<Self> {
        Ok(Self {
            z: g.z().as_vector().clone(),
            v1: g.v1().clone(),
            v2: g.v2().clone(),
            u: plane.u.as_vector().clone(),
            v: plane.v.as_vector().clone(),
            charge: g.charge(),
            tokens: g.tokens(),
            logits: Self::logits(g, cfg)?.map(|v| Cow::Borrowed(v.as_ref())),
            mode: cfg.mode,
            renormalize: cfg.renormalize,
            dense_exp: true,
        })
    }

    /// Coordinates on `frame = [z, u, v]`.
    fn reduced(g: &BranchGeometry, frame: &DMatrix<f64>, cfg: &HolonomyConfig) -> Result<Chart<'static>> {
        let ft = frame.transpose();
        Ok(Chart {
            z: DVector::from_column_slice(&[1.0, 0.0, 0.0]),
            v1: &ft * g.v1(),
            v2: &ft * g.v2(),
            u: DVector::from_column_slice(&[0.0, 1.0, 0.0]),
            v: DVector::from_column_slice(&[0.0, 0.0, 1.0]),
            charge: g.charge(),
            tokens: g.tokens(),
            logits: Self::logits(g, cfg)?.map(|v| Cow::Owned(v.as_ref() * frame)),
            mode: cfg.mode,
            renormalize: cfg.renormalize,
            dense_exp: false,
        })
    }

    fn logits<'g>(g: &'g BranchGeometry, cfg: &HolonomyConfig) -> Result<Option<&'g std::sync::Arc<DMatrix<f64>>>> {
        match cfg.mode {
            ChargeMode::Frozen => Ok(None),
            ChargeMode::Recomputed => g.unembed().map(Some).ok_or(Error::RecomputedWithoutUnembed),
        }
    }

    fn point(&self, a: f64, b: f64) -> DVector<f64> {
        let x = &self.z + &self.u * a + &self.v * b;
        if self.renormalize {
            let n = x.norm();
            x / n
        } else {
            x
        }
    }

    fn charge_at(&self, x: &DVector<f64>) -> Result<f64> {
        match (&self.logits, self.mode) {
            (Some(l), ChargeMode::Recomputed) => {
                let (p1, p2) = displaced_probabilities(l, x, self.tokens)?;
                Ok(4.0 * p1 * p2)
            }
            _ => Ok(self.charge),
        }
    }

    /// Dense `A_μ(x) = c(x) (w xᵀ − x wᵀ)` in chart coordinates.
    fn generator(&self, x: &DVector<f64>, mu: &DVector<f64>) -> Result<DMatrix<f64>> {
        let c = self.charge_at(x)?;
        let w = (&self.v1 * mu.dot(&self.v2) - &self.v2 * mu.dot(&self.v1)) * c;
        Ok(&w * x.transpose() - x * w.transpose())
    }

    fn derivative(&self, along: &DVector<f64>, of: &DVector<f64>, delta: f64) -> Result<DMatrix<f64>> {
        let fwd = self.generator(&(&self.z + along * delta), of)?;
        let bwd = self.generator(&(&self.z - along * delta), of)?;
        Ok((fwd - bwd) * (0.5 / delta))
    }

    /// `−ε² (∂_u A_v − ∂_v A_u − [A_v, A_u])` at `z`.
    fn curvature(&self, epsilon: f64, delta: f64) -> Result<DMatrix<f64>> {
        let du_av = self.derivative(&self.u, &self.v, delta)?;
        let dv_au = self.derivative(&self.v, &self.u, delta)?;
        let au = self.generator(&self.z, &self.u)?;
        let av = self.generator(&self.z, &self.v)?;
        // both factors are skew, so (A_v A_u)ᵀ = A_u A_v
        let p = &av * &au;
        let bracket = &p - p.transpose();
        Ok((du_av - dv_au - bracket) * (-epsilon * epsilon))
    }
}

/// `(I + a)(I + b) − I`.
fn mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a * b;
    out += a;
    out += b;
    out
}


struct Links {
    zu: DMatrix<f64>,
    zv: DMatrix<f64>,
    pu_v: DMatrix<f64>,
    pv_u: DMatrix<f64>,
    mu_v: DMatrix<f64>,
    mv_u: DMatrix<f64>,
}

fn link(chart: &Chart, x: &DVector<f64>, dir: &DVector<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    let s = chart.generator(x, dir)? * -epsilon;
    if chart.dense_exp {
        Ok(dense_exp_minus_identity(&s))
    } else {
        closed_form_exp_minus_identity(&s)
    }
}

/// `H − I` for the square with edges `u` then `v` at `z`.
fn first_square(chart: &Chart, eps: f64) -> Result<DMatrix<f64>> {
    let zu = link(chart, &chart.z, &chart.u, eps)?;
    let zv = link(chart, &chart.z, &chart.v, eps)?;
    let pu_v = link(chart, &chart.point(eps, 0.0), &chart.v, eps)?;
    let pv_u = link(chart, &chart.point(0.0, eps), &chart.u, eps)?;
    Ok(mul(&zv.transpose(), &mul(&pv_u.transpose(), &mul(&pu_v, &zu))))
}

/// `H − I` averaged over the four clover squares.
fn clover(chart: &Chart, eps: f64) -> Result<DMatrix<f64>> {
    let l = Links {
        zu: link(chart, &chart.z, &chart.u, eps)?,
        zv: link(chart, &chart.z, &chart.v, eps)?,
        pu_v: link(chart, &chart.point(eps, 0.0), &chart.v, eps)?,
        pv_u: link(chart, &chart.point(0.0, eps), &chart.u, eps)?,
        mu_v: link(chart, &chart.point(-eps, 0.0), &chart.v, eps)?,
        mv_u: link(chart, &chart.point(0.0, -eps), &chart.u, eps)?,
    };
    let t = |m: &DMatrix<f64>| m.transpose();
    // (u, v)
    let s1 = mul(&t(&l.zv), &mul(&t(&l.pv_u), &mul(&l.pu_v, &l.zu)));
    // (v, −u)
    let s2 = mul(&l.zu, &mul(&t(&l.mu_v), &mul(&t(&l.pv_u), &l.zv)));
    // (−u, −v)
    let s3 = mul(&l.zv, &mul(&l.mv_u, &mul(&t(&l.mu_v), &t(&l.zu))));
    // (−v, u)
    let s4 = mul(&t(&l.zu), &mul(&l.pu_v, &mul(&l.mv_u, &t(&l.zv))));
    Ok((s1 + s2 + s3 + s4) * 0.25)
}

/// Orthonormal frame `[z, u, v]` of the record's support.
fn support_frame(g: &BranchGeometry, plane: &TangentPlane) -> DMatrix<f64> {
    DMatrix::from_columns(&[g.z().as_vector().clone(), plane.u.as_vector().clone(), plane.v.as_vector().clone()])
}

fn plane_sine(g: &BranchGeometry, plane: &TangentPlane) -> f64 {
    let z = g.z().as_vector();
    let t2 = g.v2() - z * z.dot(g.v2());
    let n = t2.norm();
    if n == 0.0 {
        return 0.0;
    }
    let r = &t2 - plane.u.as_vector() * plane.u.as_vector().dot(&t2);
    r.norm() / n
}

#[derive(Clone, Copy)]
enum Loop {
    Clover,
    Square,
}

fn holonomy_impl(g: &BranchGeometry, cfg: &HolonomyConfig, shape: Loop) -> Result<HolonomyResult> {
    cfg.validate()?;
    let plane = select_plane(g)?;
    let eps = cfg.epsilon;
    let (holonomy, curvature, gap, consistency) = match cfg.path {
        EvalPath::LowRank => {
            let frame = support_frame(g, &plane);
            let chart = Chart::reduced(g, &frame, cfg)?;
            let delta = match shape {
                Loop::Clover => clover(&chart, eps)?,
                Loop::Square => first_square(&chart, eps)?,
            };
            let h = chart.curvature(eps, cfg.fd_delta())?;
            let gap = (&delta - &h).norm();
            let consistency = (&delta - closed_form_exp_minus_identity(&h)?).norm();
            (
                RotationOperator::LowRank { basis: frame.clone(), delta },
                SkewOperator::LowRank { basis: frame, coeffs: h },
                gap,
                consistency,
            )
        }
        EvalPath::Dense => {
            let chart = Chart::ambient(g, &plane, cfg)?;
            let delta = match shape {
                Loop::Clover => clover(&chart, eps)?,
                Loop::Square => first_square(&chart, eps)?,
            };
            let h = chart.curvature(eps, cfg.fd_delta())?;
            let gap = (&delta - &h).norm();
            let consistency = (&delta - dense_exp_minus_identity(&h)).norm();
            (RotationOperator::Dense { delta }, SkewOperator::Dense(h), gap, consistency)
        }
    };
    let sine = plane_sine(g, &plane);
    Ok(HolonomyResult {
        holonomy,
        curvature,
        plane,
        epsilon: eps,
        charge: g.charge(),
        diagnostics: HolonomyDiagnostics {
            clover_vs_closed_form_gap: gap,
            exp_consistency: consistency,
            plane_sine: sine,
            degenerate: sine < 1e-4,
        },
    })
}

/// Four-square averaged holonomy at the branch point.
pub fn clover_holonomy(g: &BranchGeometry, cfg: &HolonomyConfig) -> Result<HolonomyResult> {
    holonomy_impl(g, cfg, Loop::Clover)
}

/// Holonomy of the single square with edges `u` then `v`.
pub fn naive_square_holonomy(g: &BranchGeometry, cfg: &HolonomyConfig) -> Result<HolonomyResult> {
    holonomy_impl(g, cfg, Loop::Square)
}

/// `h = −ε² (∂_μ A_ν − ∂_ν A_μ − [A_ν, A_μ])` with `μ = plane.u`, `ν = plane.v`,
/// built from the public connection operations in ambient space.
pub fn curvature_closed_form(
    g: &BranchGeometry,
    plane: &TangentPlane,
    epsilon: f64,
    delta: f64,
    mode: ChargeMode,
) -> Result<SkewOperator> {
    let z = g.z().as_vector();
    let du_av = connection_derivative(g, &plane.u, &plane.v, delta, mode)?;
    let dv_au = connection_derivative(g, &plane.v, &plane.u, delta, mode)?;
    let au = connection_at_displaced(g, z, &plane.u, mode)?;
    let av = connection_at_displaced(g, z, &plane.v, mode)?;
    let bracket = commutator(&av, &au)?;
    Ok(du_av.sub(&dv_au)?.sub(&bracket)?.scale(-epsilon * epsilon))
}

/// A polygonal path; closed paths repeat their first point at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyPath {
    points: Vec<DVector<f64>>,
    closed: bool,
}

impl PolyPath {
    pub fn new(points: Vec<DVector<f64>>, closed: bool) -> Result<Self> {
        if let Some(first) = points.first() {
            let n = first.len();
            for p in &points {
                check_dim(n, p.len())?;
            }
            for w in points.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::InvalidOperator("consecutive path points coincide".into()));
                }
            }
            if closed && points.last() != Some(first) {
                return Err(Error::InvalidOperator("closed path must end where it starts".into()));
            }
        }
        Ok(Self { points, closed })
    }

    /// The square `z → z+εa → z+εa+εb → z+εb → z`.
    pub fn square(z: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>, epsilon: f64) -> Result<Self> {
        let p0 = z.clone();
        let p1 = z + a * epsilon;
        let p2 = &p1 + b * epsilon;
        let p3 = z + b * epsilon;
        Self::new(vec![p0.clone(), p1, p2, p3, p0], true)
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }
}

/// Ordered product `∏ exp(−A_{δx}(x_i))` along the path, later steps on the
/// left. Each segment is split into `steps_per_segment` equal steps with the
/// connection sampled at the start of each step.
pub fn transport(
    g: &BranchGeometry,
    path: &PolyPath,
    steps_per_segment: usize,
    mode: ChargeMode,
) -> Result<RotationOperator> {
    if steps_per_segment == 0 {
        return Err(Error::Config("steps_per_segment must be positive".into()));
    }
    let n = g.dim();
    let mut acc = RotationOperator::identity(n);
    for seg in path.points.windows(2) {
        check_dim(n, seg[0].len())?;
        let step = (&seg[1] - &seg[0]) / steps_per_segment as f64;
        for i in 0..steps_per_segment {
            let x = &seg[0] + &step * i as f64;
            let c = g.charge_at(&x, mode)?;
            let w = g.blade_partner(&step) * c;
            let gen = crate::linalg::phi_iso(&crate::linalg::SimpleBivector::new(x, w))?;
            acc = expm_skew(&gen.scale(-1.0))?.compose(&acc)?;
        }
    }
    Ok(acc)
}

/// `H_t ⋯ H_2 H_1` on `R^n`: the first element acts first.
pub fn total_holonomy(n: usize, hs: &[RotationOperator]) -> Result<RotationOperator> {
    let mut acc = RotationOperator::identity(n);
    for h in hs {
        acc = h.compose(&acc)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::UnitVector;

    fn e(n: usize, i: usize) -> DVector<f64> {
        UnitVector::basis(n, i).into_vector()
    }

    fn canonical() -> BranchGeometry {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        BranchGeometry::new(UnitVector::basis(4, 0), (e(4, 0) + e(4, 1)) * s, (e(4, 0) + e(4, 2)) * s, 0.5, 0.5, 0, 1)
            .unwrap()
    }

    #[test]
    fn chargeless_point_has_trivial_holonomy() {
        let g = canonical().with_probabilities(0.8, 0.0).unwrap();
        for path in [EvalPath::LowRank, EvalPath::Dense] {
            let cfg = HolonomyConfig { path, ..HolonomyConfig::default() };
            let r = clover_holonomy(&g, &cfg).unwrap();
            assert_eq!(r.holonomy.frobenius_minus_identity(), 0.0);
            assert_eq!(r.curvature.frobenius_norm(), 0.0);
        }
    }

    #[test]
    fn paths_agree_on_canonical_geometry() {
        let g = canonical();
        let lr = clover_holonomy(&g, &HolonomyConfig::default()).unwrap();
        let dn = clover_holonomy(&g, &HolonomyConfig { path: EvalPath::Dense, ..Default::default() }).unwrap();
        assert!((lr.holonomy.to_dense() - dn.holonomy.to_dense()).norm() < 1e-15);
        assert!((lr.curvature.to_dense() - dn.curvature.to_dense()).norm() < 1e-15);
    }

    #[test]
    fn chart_curvature_matches_public_operations() {
        let g = canonical();
        let cfg = HolonomyConfig::default();
        let r = clover_holonomy(&g, &cfg).unwrap();
        let h = curvature_closed_form(&g, &r.plane, cfg.epsilon, cfg.fd_delta(), cfg.mode).unwrap();
        assert!((h.to_dense() - r.curvature.to_dense()).norm() < 1e-18);
    }

    #[test]
    fn empty_and_single_sequences() {
        assert_eq!(total_holonomy(4, &[]).unwrap().to_dense(), DMatrix::identity(4, 4));
        let r = clover_holonomy(&canonical(), &HolonomyConfig::default()).unwrap().holonomy;
        let t = total_holonomy(4, std::slice::from_ref(&r)).unwrap();
        assert!(t.distance(&r).unwrap() < 1e-18);
    }

    #[test]
    fn zero_steps_rejected() {
        let g = canonical();
        let path = PolyPath::square(g.z().as_vector(), &e(4, 1), &e(4, 2), 1e-2).unwrap();
        assert!(transport(&g, &path, 0, ChargeMode::Frozen).is_err());
    }
}
