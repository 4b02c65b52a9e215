//! The blurring connection on the output sphere.
//!
//! At a branch point the connection in tangent direction `μ` is the two-blade
//! generator `A_μ(x) = c · φ(x ∧ w_μ)` with `w_μ = −(μ·v₁) v₂ + (μ·v₂) v₁` and
//! charge `c = 4 p₁ p₂`. Everything is linear in `μ`; in frozen mode it is
//! also linear in the base point `x`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    ensure_finite_vec, orthonormalize_pair, phi_iso, project_tangent, SimpleBivector, SkewOperator,
    TangentVector, UnitVector,
};

/// How the probabilities are treated away from the branch point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChargeMode {
    /// `p₁, p₂` stay at their branch-point values.
    #[default]
    Frozen,
    /// `p₁, p₂` are re-read from `softmax(V x)` with the token pair held fixed.
    Recomputed,
}

impl std::str::FromStr for ChargeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(ChargeMode::Frozen),
            "recomputed" => Ok(ChargeMode::Recomputed),
            other => Err(Error::Config(format!("unknown charge mode `{other}`"))),
        }
    }
}

/// `4 p₁ p₂`.
pub fn probability_charge(p1: f64, p2: f64) -> Result<f64> {
    check_probabilities(p1, p2)?;
    Ok(4.0 * p1 * p2)
}

fn check_probabilities(p1: f64, p2: f64) -> Result<()> {
    let bad = |reason| Err(Error::InvalidProbability { p1, p2, reason });
    if !p1.is_finite() || !p2.is_finite() {
        return bad("not finite");
    }
    if p2 < 0.0 || p1 > 1.0 {
        return bad("outside [0, 1]");
    }
    if p2 > p1 {
        return bad("p2 exceeds p1");
    }
    if p1 + p2 > 1.0 + 1e-6 {
        return bad("p1 + p2 exceeds 1");
    }
    Ok(())
}

/// One sampled branch point.
#[derive(Debug, Clone)]
pub struct BranchGeometry {
    z: UnitVector,
    v1: DVector<f64>,
    v2: DVector<f64>,
    p1: f64,
    p2: f64,
    token1: u32,
    token2: u32,
    unembed: Option<Arc<DMatrix<f64>>>,
}

impl BranchGeometry {
    pub fn new(
        z: UnitVector,
        v1: DVector<f64>,
        v2: DVector<f64>,
        p1: f64,
        p2: f64,
        token1: u32,
        token2: u32,
    ) -> Result<Self> {
        let n = z.dim();
        check_dim(n, v1.len())?;
        check_dim(n, v2.len())?;
        ensure_finite_vec(&v1, "v1")?;
        ensure_finite_vec(&v2, "v2")?;
        check_probabilities(p1, p2)?;
        if p1 <= 0.0 {
            return Err(Error::InvalidProbability { p1, p2, reason: "p1 must be positive" });
        }
        if token1 == token2 {
            return Err(Error::InvalidOperator(format!("top tokens coincide ({token1})")));
        }
        Ok(Self { z, v1, v2, p1, p2, token1, token2, unembed: None })
    }

    /// Builds a geometry entirely from an unembedding matrix: the tokens are
    /// the top two of `softmax(V z)` and `v₁, v₂` are the matching rows.
    pub fn from_unembed(z: UnitVector, unembed: Arc<DMatrix<f64>>) -> Result<Self> {
        check_dim(z.dim(), unembed.ncols())?;
        if unembed.nrows() < 2 {
            return Err(Error::InvalidOperator("unembedding needs at least two tokens".into()));
        }
        let probs = softmax(&(unembed.as_ref() * z.as_vector()));
        let (t1, t2) = top_two(&probs);
        let v1 = unembed.row(t1 as usize).transpose();
        let v2 = unembed.row(t2 as usize).transpose();
        let (p1, p2) = (probs[t1 as usize], probs[t2 as usize]);
        let mut g = Self::new(z, v1, v2, p1, p2, t1, t2)?;
        g.unembed = Some(unembed);
        Ok(g)
    }

    /// Attaches `V`, checking that it ranks `token1` and `token2` on top.
    pub fn with_unembed(mut self, unembed: Arc<DMatrix<f64>>) -> Result<Self> {
        check_dim(self.dim(), unembed.ncols())?;
        let l = unembed.nrows();
        if self.token1 as usize >= l || self.token2 as usize >= l {
            return Err(Error::InvalidOperator(format!("token id outside vocabulary of size {l}")));
        }
        let probs = softmax(&(unembed.as_ref() * self.z.as_vector()));
        let found = top_two(&probs);
        if found != (self.token1, self.token2) && found != (self.token2, self.token1) {
            return Err(Error::TopTwoChanged { expected: (self.token1, self.token2), found });
        }
        self.unembed = Some(unembed);
        Ok(self)
    }

    pub fn z(&self) -> &UnitVector {
        &self.z
    }
    pub fn v1(&self) -> &DVector<f64> {
        &self.v1
    }
    pub fn v2(&self) -> &DVector<f64> {
        &self.v2
    }
    pub fn p1(&self) -> f64 {
        self.p1
    }
    pub fn p2(&self) -> f64 {
        self.p2
    }
    pub fn tokens(&self) -> (u32, u32) {
        (self.token1, self.token2)
    }
    pub fn unembed(&self) -> Option<&Arc<DMatrix<f64>>> {
        self.unembed.as_ref()
    }
    pub fn dim(&self) -> usize {
        self.z.dim()
    }

    pub fn charge(&self) -> f64 {
        4.0 * self.p1 * self.p2
    }

    /// The same geometry with different probabilities.
    pub fn with_probabilities(&self, p1: f64, p2: f64) -> Result<Self> {
        check_probabilities(p1, p2)?;
        Ok(Self { p1, p2, ..self.clone() })
    }

    /// `w_μ / c = −(μ·v₁) v₂ + (μ·v₂) v₁`.
    pub(crate) fn blade_partner(&self, mu: &DVector<f64>) -> DVector<f64> {
        &self.v1 * mu.dot(&self.v2) - &self.v2 * mu.dot(&self.v1)
    }

    /// Charge at a (possibly displaced) point.
    pub fn charge_at(&self, x: &DVector<f64>, mode: ChargeMode) -> Result<f64> {
        match mode {
            ChargeMode::Frozen => Ok(self.charge()),
            ChargeMode::Recomputed => {
                let v = self.unembed.as_ref().ok_or(Error::RecomputedWithoutUnembed)?;
                let (p1, p2) = displaced_probabilities(v, x, (self.token1, self.token2))?;
                Ok(4.0 * p1 * p2)
            }
        }
    }
}

/// `softmax(L x)` restricted to a fixed token pair. Fails when that pair is
/// no longer the top two.
pub(crate) fn displaced_probabilities(
    logits_map: &DMatrix<f64>,
    x: &DVector<f64>,
    tokens: (u32, u32),
) -> Result<(f64, f64)> {
    let probs = softmax(&(logits_map * x));
    let found = top_two(&probs);
    if found != tokens && found != (tokens.1, tokens.0) {
        return Err(Error::TopTwoChanged { expected: tokens, found });
    }
    Ok((probs[tokens.0 as usize], probs[tokens.1 as usize]))
}

/// Numerically stable softmax.
pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let m = logits.max();
    let e = logits.map(|x| (x - m).exp());
    let s = e.sum();
    e / s
}

/// Indices of the largest and second largest entries (lowest index on ties).
pub(crate) fn top_two(p: &DVector<f64>) -> (u32, u32) {
    let (mut a, mut b) = (0usize, usize::MAX);
    for i in 1..p.len() {
        if p[i] > p[a] {
            b = a;
            a = i;
        } else if b == usize::MAX || p[i] > p[b] {
            b = i;
        }
    }
    (a as u32, b as u32)
}

/// An orthonormal pair `(u, v)` in the tangent space at `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentPlane {
    pub u: TangentVector,
    pub v: TangentVector,
}

impl TangentPlane {
    pub fn swapped(&self) -> Self {
        Self { u: self.v.clone(), v: self.u.clone() }
    }
}

/// `A_μ(z)` at the branch point.
pub fn connection(g: &BranchGeometry, mu: &TangentVector) -> Result<SkewOperator> {
    check_dim(g.dim(), mu.dim())?;
    connection_raw(g.z.as_vector(), &g.blade_partner(mu.as_vector()), g.charge())
}

/// `A_μ(x)` at a displaced base point with the token pair frozen.
pub fn connection_at_displaced(
    g: &BranchGeometry,
    base_z: &DVector<f64>,
    mu: &TangentVector,
    mode: ChargeMode,
) -> Result<SkewOperator> {
    check_dim(g.dim(), base_z.len())?;
    check_dim(g.dim(), mu.dim())?;
    ensure_finite_vec(base_z, "displaced base point")?;
    let c = g.charge_at(base_z, mode)?;
    connection_raw(base_z, &g.blade_partner(mu.as_vector()), c)
}

fn connection_raw(x: &DVector<f64>, partner: &DVector<f64>, charge: f64) -> Result<SkewOperator> {
    if charge == 0.0 {
        return Ok(SkewOperator::zero(x.len()));
    }
    phi_iso(&SimpleBivector::new(x.clone(), partner * charge))
}

/// The plane spanned by the tangent parts of `v₁` and then `v₂`.
pub fn select_plane(g: &BranchGeometry) -> Result<TangentPlane> {
    let t1 = project_tangent(&g.v1, &g.z)?;
    let t2 = project_tangent(&g.v2, &g.z)?;
    if t1.norm() < 1e-7 * g.v1.norm() {
        return Err(Error::DegeneratePlane);
    }
    let (u, v) = orthonormalize_pair(&t1, &t2)?;
    Ok(TangentPlane { u, v })
}

/// Central difference `(A_of(z + δ·along) − A_of(z − δ·along)) / 2δ`.
pub fn connection_derivative(
    g: &BranchGeometry,
    along: &TangentVector,
    of: &TangentVector,
    delta: f64,
    mode: ChargeMode,
) -> Result<SkewOperator> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Config(format!("finite-difference step must be positive, got {delta}")));
    }
    check_dim(g.dim(), along.dim())?;
    let z = g.z.as_vector();
    let fwd = connection_at_displaced(g, &(z + along.as_vector() * delta), of, mode)?;
    let bwd = connection_at_displaced(g, &(z - along.as_vector() * delta), of, mode)?;
    Ok(fwd.sub(&bwd)?.scale(0.5 / delta))
}
