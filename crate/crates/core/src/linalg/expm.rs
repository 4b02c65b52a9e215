//! Matrix exponentials of skew generators.
//!
//! Both paths return `exp(S) − I` rather than `exp(S)`. Holonomies live at
//! distance `O(ε²)` from the identity, and subtracting `I` after the fact
//! would throw away most of their significant digits.

use nalgebra::DMatrix;

use super::rotation::RotationOperator;
use super::skew::SkewOperator;
use super::{ensure_finite_mat, MAX_LOW_RANK};
use crate::error::{Error, Result};

/// Scaling threshold on the 1-norm before the Taylor series is applied.
const SCALING_THRESHOLD: f64 = 0.5;

/// `exp(S)` for a skew generator: closed form on the support block for the
/// low-rank representation, scaling-and-squaring Taylor for dense input.
pub fn expm_skew(s: &SkewOperator) -> Result<RotationOperator> {
    match s {
        SkewOperator::Dense(m) => {
            ensure_finite_mat(m, "skew generator")?;
            Ok(RotationOperator::Dense { delta: dense_exp_minus_identity(m) })
        }
        SkewOperator::LowRank { basis, coeffs } => {
            ensure_finite_mat(coeffs, "skew generator")?;
            Ok(RotationOperator::LowRank {
                basis: basis.clone(),
                delta: closed_form_exp_minus_identity(coeffs)?,
            })
        }
    }
}

/// `exp(M) − I` by scaling and squaring with a truncated Taylor series.
///
/// The degree is picked so the first dropped term is below `1e-17` relative
/// to the leading one; squaring is done in the `D ↦ 2D + D²` form. The
/// polynomial is evaluated Paterson–Stockmeyer style, which needs about
/// `2√m` products instead of `m`.
pub fn dense_exp_minus_identity(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = one_norm(m);
    if norm == 0.0 {
        return DMatrix::zeros(n, n);
    }
    let squarings = if norm > SCALING_THRESHOLD {
        (norm / SCALING_THRESHOLD).log2().ceil() as i32
    } else {
        0
    };
    let x = m / 2f64.powi(squarings);
    let theta = norm / 2f64.powi(squarings);

    let mut degree = 1usize;
    let mut term = theta;
    loop {
        term *= theta / (degree + 1) as f64;
        if term <= 1e-17 * theta || degree >= 30 {
            break;
        }
        degree += 1;
    }

    let mut delta = taylor_exp_minus_identity(&x, degree);
    for _ in 0..squarings {
        delta = &delta * &delta + &delta * 2.0;
    }
    delta
}

/// `Σ_{k=1..m} X^k / k!`.
fn taylor_exp_minus_identity(x: &DMatrix<f64>, degree: usize) -> DMatrix<f64> {
    let n = x.nrows();
    // block size s with powers X^1..X^s; blocks of s coefficients in X^s
    let s = ((degree + 1) as f64).sqrt().ceil() as usize;
    let mut powers = vec![DMatrix::<f64>::identity(n, n), x.clone()];
    for k in 2..=s {
        powers.push(&powers[k - 1] * x);
    }
    let mut coeff = vec![0.0; degree + 1];
    let mut f = 1.0;
    for (k, c) in coeff.iter_mut().enumerate().skip(1) {
        f /= k as f64;
        *c = f;
    }
    let block = |j: usize| {
        let mut b = DMatrix::<f64>::zeros(n, n);
        for i in 0..s {
            if let Some(&c) = coeff.get(j * s + i) {
                if c != 0.0 {
                    b += &powers[i] * c;
                }
            }
        }
        b
    };
    let blocks = degree / s;
    let mut acc = block(blocks);
    for j in (0..blocks).rev() {
        acc = &acc * &powers[s] + block(j);
    }
    acc
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `sin θ / θ`, accurate near zero.
fn sinc(theta: f64) -> f64 {
    if theta.abs() < 1e-4 {
        1.0 - theta * theta / 6.0
    } else {
        theta.sin() / theta
    }
}

/// `(1 − cos θ) / θ²`, accurate near zero.
fn versine_ratio(theta: f64) -> f64 {
    let h = sinc(theta / 2.0);
    0.5 * h * h
}

/// Exact `exp(B) − I` for a skew block of size `k ≤ 4`.
///
/// k = 2 is a planar rotation, k = 3 is Rodrigues' formula, and k = 4 splits
/// the block into commuting self-dual and anti-self-dual parts, each of which
/// squares to a negative multiple of the identity.
pub fn closed_form_exp_minus_identity(block: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = block.nrows();
    if block.ncols() != k {
        return Err(Error::InvalidOperator("skew block is not square".into()));
    }
    match k {
        0 | 1 => Ok(DMatrix::zeros(k, k)),
        2 => {
            let theta = 0.5 * (block[(1, 0)] - block[(0, 1)]);
            let s = theta.sin();
            let half = (0.5 * theta).sin();
            let cm1 = -2.0 * half * half;
            Ok(DMatrix::from_row_slice(2, 2, &[cm1, -s, s, cm1]))
        }
        3 => {
            let s = (block - block.transpose()) * 0.5;
            let theta = (s[(2, 1)].powi(2) + s[(0, 2)].powi(2) + s[(1, 0)].powi(2)).sqrt();
            if theta == 0.0 {
                return Ok(DMatrix::zeros(3, 3));
            }
            let s2 = &s * &s;
            Ok(&s * sinc(theta) + s2 * versine_ratio(theta))
        }
        4 => {
            let s = (block - block.transpose()) * 0.5;
            let (plus, minus) = self_dual_split(&s);
            let dp = quaternionic_exp_minus_identity(&plus);
            let dm = quaternionic_exp_minus_identity(&minus);
            Ok(&dp + &dm + &dp * &dm)
        }
        _ => Err(Error::InvalidOperator(format!(
            "closed-form exponential supports blocks up to {MAX_LOW_RANK}, got {k}"
        ))),
    }
}

/// Splits a 4×4 skew matrix into `(S + ⋆S)/2` and `(S − ⋆S)/2`.
fn self_dual_split(s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut star = DMatrix::zeros(4, 4);
    let mut set = |i: usize, j: usize, v: f64| {
        star[(i, j)] = v;
        star[(j, i)] = -v;
    };
    set(0, 1, s[(2, 3)]);
    set(0, 2, -s[(1, 3)]);
    set(0, 3, s[(1, 2)]);
    set(1, 2, s[(0, 3)]);
    set(1, 3, -s[(0, 2)]);
    set(2, 3, s[(0, 1)]);
    ((s + &star) * 0.5, (s - &star) * 0.5)
}

/// For a (anti-)self-dual 4×4 skew `Q` we have `Q² = −θ² I`, so
/// `exp(Q) − I = (cos θ − 1) I + (sin θ / θ) Q`.
fn quaternionic_exp_minus_identity(q: &DMatrix<f64>) -> DMatrix<f64> {
    let theta = (q[(0, 1)].powi(2) + q[(0, 2)].powi(2) + q[(0, 3)].powi(2)).sqrt();
    let half = (0.5 * theta).sin();
    let cm1 = -2.0 * half * half;
    DMatrix::identity(4, 4) * cm1 + q * sinc(theta)
}
