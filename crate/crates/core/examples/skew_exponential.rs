//! A wedge product as a skew generator, exponentiated both ways.

use anyhow::Result;
use blurgeom::linalg::{dense_exp_minus_identity, expm_skew, phi_iso, SimpleBivector};
use nalgebra::DVector;

fn main() -> Result<()> {
    let n = 6;
    let a = DVector::from_fn(n, |i, _| (i as f64 + 1.0).sin());
    let b = DVector::from_fn(n, |i, _| (i as f64 * 0.7).cos());
    let gen = phi_iso(&SimpleBivector::new(a, b))?.scale(0.3);
    println!("support dimension {} of {n}", gen.support_dim());

    let fast = expm_skew(&gen)?;
    let dense = dense_exp_minus_identity(&gen.to_dense());
    let gap = (fast.minus_identity_dense() - dense).norm();
    println!("closed form vs Taylor: {gap:.2e}");
    println!("‖R − I‖_F = {:.6}, det R = {:.12}", fast.frobenius_minus_identity(), fast.determinant());
    println!("orthogonality defect {:.2e}", fast.orthogonality_defect());
    Ok(())
}
