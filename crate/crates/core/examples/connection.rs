//! The token connection at a branch point and along a displaced base point.

use anyhow::Result;
use blurgeom::connection::{connection, connection_at_displaced, select_plane, BranchGeometry, ChargeMode};
use blurgeom::linalg::UnitVector;
use nalgebra::DVector;

fn main() -> Result<()> {
    let z = UnitVector::from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0])?;
    let v1 = DVector::from_vec(vec![0.2, 1.0, 0.1, 0.0, 0.3]);
    let v2 = DVector::from_vec(vec![-0.1, 0.2, 1.0, 0.4, 0.0]);
    let g = BranchGeometry::new(z, v1, v2, 0.55, 0.40, 7, 11)?;
    println!("charge 4·p1·p2 = {:.3}", g.charge());

    let plane = select_plane(&g)?;
    let au = connection(&g, &plane.u)?;
    let av = connection(&g, &plane.v)?;
    println!("‖A_u‖ = {:.4}  ‖A_v‖ = {:.4}", au.frobenius_norm(), av.frobenius_norm());

    let shifted = g.z().as_vector() + plane.u.as_vector() * 0.05;
    for mode in [ChargeMode::Frozen, ChargeMode::Recomputed] {
        match connection_at_displaced(&g, &shifted, &plane.v, mode) {
            Ok(a) => println!("{mode:?}: ‖A_v(z + 0.05u)‖ = {:.4}", a.frobenius_norm()),
            Err(e) => println!("{mode:?}: {e}"),
        }
    }
    Ok(())
}
