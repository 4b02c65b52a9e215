//! Control rotations that stand in for the true holonomy.

use anyhow::Result;
use blurgeom::ablation::{AblationMode, AblationSpec};
use blurgeom::dataset::{synth_dataset, SynthConfig};
use blurgeom::holonomy::{clover_holonomy, HolonomyConfig};

fn main() -> Result<()> {
    let (ds, _) = synth_dataset(&SynthConfig { n: 24, record_count: 3, probe_count: 20, ..SynthConfig::default() })?;
    let g = ds.geometry(0, None)?;
    let h = clover_holonomy(&g, &HolonomyConfig::default())?.holonomy;
    println!("true H: ‖H − I‖_F = {:.4e}", h.frobenius_minus_identity());
    for mode in AblationMode::ALL {
        let seed = (mode == AblationMode::RandomSoN).then_some(17);
        let a = AblationSpec::new(mode, seed)?.operator(&g, &h, ds.records[0].record_id)?;
        println!("{:>12}: ‖A − I‖_F = {:.4e}, det = {:.9}", mode.as_str(), a.frobenius_minus_identity(), a.determinant());
    }
    Ok(())
}
