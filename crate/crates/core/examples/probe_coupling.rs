//! Couplings of a holonomy-rotated state to a probe family, then PCA of the
//! q vectors over a synthetic dataset.

use anyhow::Result;
use blurgeom::coupling::coupling_row;
use blurgeom::dataset::{synth_dataset, SynthConfig};
use blurgeom::holonomy::{clover_holonomy, HolonomyConfig};
use blurgeom::pca::pca;

fn main() -> Result<()> {
    let (ds, _) = synth_dataset(&SynthConfig { n: 48, record_count: 120, ..SynthConfig::default() })?;
    let probes = ds.probes()?;
    let mut points = Vec::new();
    for (i, rec) in ds.records.iter().enumerate() {
        let h = clover_holonomy(&ds.geometry(i, None)?, &HolonomyConfig::default())?.holonomy;
        let row = coupling_row(rec.record_id, &h, &ds.state_pair(i)?, &probes, &rec.active)?;
        if i == 0 {
            let hit = row.max_active_greedy;
            println!("record {}: strongest active probe {} ({:.3e})", rec.record_id, probes[hit.probe as usize].label, hit.value);
        }
        points.push(row.q_greedy);
        points.push(row.q_branch);
    }
    let p = pca(&points, 3)?;
    println!("{} q vectors, rank {}", points.len(), p.rank);
    for (k, f) in p.explained_variance_fractions.iter().enumerate() {
        println!("PC{}: {:.1}% of variance", k + 1, 100.0 * f);
    }
    Ok(())
}
