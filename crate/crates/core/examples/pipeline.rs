//! Whole analysis on a planted dataset, written as a CSV and SVG bundle.

use anyhow::Result;
use blurgeom::dataset::{synth_dataset, PlantedStructure, SynthConfig};
use blurgeom::pipeline::{analyze, PipelineConfig};
use blurgeom::report::{render_plots, write_tables, Stage};

fn main() -> Result<()> {
    let cfg = SynthConfig { n: 64, record_count: 200, planted: Some(PlantedStructure::default()), ..SynthConfig::default() };
    let (ds, _) = synth_dataset(&cfg)?;
    let a = analyze(&ds, &PipelineConfig::default())?;
    println!("{} accepted, {} quarantined", a.records.outcomes.len(), a.records.rejects.len());
    if let Some(c) = &a.clusters {
        println!("ears {} + {}, lines {} + {}, bulk {}", c.left_ear.len(), c.right_ear.len(), c.greedy_line.len(), c.branch_line.len(), c.bulk.len());
    }
    for s in &a.spearman {
        println!("{s:?}");
    }
    let out = std::env::temp_dir().join("blurgeom-pipeline");
    let mut files = write_tables(&a, &out, Stage::Full)?;
    files.extend(render_plots(&out)?);
    println!("{} files in {}", files.len(), out.display());
    Ok(())
}
