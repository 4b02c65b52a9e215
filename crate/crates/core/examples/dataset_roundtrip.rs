//! Write a synthetic BHG1 file, validate it, then corrupt one record.

use anyhow::Result;
use blurgeom::dataset::{synth, validate, validate_dataset, Dataset, SynthConfig};

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("blurgeom-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("tiny.bhg1");
    let summary = synth(&SynthConfig { n: 16, record_count: 25, probe_count: 40, ..SynthConfig::default() }, &path)?;
    println!("wrote {} ({})", path.display(), summary.sha256);

    let report = validate(&path)?;
    for c in &report.checks {
        println!("{:<20} {}", c.name, if c.passed() { "ok" } else { "FAIL" });
    }

    let mut ds = Dataset::read(&path)?;
    let r = &mut ds.records[4];
    std::mem::swap(&mut r.p1, &mut r.p2);
    let bad = validate_dataset(&ds);
    for c in bad.failed_checks() {
        println!("after corruption: {} failed, first record {:?}", c.name, c.first_record);
    }
    Ok(())
}
