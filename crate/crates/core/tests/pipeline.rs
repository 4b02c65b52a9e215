use std::collections::BTreeMap;
use std::path::Path;

use blurgeom::ablation::{AblationMode, AblationSpec};
use blurgeom::dataset::{synth_dataset, BlurProfile, Dataset, PlantedStructure, SynthConfig};
use blurgeom::holonomy::{clover_holonomy, HolonomyConfig};
use blurgeom::pipeline::{analyze, process_records, CouplingAverage, CouplingTarget, PipelineConfig, RejectStage};
use blurgeom::report::{render_plots, write_manifest, write_tables, Stage};

fn dataset(cfg: SynthConfig) -> Dataset {
    synth_dataset(&cfg).unwrap().0
}

fn small() -> SynthConfig {
    SynthConfig { seed: 21, n: 16, record_count: 60, probe_count: 100, with_eval: true, ..SynthConfig::default() }
}

fn csvs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn run_to(ds: &Dataset, cfg: &PipelineConfig, dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let a = analyze(ds, cfg).unwrap();
    write_tables(&a, dir, Stage::Full).unwrap();
    csvs(dir)
}

#[test]
fn chargeless_dataset_is_fully_quarantined() {
    let ds = dataset(SynthConfig { blur_profile: BlurProfile::chargeless(), ..small() });
    let a = analyze(&ds, &PipelineConfig::default()).unwrap();
    assert!(a.records.outcomes.is_empty());
    assert_eq!(a.records.rejects.len(), ds.records.len());
    assert!(a.records.rejects.iter().all(|r| r.stage == RejectStage::ZeroQ));
    assert!(a.records.holonomy_rows.iter().all(|h| h.holonomy_minus_identity == 0.0));
    assert!(a.pca2.is_none() && a.clusters.is_none() && a.mean_coupling.is_none());

    let dir = tempfile::tempdir().unwrap();
    let files = write_tables(&a, dir.path(), Stage::Full).unwrap();
    assert!(files.iter().any(|f| f.ends_with("rejects.csv")));
    render_plots(dir.path()).unwrap();
}

#[test]
fn outputs_are_bitwise_identical_across_reruns_and_thread_counts() {
    let ds = dataset(SynthConfig { planted: Some(PlantedStructure::default()), with_eval: false, ..small() });
    let mut reference = None;
    for threads in [None, Some(1), Some(2), Some(4), Some(1)] {
        let dir = tempfile::tempdir().unwrap();
        let out = run_to(&ds, &PipelineConfig { threads, ..PipelineConfig::default() }, dir.path());
        assert!(out.len() >= 10);
        match &reference {
            None => reference = Some(out),
            Some(r) => assert_eq!(r, &out, "threads {threads:?}"),
        }
    }
}

#[test]
fn random_ablation_is_deterministic_across_thread_counts() {
    let ds = dataset(small());
    let ablation = Some(AblationSpec::new(AblationMode::RandomSoN, Some(99)).unwrap());
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let x = run_to(&ds, &PipelineConfig { ablation, threads: Some(1), ..PipelineConfig::default() }, a.path());
    let y = run_to(&ds, &PipelineConfig { ablation, threads: Some(3), ..PipelineConfig::default() }, b.path());
    assert_eq!(x, y);
}

#[test]
fn records_match_direct_computation() {
    let ds = dataset(small());
    let out = process_records(&ds, &PipelineConfig::default()).unwrap();
    assert_eq!(out.outcomes.len() + out.rejects.len(), ds.records.len());
    for o in &out.outcomes {
        let g = ds.geometry(o.index, None).unwrap();
        let h = clover_holonomy(&g, &HolonomyConfig::default()).unwrap().holonomy;
        let pair = ds.state_pair(o.index).unwrap();
        let dense = h.to_dense();
        let want = &dense * &pair.y_greedy - &pair.y_greedy;
        assert!((&o.row.q_greedy - &want).norm() <= 1e-9 * pair.y_greedy.norm());
        assert_eq!(o.row.record_id, ds.records[o.index].record_id);
        assert_eq!(o.delta_y, &pair.y_branch - &pair.y_greedy);
    }
}

#[test]
fn rotated_target_couples_the_rotated_state() {
    let ds = dataset(small());
    let cfg = PipelineConfig { target: CouplingTarget::Rotated, ..PipelineConfig::default() };
    let out = process_records(&ds, &cfg).unwrap();
    let o = &out.outcomes[0];
    let pair = ds.state_pair(o.index).unwrap();
    // H y ≈ y at small epsilon
    assert!((&o.row.q_greedy - &pair.y_greedy).norm() <= 1e-3 * pair.y_greedy.norm());
}

#[test]
fn analysis_covers_every_stage() {
    let ds = dataset(SynthConfig { record_count: 120, probe_count: 737, planted: Some(PlantedStructure::default()), ..small() });
    let a = analyze(&ds, &PipelineConfig::default()).unwrap();
    assert_eq!(a.points.len(), 2 * a.records.outcomes.len());
    let c = a.clusters.as_ref().unwrap();
    let total = c.left_ear.len() + c.right_ear.len() + c.greedy_line.len() + c.branch_line.len() + c.bulk.len();
    assert_eq!(total, a.points.len());
    assert_eq!(a.file_distributions.len(), 4);
    assert_eq!(a.piece_spectrum.len(), 12);
    assert_eq!(a.spearman.len(), 2);
    assert!(a.centipawn.is_some());
    let m = a.mean_coupling.unwrap();
    assert!(m.greedy > 0.0 && m.branch > 0.0);

    let max = analyze(&ds, &PipelineConfig { average: CouplingAverage::MaxProbes, ..PipelineConfig::default() }).unwrap();
    let mm = max.mean_coupling.unwrap();
    assert!(mm.greedy > m.greedy);
}

#[test]
fn full_report_bundle_is_written() {
    let ds = dataset(SynthConfig { record_count: 80, ..small() });
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.bhg1");
    ds.write(&data).unwrap();
    let a = analyze(&ds, &PipelineConfig::default()).unwrap();
    let out = dir.path().join("out");
    let mut files = write_tables(&a, &out, Stage::Full).unwrap();
    files.extend(render_plots(&out).unwrap());
    write_manifest(&out, &data, &PipelineConfig::default(), &a, &files, &[("load", 0.0)]).unwrap();
    for name in [
        "holonomy.csv",
        "couplings.csv",
        "flow.csv",
        "pca2d.csv",
        "pca3d.csv",
        "pca_variance.csv",
        "file_distribution.csv",
        "piece_spectrum.csv",
        "spearman.csv",
        "centipawn.csv",
        "rejects.csv",
        "summary.csv",
        "manifest.json",
        "pca2d.svg",
        "pca3d.svg",
        "flow.svg",
        "piece_spectrum.svg",
        "file_distribution.svg",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["records_accepted"].as_u64().unwrap() as usize, a.records.outcomes.len());
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), files.len());
    let svg = std::fs::read_to_string(out.join("pca2d.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn holonomy_rows_are_consistent() {
    let ds = dataset(small());
    let out = process_records(&ds, &PipelineConfig::default()).unwrap();
    for h in &out.holonomy_rows {
        assert!(h.orthogonality_defect <= 1e-10);
        assert!(h.clover_gap <= 1e-9);
        assert_eq!(h.operator_minus_identity, h.holonomy_minus_identity);
        assert!(!h.degenerate);
    }
}
