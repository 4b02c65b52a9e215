//! CSV tables, SVG plots, and the run manifest.
//!
//! CSVs are the contract. Floats are written in shortest round-trip form, so
//! equal analyses give byte-identical tables. Plots are a convenience and are
//! rendered from the CSVs alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dataset::sha256_hex;
use crate::error::{Error, Result};
use crate::pipeline::{Analysis, HolonomyRow, Reject};
use crate::probe::Probe;

pub const HOLONOMY_CSV: &str = "holonomy.csv";
pub const COUPLINGS_CSV: &str = "couplings.csv";
pub const FLOW_CSV: &str = "flow.csv";
pub const PCA2_CSV: &str = "pca2d.csv";
pub const PCA3_CSV: &str = "pca3d.csv";
pub const PCA_VARIANCE_CSV: &str = "pca_variance.csv";
pub const FILES_CSV: &str = "file_distribution.csv";
pub const SPECTRUM_CSV: &str = "piece_spectrum.csv";
pub const SPEARMAN_CSV: &str = "spearman.csv";
pub const CENTIPAWN_CSV: &str = "centipawn.csv";
pub const REJECTS_CSV: &str = "rejects.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

/// How much of the analysis to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Holonomy,
    Couplings,
    Pca,
    Full,
}

fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    written.push(path);
    Ok(())
}

/// Writes a header-only CSV when there are no rows, so every table exists.
fn write_table<T: Serialize>(
    dir: &Path,
    name: &str,
    header: &[&str],
    rows: Vec<T>,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    if rows.is_empty() {
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        w.flush()?;
        written.push(path);
        Ok(())
    } else {
        write_rows(dir, name, rows, written)
    }
}

#[derive(Serialize)]
struct CouplingCsv {
    record_id: u64,
    continuation: &'static str,
    q_norm: f64,
    mean_coupling: f64,
    max_active_probe: u32,
    max_active_label: String,
    max_active_coupling: f64,
    max_bulk_probe: u32,
    max_bulk_label: String,
    max_bulk_coupling: f64,
}

#[derive(Serialize)]
struct FlowCsv {
    record_id: u64,
    delta_q_norm: f64,
    delta_y_norm: f64,
    cosine: f64,
}

#[derive(Serialize)]
struct PointCsv {
    record_id: u64,
    continuation: &'static str,
    cluster: &'static str,
    pc1: f64,
    pc2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pc3: Option<f64>,
}

#[derive(Serialize)]
struct VarianceCsv {
    dims: usize,
    component: usize,
    explained_variance: f64,
    fraction: f64,
}

#[derive(Serialize)]
struct FileCsv {
    ear: &'static str,
    set: &'static str,
    file: char,
    count: usize,
    total: usize,
    mean: f64,
    lower: f64,
    upper: f64,
}

#[derive(Serialize)]
struct SpectrumCsv {
    side: &'static str,
    piece: &'static str,
    mean_coupling: f64,
    count: usize,
}

#[derive(Serialize)]
struct SpearmanCsv {
    side: &'static str,
    n: Option<usize>,
    rho: Option<f64>,
    p_exact: Option<f64>,
    note: String,
}

#[derive(Serialize)]
struct SummaryCsv {
    key: &'static str,
    value: String,
}

fn continuation_name(c: crate::pca::Continuation) -> &'static str {
    match c {
        crate::pca::Continuation::Greedy => "greedy",
        crate::pca::Continuation::Branch => "branch",
    }
}

fn label(probes: &[Probe], id: u32) -> String {
    probes.get(id as usize).map(|p| p.label.to_string()).unwrap_or_default()
}

/// Writes the CSV tables up to `stage` into `dir` and returns their paths.
pub fn write_tables(analysis: &Analysis, dir: &Path, stage: Stage) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let rec = &analysis.records;

    write_table::<HolonomyRow>(
        dir,
        HOLONOMY_CSV,
        &[
            "record_id",
            "charge",
            "holonomy_minus_identity",
            "curvature_norm",
            "clover_gap",
            "exp_consistency",
            "orthogonality_defect",
            "plane_sine",
            "degenerate",
            "operator_minus_identity",
        ],
        rec.holonomy_rows.clone(),
        &mut written,
    )?;
    write_table::<Reject>(dir, REJECTS_CSV, &["record_id", "stage", "reason"], rec.rejects.clone(), &mut written)?;
    if stage == Stage::Holonomy {
        return Ok(written);
    }

    let probes = &analysis.probes;
    let mut rows = Vec::new();
    let mut flows = Vec::new();
    for o in &rec.outcomes {
        let r = &o.row;
        for (c, q, all, act, bulk) in [
            ("greedy", &r.q_greedy, &r.greedy, r.max_active_greedy, r.max_bulk_greedy),
            ("branch", &r.q_branch, &r.branch, r.max_active_branch, r.max_bulk_branch),
        ] {
            rows.push(CouplingCsv {
                record_id: r.record_id,
                continuation: c,
                q_norm: q.norm(),
                mean_coupling: all.iter().sum::<f64>() / all.len().max(1) as f64,
                max_active_probe: act.probe,
                max_active_label: label(probes, act.probe),
                max_active_coupling: act.value,
                max_bulk_probe: bulk.probe,
                max_bulk_label: label(probes, bulk.probe),
                max_bulk_coupling: bulk.value,
            });
        }
        let (dq, dy) = (o.delta_q.norm(), o.delta_y.norm());
        let cosine = if dq > 0.0 && dy > 0.0 { o.delta_q.dot(&o.delta_y) / (dq * dy) } else { 0.0 };
        flows.push(FlowCsv { record_id: r.record_id, delta_q_norm: dq, delta_y_norm: dy, cosine });
    }
    write_table(
        dir,
        COUPLINGS_CSV,
        &[
            "record_id",
            "continuation",
            "q_norm",
            "mean_coupling",
            "max_active_probe",
            "max_active_label",
            "max_active_coupling",
            "max_bulk_probe",
            "max_bulk_label",
            "max_bulk_coupling",
        ],
        rows,
        &mut written,
    )?;
    write_table(dir, FLOW_CSV, &["record_id", "delta_q_norm", "delta_y_norm", "cosine"], flows, &mut written)?;
    if stage == Stage::Couplings {
        return Ok(written);
    }

    let clusters = analysis.point_clusters();
    let mut variance = Vec::new();
    for (name, p) in [(PCA2_CSV, &analysis.pca2), (PCA3_CSV, &analysis.pca3)] {
        let pts: Vec<PointCsv> = match p {
            Some(p) => analysis
                .points
                .iter()
                .enumerate()
                .map(|(i, pt)| PointCsv {
                    record_id: pt.record_id,
                    continuation: continuation_name(pt.continuation),
                    cluster: clusters[i],
                    pc1: p.projections[(i, 0)],
                    pc2: p.projections[(i, 1)],
                    pc3: (p.dims() > 2).then(|| p.projections[(i, 2)]),
                })
                .collect(),
            None => Vec::new(),
        };
        let header: &[&str] = if name == PCA2_CSV {
            &["record_id", "continuation", "cluster", "pc1", "pc2"]
        } else {
            &["record_id", "continuation", "cluster", "pc1", "pc2", "pc3"]
        };
        write_table(dir, name, header, pts, &mut written)?;
        if let Some(p) = p {
            for (k, (v, f)) in p.explained_variance.iter().zip(&p.explained_variance_fractions).enumerate() {
                variance.push(VarianceCsv { dims: p.dims(), component: k + 1, explained_variance: *v, fraction: *f });
            }
        }
    }
    write_table(dir, PCA_VARIANCE_CSV, &["dims", "component", "explained_variance", "fraction"], variance, &mut written)?;
    if stage == Stage::Pca {
        return Ok(written);
    }

    let files: Vec<FileCsv> = analysis
        .file_distributions
        .iter()
        .flat_map(|e| {
            e.rates.iter().map(move |r| FileCsv {
                ear: e.ear,
                set: e.set,
                file: r.file,
                count: r.count,
                total: r.total,
                mean: r.mean,
                lower: r.lower,
                upper: r.upper,
            })
        })
        .collect();
    write_table(dir, FILES_CSV, &["ear", "set", "file", "count", "total", "mean", "lower", "upper"], files, &mut written)?;

    let spectrum: Vec<SpectrumCsv> = analysis
        .piece_spectrum
        .iter()
        .map(|g| SpectrumCsv { side: g.side.as_str(), piece: g.piece.as_str(), mean_coupling: g.mean_coupling, count: g.count })
        .collect();
    write_table(dir, SPECTRUM_CSV, &["side", "piece", "mean_coupling", "count"], spectrum, &mut written)?;

    let spearman: Vec<SpearmanCsv> = analysis
        .spearman
        .iter()
        .map(|s| SpearmanCsv {
            side: s.side.as_str(),
            n: s.result.map(|r| r.n),
            rho: s.result.map(|r| r.rho),
            p_exact: s.result.map(|r| r.p_exact),
            note: s.note.clone().unwrap_or_default(),
        })
        .collect();
    write_table(dir, SPEARMAN_CSV, &["side", "n", "rho", "p_exact", "note"], spearman, &mut written)?;

    if let Some(c) = &analysis.centipawn {
        write_rows(dir, CENTIPAWN_CSV, [c], &mut written)?;
    }

    let mut summary = vec![
        SummaryCsv { key: "records_accepted", value: rec.outcomes.len().to_string() },
        SummaryCsv { key: "records_rejected", value: rec.rejects.len().to_string() },
    ];
    if let Some(m) = analysis.mean_coupling {
        summary.push(SummaryCsv { key: "mean_coupling_greedy", value: m.greedy.to_string() });
        summary.push(SummaryCsv { key: "mean_coupling_branch", value: m.branch.to_string() });
    }
    for (key, p) in [("pca2_top_fraction", &analysis.pca2), ("pca3_top_fraction", &analysis.pca3)] {
        if let Some(p) = p {
            summary.push(SummaryCsv { key, value: p.top_fraction().to_string() });
        }
    }
    if let Some(c) = &analysis.clusters {
        for (key, v) in [
            ("left_ear_size", c.left_ear.len()),
            ("right_ear_size", c.right_ear.len()),
            ("greedy_line_size", c.greedy_line.len()),
            ("branch_line_size", c.branch_line.len()),
            ("bulk_size", c.bulk.len()),
        ] {
            summary.push(SummaryCsv { key, value: v.to_string() });
        }
    }
    write_rows(dir, SUMMARY_CSV, summary, &mut written)?;
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub dataset: String,
    pub dataset_sha256: String,
    pub config: C,
    pub records_accepted: usize,
    pub records_rejected: usize,
    pub stage_seconds: BTreeMap<String, f64>,
    pub outputs: Vec<ManifestFile>,
}

/// Hashes the given outputs and writes `manifest.json` next to them.
pub fn write_manifest<C: Serialize>(
    dir: &Path,
    dataset: &Path,
    config: C,
    analysis: &Analysis,
    outputs: &[PathBuf],
    extra_timings: &[(&str, f64)],
) -> Result<PathBuf> {
    let data = fs::read(dataset)?;
    let mut files = Vec::new();
    for p in outputs {
        let bytes = fs::read(p)?;
        files.push(ManifestFile {
            name: p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
    }
    files.sort_by(|a, b| a.name.cmp(&b.name));
    let stage_seconds = analysis
        .timings
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .chain(extra_timings.iter().map(|(k, v)| (k.to_string(), *v)))
        .collect();
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        dataset: dataset.display().to_string(),
        dataset_sha256: sha256_hex(&data),
        config,
        records_accepted: analysis.records.outcomes.len(),
        records_rejected: analysis.records.rejects.len(),
        stage_seconds,
        outputs: files,
    };
    let path = dir.join(MANIFEST_JSON);
    fs::write(&path, serde_json::to_string_pretty(&m)?)?;
    Ok(path)
}

// ---- plots ----

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 40.0;

fn color(cluster: &str) -> &'static str {
    match cluster {
        "left-ear" => "#d62728",
        "right-ear" => "#1f77b4",
        "greedy-line" => "#2ca02c",
        "branch-line" => "#9467bd",
        "greedy" => "#ff7f0e",
        "branch" => "#17becf",
        _ => "#7f7f7f",
    }
}

fn extent(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        (-1.0, 1.0)
    } else if hi - lo < 1e-300 {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

/// A minimal scatter plot; `points` are `(x, y, class)`.
pub fn scatter_svg(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64, String)]) -> String {
    let (x0, x1) = extent(points.iter().map(|p| p.0));
    let (y0, y1) = extent(points.iter().map(|p| p.1));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{xlabel}</text>"#, W / 2.0, H - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 12 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for (x, y, class) in points {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}"/>"#, sx(*x), sy(*y), color(class));
    }
    s.push_str("</svg>\n");
    s
}

/// A minimal bar chart of labelled values.
pub fn bar_svg(title: &str, bars: &[(String, f64)]) -> String {
    let max = bars.iter().map(|b| b.1).fold(0.0, f64::max).max(1e-300);
    let bw = (W - 2.0 * PAD) / bars.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    for (i, (name, v)) in bars.iter().enumerate() {
        let h = v / max * (H - 3.0 * PAD);
        let x = PAD + i as f64 * bw;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4c72b0"/>"##,
            x + 0.1 * bw,
            H - 2.0 * PAD - h,
            0.8 * bw,
            h
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="9" transform="rotate(60 {:.2} {:.2})">{name}</text>"#,
            x + 0.3 * bw,
            H - 2.0 * PAD + 10.0,
            x + 0.3 * bw,
            H - 2.0 * PAD + 10.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn read_csv(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let rows = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

fn column(header: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Config(format!("{} has no column `{name}`", path.display())))
}

fn float(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Config(format!("not a number: `{s}`")))
}

/// Renders SVG plots from whichever CSV tables exist in `dir`.
pub fn render_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut emit = |name: &str, svg: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, svg)?;
        out.push(p);
        Ok(())
    };

    for (csv_name, svg_name, yname, title) in
        [(PCA2_CSV, "pca2d.svg", "pc2", "q vectors, 2-D PCA"), (PCA3_CSV, "pca3d.svg", "pc3", "q vectors, PC1 vs PC3")]
    {
        let path = dir.join(csv_name);
        if !path.exists() {
            continue;
        }
        let (h, rows) = read_csv(&path)?;
        let (cx, cy, cc) = (column(&h, "pc1", &path)?, column(&h, yname, &path)?, column(&h, "cluster", &path)?);
        let pts = rows
            .iter()
            .map(|r| Ok((float(&r[cx])?, float(&r[cy])?, r[cc].to_string())))
            .collect::<Result<Vec<_>>>()?;
        emit(svg_name, scatter_svg(title, "pc1", yname, &pts))?;
    }

    let path = dir.join(FLOW_CSV);
    if path.exists() {
        let (h, rows) = read_csv(&path)?;
        let (cx, cy) = (column(&h, "delta_y_norm", &path)?, column(&h, "delta_q_norm", &path)?);
        let pts = rows.iter().map(|r| Ok((float(&r[cx])?, float(&r[cy])?, "bulk".to_string()))).collect::<Result<Vec<_>>>()?;
        emit("flow.svg", scatter_svg("flow", "|Δy|", "|Δq|", &pts))?;
    }

    let path = dir.join(SPECTRUM_CSV);
    if path.exists() {
        let (h, rows) = read_csv(&path)?;
        let (cs, cp, cm) = (column(&h, "side", &path)?, column(&h, "piece", &path)?, column(&h, "mean_coupling", &path)?);
        let bars = rows.iter().map(|r| Ok((format!("{}_{}", &r[cs], &r[cp]), float(&r[cm])?))).collect::<Result<Vec<_>>>()?;
        emit("piece_spectrum.svg", bar_svg("mean Δq coupling by piece", &bars))?;
    }

    let path = dir.join(FILES_CSV);
    if path.exists() {
        let (h, rows) = read_csv(&path)?;
        let (ce, cs, cf, cm) =
            (column(&h, "ear", &path)?, column(&h, "set", &path)?, column(&h, "file", &path)?, column(&h, "mean", &path)?);
        let bars = rows
            .iter()
            .filter(|r| &r[cs] == "active")
            .map(|r| Ok((format!("{}_{}", &r[ce], &r[cf]), float(&r[cm])?)))
            .collect::<Result<Vec<_>>>()?;
        emit("file_distribution.svg", bar_svg("active max-probe file by ear", &bars))?;
    }
    Ok(out)
}
