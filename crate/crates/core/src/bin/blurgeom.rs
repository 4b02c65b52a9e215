use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use blurgeom::ablation::{AblationMode, AblationSpec};
use blurgeom::config::Config;
use blurgeom::connection::ChargeMode;
use blurgeom::dataset::{self, BlurProfile, Dataset, PlantedStructure};
use blurgeom::holonomy::EvalPath;
use blurgeom::pipeline::{analyze, CouplingTarget};
use blurgeom::report::{render_plots, write_manifest, write_tables, Stage};

/// Blurring-geometry holonomy and probe-coupling analysis.
#[derive(Parser)]
#[command(name = "blurgeom", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Clover side length [default: 1e-3]
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Finite-difference step for the closed-form curvature [default: epsilon]
    #[arg(long, global = true)]
    fd_delta: Option<f64>,
    /// Probabilities at displaced points [default: frozen]
    #[arg(long, global = true, value_enum)]
    charge_mode: Option<ModeArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, or the dataset file for `synth`
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Frozen,
    Recomputed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Default,
    Maximal,
    Confident,
    Chargeless,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    RandomSoN,
    RotateV1,
    RotateV2,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Difference,
    Rotated,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset file and report every failed check
    Validate {
        dataset: PathBuf,
        /// Print the report as JSON
        #[arg(long)]
        json: bool,
    },
    /// Generate a seeded synthetic dataset
    Synth {
        #[arg(long)]
        records: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        probes: Option<usize>,
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
        /// Plant ears and lines with the default fractions
        #[arg(long)]
        planted: bool,
        /// Ship an unembedding matrix with this many rows
        #[arg(long)]
        vocab: Option<u32>,
        /// Attach synthetic evaluation metadata
        #[arg(long)]
        eval: bool,
    },
    /// Per-record clover holonomy
    Holonomy {
        dataset: PathBuf,
        /// Evaluate on the dense n×n path instead of the low-rank chart
        #[arg(long)]
        dense: bool,
    },
    /// Holonomy, q vectors, and probe couplings
    Couple {
        dataset: PathBuf,
        #[arg(long, value_enum)]
        target: Option<TargetArg>,
    },
    /// Couplings plus 2-D and 3-D PCA with cluster labels
    Pca { dataset: PathBuf },
    /// Full analysis with a control operator in place of the holonomy
    Ablate {
        dataset: PathBuf,
        #[arg(long, value_enum)]
        mode: AblationArg,
    },
    /// Render SVG plots from the CSV tables in a results directory
    Report { dir: PathBuf },
    /// Validate, analyse, and write tables, plots, and a manifest
    Run { dataset: PathBuf },
}

fn settings(g: &Global) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(e) = g.epsilon {
        cfg.holonomy.epsilon = e;
    }
    if g.fd_delta.is_some() {
        cfg.holonomy.fd_delta = g.fd_delta;
    }
    if let Some(m) = g.charge_mode {
        cfg.holonomy.mode = match m {
            ModeArg::Frozen => ChargeMode::Frozen,
            ModeArg::Recomputed => ChargeMode::Recomputed,
        };
    }
    if g.seed.is_some() {
        cfg.seed = g.seed;
    }
    if g.threads.is_some() {
        cfg.threads = g.threads;
    }
    cfg.holonomy.validate()?;
    Ok(cfg)
}

fn out_dir(g: &Global) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from("blurgeom-out"))
}

fn load(path: &Path) -> Result<Dataset> {
    Dataset::read(path).with_context(|| format!("loading {}", path.display()))
}

fn analyse_and_write(dataset: &Path, cfg: &Config, dir: &Path, stage: Stage) -> Result<()> {
    let t = Instant::now();
    let ds = load(dataset)?;
    let load_secs = t.elapsed().as_secs_f64();
    let analysis = analyze(&ds, &cfg.pipeline())?;
    let t = Instant::now();
    let mut outputs = write_tables(&analysis, dir, stage)?;
    if stage == Stage::Full {
        outputs.extend(render_plots(dir)?);
    }
    let write_secs = t.elapsed().as_secs_f64();
    write_manifest(dir, dataset, cfg, &analysis, &outputs, &[("load", load_secs), ("write", write_secs)])?;
    println!(
        "{} records analysed, {} quarantined; results in {}",
        analysis.records.outcomes.len(),
        analysis.records.rejects.len(),
        dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = settings(&cli.global)?;
    match cli.command {
        Command::Validate { dataset, json } => {
            let report = dataset::validate(&dataset)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                for c in &report.checks {
                    let status = if c.passed() { "ok  " } else { "FAIL" };
                    print!("{status} {:<20} failures={}", c.name, c.failures);
                    if let Some(r) = c.first_record {
                        print!(" first_record={r}");
                    }
                    if let Some(p) = c.first_probe {
                        print!(" first_probe={p}");
                    }
                    if let Some(d) = &c.detail {
                        print!(" ({d})");
                    }
                    println!();
                }
            }
            return Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Command::Synth { records, n, probes, profile, planted, vocab, eval } => {
            let s = &mut cfg.synth;
            if let Some(seed) = cfg.seed {
                s.seed = seed;
            }
            if let Some(r) = records {
                s.record_count = r;
            }
            if let Some(n) = n {
                s.n = n;
            }
            if let Some(p) = probes {
                s.probe_count = p;
            }
            if let Some(p) = profile {
                s.blur_profile = match p {
                    ProfileArg::Default => BlurProfile::default(),
                    ProfileArg::Maximal => BlurProfile::maximal(),
                    ProfileArg::Confident => BlurProfile::confident(),
                    ProfileArg::Chargeless => BlurProfile::chargeless(),
                };
            }
            if planted && s.planted.is_none() {
                s.planted = Some(PlantedStructure::default());
            }
            if vocab.is_some() {
                s.vocab_size = vocab;
            }
            s.with_eval |= eval;
            let out = cli.global.out.clone().unwrap_or_else(|| PathBuf::from("synth.bhg1"));
            let summary = dataset::synth(s, &out)?;
            println!("{} records, n={}, sha256 {} -> {}", summary.record_count, summary.n, summary.sha256, out.display());
        }
        Command::Holonomy { dataset, dense } => {
            if dense {
                cfg.holonomy.path = EvalPath::Dense;
            }
            analyse_and_write(&dataset, &cfg, &out_dir(&cli.global), Stage::Holonomy)?;
        }
        Command::Couple { dataset, target } => {
            if let Some(t) = target {
                cfg.coupling.target = match t {
                    TargetArg::Difference => CouplingTarget::Difference,
                    TargetArg::Rotated => CouplingTarget::Rotated,
                };
            }
            analyse_and_write(&dataset, &cfg, &out_dir(&cli.global), Stage::Couplings)?;
        }
        Command::Pca { dataset } => {
            analyse_and_write(&dataset, &cfg, &out_dir(&cli.global), Stage::Pca)?;
        }
        Command::Ablate { dataset, mode } => {
            let mode = match mode {
                AblationArg::RandomSoN => AblationMode::RandomSoN,
                AblationArg::RotateV1 => AblationMode::RotateV1,
                AblationArg::RotateV2 => AblationMode::RotateV2,
            };
            let seed = match mode {
                AblationMode::RandomSoN => Some(cfg.seed.context("random-so-n needs --seed")?),
                _ => None,
            };
            cfg.ablation = Some(AblationSpec::new(mode, seed)?);
            analyse_and_write(&dataset, &cfg, &out_dir(&cli.global), Stage::Full)?;
        }
        Command::Report { dir } => {
            let plots = render_plots(&dir)?;
            if plots.is_empty() {
                bail!("no CSV tables found in {}", dir.display());
            }
            for p in plots {
                println!("{}", p.display());
            }
        }
        Command::Run { dataset } => {
            let report = dataset::validate(&dataset)?;
            if !report.passed() {
                for c in report.failed_checks() {
                    eprintln!("validation failed: {} ({} failures)", c.name, c.failures);
                }
                return Ok(ExitCode::from(1));
            }
            analyse_and_write(&dataset, &cfg, &out_dir(&cli.global), Stage::Full)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invalid = e.chain().any(|c| c.downcast_ref::<blurgeom::Error>().is_some_and(|e| e.is_validation()));
            ExitCode::from(if invalid { 1 } else { 2 })
        }
    }
}
