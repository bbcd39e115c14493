mod settings;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ranloc::detector::write_findings_jsonl;
use ranloc::event_model::{load_cells, load_events, QuarantineReport};
use ranloc::pipeline::{self, PipelineOptions};
use ranloc::simulator::{generate, ScenarioConfig};
use ranloc::{EventDataset, PipelineReport, ReportDocument};
use serde::Serialize;
use sha2::{Digest, Sha256};

use settings::{EffectiveSettings, FlagOverrides};

/// Location anomaly detection over RAN signaling events.
#[derive(Debug, Parser)]
#[command(name = "ranloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scenario: cells.csv, events.csv, ground_truth.csv.
    Simulate(SimulateArgs),
    /// Run detection; exits 0 when clean, 2 when anomalies were found.
    Detect(DetectArgs),
    /// Time detection with and without the NAS prefilter.
    Bench(BenchArgs),
    /// Per-day summary CSV over one or more event files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Flat TOML scenario file.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed from the scenario file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DetectorFlags {
    /// Optional TOML with detector settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    vmax: Option<f64>,
    #[arg(long)]
    dmin: Option<f64>,
    #[arg(long = "queue-n")]
    queue_n: Option<usize>,
    #[arg(long = "queue-m")]
    queue_m: Option<usize>,
    #[arg(long = "init-comp")]
    init_comp: Option<f64>,
    /// 0 uses all available processors.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

impl DetectorFlags {
    fn resolve(&self, prefilter: bool) -> Result<EffectiveSettings> {
        let flags = FlagOverrides {
            v_max_kmh: self.vmax,
            d_min_km: self.dmin,
            queue_n: self.queue_n,
            queue_m: self.queue_m,
            init_comp_km: self.init_comp,
        };
        let settings = EffectiveSettings::resolve(self.config.as_deref(), &flags, prefilter, self.workers)?;
        eprintln!("effective settings: {}", serde_json::to_string(&settings)?);
        Ok(settings)
    }
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    cells: PathBuf,
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "no-prefilter")]
    no_prefilter: bool,
    /// Leave cell ids out of findings.jsonl.
    #[arg(long)]
    redact: bool,
    #[command(flatten)]
    detector: DetectorFlags,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, requires = "events", conflicts_with = "scenario")]
    cells: Option<PathBuf>,
    #[arg(long, requires = "cells")]
    events: Option<PathBuf>,
    /// Generate the dataset in memory instead of reading files.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    detector: DetectorFlags,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    cells: PathBuf,
    /// One file per day; repeat the flag for several days.
    #[arg(long, required = true)]
    events: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "no-prefilter")]
    no_prefilter: bool,
    #[command(flatten)]
    detector: DetectorFlags,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Detect(a) => detect(a),
        Command::Bench(a) => bench(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut cfg = ScenarioConfig::from_toml_str(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn simulate(args: SimulateArgs) -> Result<u8> {
    let cfg = load_scenario(&args.scenario, args.seed)?;
    let scenario = generate(&cfg)?;
    for w in &scenario.warnings {
        eprintln!("warning: {w}");
    }
    let files = scenario.write_to(&args.out)?;
    let s = scenario.stats;
    let mut out = std::io::stdout().lock();
    writeln!(out, "seed,{}", cfg.seed)?;
    writeln!(out, "vehicles,{}", s.vehicles)?;
    writeln!(out, "cells,{}", s.cells)?;
    writeln!(out, "events,{}", s.events)?;
    writeln!(out, "nas_events,{}", s.nas_events)?;
    writeln!(out, "handovers,{}", s.handovers)?;
    writeln!(out, "reconnections,{}", s.reconnections)?;
    writeln!(out, "reconnection_ratio,{:.4}", s.reconnection_ratio())?;
    writeln!(out, "bounces,{}", s.bounces)?;
    writeln!(out, "spoofed_imsis,{}", s.spoofed)?;
    for path in [&files.cells, &files.events, &files.ground_truth] {
        writeln!(out, "sha256,{},{}", path.display(), sha256_file(path)?)?;
    }
    Ok(0)
}

fn load_dataset(cells: &Path, events: &Path) -> Result<(EventDataset, QuarantineReport)> {
    let catalog = load_cells::<f64>(cells).with_context(|| format!("in {}", cells.display()))?;
    let (ds, q) = load_events(events, catalog).with_context(|| format!("in {}", events.display()))?;
    if q.quarantined > 0 {
        eprintln!(
            "warning: {} of {} rows quarantined for unknown cells ({} distinct ids)",
            q.quarantined,
            q.total_rows,
            q.unknown_cells.len()
        );
    }
    Ok((ds, q))
}

fn run_pipeline(ds: &EventDataset, settings: &EffectiveSettings, prefilter: bool) -> Result<PipelineReport> {
    let cfg = settings.detector_config()?;
    let opts = PipelineOptions {
        prefilter,
        workers: settings.workers,
    };
    Ok(pipeline::run(ds, &cfg, opts)?)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    settings: &'a EffectiveSettings,
    ingest: &'a QuarantineReport,
    #[serde(flatten)]
    report: ReportDocument,
}

fn detect(args: DetectArgs) -> Result<u8> {
    let settings = args.detector.resolve(!args.no_prefilter)?;
    let (ds, quarantine) = load_dataset(&args.cells, &args.events)?;
    let report = run_pipeline(&ds, &settings, settings.prefilter)?;
    create_dir(&args.out)?;

    let path = args.out.join("report.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(
        &mut w,
        &ReportFile {
            settings: &settings,
            ingest: &quarantine,
            report: report.document(&ds),
        },
    )?;
    writeln!(w)?;
    w.flush()?;

    let path = args.out.join("findings.jsonl");
    let mut w = create(&path)?;
    write_findings_jsonl(&mut w, &ds, &report.findings, args.redact)?;
    w.flush()?;

    eprintln!(
        "events {} | active {} | after prefilter {} | flagged {} | findings {}",
        ds.len(),
        report.i_all.len(),
        report.i_nas.len(),
        report.i_final.len(),
        report.findings.len()
    );
    let mut out = std::io::stdout().lock();
    for imsi in report.i_final_names(&ds) {
        writeln!(out, "{imsi}")?;
    }
    Ok(if report.findings.is_empty() { 0 } else { 2 })
}

const BENCH_HEADER: &str = "events,imsis,i_all,i_nas,i_final,with_prefilter_s,without_prefilter_s,speedup";

fn bench(args: BenchArgs) -> Result<u8> {
    let settings = args.detector.resolve(true)?;
    let ds = match (&args.cells, &args.events, &args.scenario) {
        (Some(c), Some(e), None) => load_dataset(c, e)?.0,
        (None, None, Some(s)) => generate(&load_scenario(s, args.seed)?)?.dataset::<f64>()?,
        _ => bail!("bench needs either --cells and --events, or --scenario"),
    };
    let with = run_pipeline(&ds, &settings, true)?;
    let without = run_pipeline(&ds, &settings, false)?;
    let (a, b) = (with.timings.total_s, without.timings.total_s);
    let speedup = if a > 0.0 { b / a } else { f64::INFINITY };
    let row = format!(
        "{},{},{},{},{},{:.6},{:.6},{:.3}",
        ds.len(),
        ds.imsi_count(),
        with.i_all.len(),
        with.i_nas.len(),
        with.i_final.len(),
        a,
        b,
        speedup
    );
    create_dir(&args.out)?;
    let path = args.out.join("bench.csv");
    let mut w = create(&path)?;
    writeln!(w, "{BENCH_HEADER}")?;
    writeln!(w, "{row}")?;
    w.flush()?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{BENCH_HEADER}")?;
    writeln!(out, "{row}")?;
    Ok(0)
}

const SUMMARY_HEADER: &str = "day,events,active_imsis,i_nas,i_final,findings,mean_c_out_km";

fn report(args: ReportArgs) -> Result<u8> {
    let settings = args.detector.resolve(!args.no_prefilter)?;
    let mut rows = Vec::with_capacity(args.events.len());
    for events in &args.events {
        let day = events
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| events.display().to_string());
        let (ds, _) = load_dataset(&args.cells, events)?;
        let r = run_pipeline(&ds, &settings, settings.prefilter)?;
        rows.push(format!(
            "{},{},{},{},{},{},{}",
            day,
            ds.len(),
            r.i_all.len(),
            r.i_nas.len(),
            r.i_final.len(),
            r.findings.len(),
            r.mean_c_out_km.map(|v| format!("{v:.4}")).unwrap_or_default()
        ));
    }
    create_dir(&args.out)?;
    let path = args.out.join("summary.csv");
    let mut w = create(&path)?;
    let mut out = std::io::stdout().lock();
    for line in std::iter::once(SUMMARY_HEADER.to_owned()).chain(rows) {
        writeln!(w, "{line}")?;
        writeln!(out, "{line}")?;
    }
    w.flush()?;
    Ok(0)
}
