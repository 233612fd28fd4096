use clap::{Parser, Subcommand};
use m3cond::config::{config_hash, load_config, ConditionConfig, SimulateConfig, ValidateConfig};
use m3cond::model::family_diagnostics;
use m3cond::study::{run_study, StudyConfig};
use m3cond::uncond::replicate_rng;
use m3cond::{Error, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

/// Conditional simulation of mixed moving maxima processes.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unconditional fields at the configured sites (fields.csv).
    Simulate(Args),
    /// Predictive at t0 given the data (predictive.csv, scenarios.json, paths.csv).
    Condition(Args),
    /// Replicated prediction study (report.json, table.csv, replicates.csv).
    Study(Args),
    /// Diagnostics of the configured shape family (diagnostics.json).
    Validate(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Serialize)]
struct ErrorInfo {
    name: String,
    message: String,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    status: &'static str,
    error: Option<ErrorInfo>,
    config: String,
    config_sha256: Option<String>,
    seed: Option<u64>,
    threads: usize,
    versions: BTreeMap<&'static str, &'static str>,
    files: Vec<String>,
    seconds: BTreeMap<String, f64>,
}

struct Run {
    out: PathBuf,
    files: Vec<String>,
    seed: Option<u64>,
    seconds: BTreeMap<String, f64>,
}

impl Run {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.out.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn simulate(path: &Path, run: &mut Run) -> Result<()> {
    let c: SimulateConfig = load_config(path)?;
    run.seed = Some(c.seed);
    let model = c.model.build(c.seed)?;
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(c.sites.iter().map(|t| t.to_string()))?;
        for k in 0..c.n {
            let v = model.simulate(&c.sites, &mut replicate_rng(c.seed, k as u64))?;
            w.write_record(v.iter().map(|x| x.to_string()))?;
        }
        w.flush()?;
    }
    run.write("fields.csv", &buf)
}

fn condition(path: &Path, run: &mut Run) -> Result<()> {
    let c: ConditionConfig = load_config(path)?;
    run.seed = Some(c.seed);
    let grid = c.paths.as_ref().map(|p| p.grid()).transpose()?;
    let model = c.model.build(c.seed)?;
    let obs = c.observations()?;
    let cfg = c.conditional();
    run.write("scenarios.json", model.scenario_json(&obs, cfg)?.as_bytes())?;
    let pred = model.predictive(&obs, c.t0, cfg, c.draws, c.seed)?;
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record([c.t0.to_string()])?;
        for d in &pred.draws {
            w.write_record([d.to_string()])?;
        }
        w.flush()?;
    }
    run.write("predictive.csv", &buf)?;
    if let (Some(p), Some(grid)) = (&c.paths, grid) {
        let paths = model.paths(&obs, &grid, cfg, p.n, m3cond::config::derive_seed(c.seed, "paths"))?;
        let mut buf = Vec::new();
        m3cond::conditional::write_paths_csv(&grid, &paths, &mut buf)?;
        run.write("paths.csv", &buf)?;
    }
    Ok(())
}

fn study(path: &Path, run: &mut Run) -> Result<()> {
    let c: StudyConfig = load_config(path)?;
    run.seed = Some(c.seed);
    let outcome = run_study(&c)?;
    run.seconds = outcome.seconds;
    let r = &outcome.report;
    run.write("report.json", r.summary_json()?.as_bytes())?;
    let mut buf = Vec::new();
    r.write_table_csv(&mut buf)?;
    run.write("table.csv", &buf)?;
    let mut buf = Vec::new();
    r.write_rows_csv(&mut buf)?;
    run.write("replicates.csv", &buf)?;
    for m in &r.methods {
        if m.failed > 0 {
            log::warn!("{}: {} of {} replicates failed", m.method.label(), m.failed, r.replicates);
        }
    }
    Ok(())
}

fn validate(path: &Path, run: &mut Run) -> Result<()> {
    let c: ValidateConfig = load_config(path)?;
    run.seed = Some(c.seed);
    let model = c.model.build(c.seed)?;
    let d = family_diagnostics(model.family());
    for w in &d.warnings {
        log::warn!("{w}");
    }
    run.write("diagnostics.json", serde_json::to_string_pretty(&d)?.as_bytes())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = cli.threads.unwrap_or(0);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(1);
    }
    type Handler = fn(&Path, &mut Run) -> Result<()>;
    let (name, args, f): (&str, &Args, Handler) = match &cli.command {
        Command::Simulate(a) => ("simulate", a, simulate),
        Command::Condition(a) => ("condition", a, condition),
        Command::Study(a) => ("study", a, study),
        Command::Validate(a) => ("validate", a, validate),
    };
    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return ExitCode::from(1);
    }
    let mut run = Run { out: args.out.clone(), files: Vec::new(), seed: None, seconds: BTreeMap::new() };
    let start = Instant::now();
    let result = f(&args.config, &mut run);
    run.seconds.insert("total".into(), start.elapsed().as_secs_f64());

    let (status, error, code) = match &result {
        Ok(()) => ("ok", None, 0),
        Err(e) => {
            match e {
                Error::Config { path, message } => eprintln!("config error at {path}: {message}"),
                other => eprintln!("error: {} ({other})", other.name()),
            }
            let code = if matches!(e, Error::Config { .. }) { 2 } else { 1 };
            ("error", Some(ErrorInfo { name: e.name().to_string(), message: e.to_string() }), code)
        }
    };
    let versions = BTreeMap::from([("m3cond", env!("CARGO_PKG_VERSION"))]);
    let manifest = Manifest {
        command: name.to_string(),
        status,
        error,
        config: args.config.display().to_string(),
        config_sha256: fs::read(&args.config).ok().map(|b| config_hash(&b)),
        seed: run.seed,
        threads: rayon::current_num_threads(),
        versions,
        files: run.files,
        seconds: run.seconds,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    if let Err(e) = fs::write(args.out.join("manifest.json"), text) {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(code)
}
