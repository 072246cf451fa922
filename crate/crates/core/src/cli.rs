//! Command-line front end: `equilibrium`, `simulate`, `optimize`, `report`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Once;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::TighteningVector;
use crate::campaign::{
    run_campaign_with, CampaignConfig, CascadeObjective, Checkpoint, Control,
};
use crate::cascade::{
    estimate_severity, failure_histogram, failure_order_matrix, RateModel, SeverityEstimate,
    SimulationOptions, DEFAULT_SIMULATIONS, DEFAULT_T_MAX,
};
use crate::error::{Error, Result};
use crate::grid::{parse_case, Network, CASE30};
use crate::powerflow::solve_equilibrium;
use crate::report;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERRUPTED: i32 = 130;

/// Modelling substitutions recorded in every run manifest.
pub const SUBSTITUTIONS: [&str; 5] = [
    "equilibrium: DC optimal power flow with piecewise-linear generator costs, solved by simplex, in place of AC optimal power flow",
    "cascade rates: overload-exponential rate law armed above a loading threshold, in place of a large-deviations rate computation",
    "load rebalancing: generators share imbalance in proportion to headroom; short islands shed load proportionally",
    "constrained acquisition: log-barrier interior-point method with quasi-Newton inner solves, in place of a trust-region interior-point method",
    "acquisition restarts: 16 scrambled Sobol starting points per acquisition",
];

#[derive(Debug, Parser)]
#[command(name = "cascadebo", version, about = "Search for undetectable line-limit tightening attacks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the least-cost dispatch and print flows, limits and margins.
    Equilibrium(EquilibriumArgs),
    /// Estimate cascade severity for one tightening vector.
    Simulate(SimulateArgs),
    /// Run an attack campaign described by a config file.
    Optimize(OptimizeArgs),
    /// Compare records files from several campaigns.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct EquilibriumArgs {
    /// MATPOWER case file or network JSON; defaults to the bundled 30-bus case.
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// Write equilibrium.json here instead of printing it.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Min,
    Max,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("attack").required(true).args(["x", "preset"])))]
pub struct SimulateArgs {
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// JSON array with one tightening value per line.
    #[arg(long)]
    pub x: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, default_value_t = DEFAULT_SIMULATIONS)]
    pub simulations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_T_MAX)]
    pub t_max: f64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// TOML campaign configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// records.jsonl files, one per campaign.
    #[arg(required = true)]
    pub records: Vec<PathBuf>,
    /// Write report.csv, nonzero.csv and walltime.csv here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: CampaignConfig,
    pub case_source: String,
    pub case_sha256: String,
    pub substitutions: Vec<String>,
    pub resumed: bool,
    pub records: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Serialize)]
struct EquilibriumOutput {
    base_mva: f64,
    objective_cost: f64,
    generation: Vec<f64>,
    angles: Vec<f64>,
    flows: Vec<f64>,
    limits: Vec<f64>,
    margins: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct SeverityOutput<'a> {
    seed: u64,
    t_max: f64,
    l1_norm: f64,
    rate_model: RateModel,
    #[serde(flatten)]
    estimate: &'a SeverityEstimate,
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);
static HANDLER: Once = Once::new();

fn install_interrupt_handler() {
    HANDLER.call_once(|| {
        if let Err(e) = ctrlc::set_handler(|| INTERRUPTED.store(true, Ordering::SeqCst)) {
            log::warn!("could not install interrupt handler: {e}");
        }
    });
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Equilibrium(a) => cmd_equilibrium(&a),
        Command::Simulate(a) => with_workers(a.workers, || cmd_simulate(&a)),
        Command::Optimize(a) => with_workers(a.workers, || cmd_optimize(&a)),
        Command::Report(a) => cmd_report(&a),
    }
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => f(),
        Some(0) => Err(Error::InvalidArgument("--workers must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(f),
    }
}

/// Loads a case file (MATPOWER text, or JSON by extension) or the bundled case.
pub fn load_case(path: Option<&Path>) -> Result<(Network, String, String)> {
    let Some(path) = path else {
        return Ok((crate::grid::case30(), "bundled:case30".into(), CASE30.into()));
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let network = if path.extension().is_some_and(|e| e == "json") {
        let n = Network::from_json(&text)?;
        let violations = n.validate();
        if let Some(v) = violations.first() {
            return Err(Error::InfeasibleCase(format!("{v:?}")));
        }
        n
    } else {
        parse_case(&text)?
    };
    Ok((network, path.display().to_string(), text))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

fn to_json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn cmd_equilibrium(args: &EquilibriumArgs) -> Result<i32> {
    let (network, _, _) = load_case(args.case.as_deref())?;
    let eq = solve_equilibrium(&network)?;
    let limits = network.ratings();
    let out = EquilibriumOutput {
        base_mva: network.base_mva,
        objective_cost: eq.objective_cost,
        generation: eq.generation.clone(),
        angles: eq.angles.clone(),
        margins: eq.flows.iter().zip(&limits).map(|(f, l)| l - f.abs()).collect(),
        flows: eq.flows,
        limits,
    };
    let bytes = to_json_bytes(&out)?;
    match &args.out_dir {
        Some(dir) => {
            ensure_dir(dir)?;
            report::write_atomic(&dir.join("equilibrium.json"), &bytes)?;
        }
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(EXIT_OK)
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let (network, _, _) = load_case(args.case.as_deref())?;
    let n = network.num_lines();
    let x = match (args.preset, &args.x) {
        (Some(Preset::Min), _) => TighteningVector::zeros(n),
        (Some(Preset::Max), _) => TighteningVector::ones(n),
        (None, Some(path)) => TighteningVector::new(read_vector(path)?)?,
        (None, None) => return Err(Error::InvalidArgument("need --x or --preset".into())),
    };
    x.check_len(n)?;
    let eq = solve_equilibrium(&network)?;
    let model = RateModel::default();
    let options = SimulationOptions {
        simulations: args.simulations,
        t_max: args.t_max,
    };
    let est = estimate_severity(&network, &x, &eq, &model, &options, args.seed)?;
    ensure_dir(&args.out_dir)?;
    let out = SeverityOutput {
        seed: args.seed,
        t_max: args.t_max,
        l1_norm: x.l1_norm(),
        rate_model: model,
        estimate: &est,
    };
    report::write_atomic(&args.out_dir.join("severity.json"), &to_json_bytes(&out)?)?;
    report::write_traces(&args.out_dir.join("traces.jsonl"), &est.traces)?;
    report::write_histogram(
        &args.out_dir.join("histogram.csv"),
        &failure_histogram(&est.traces, n),
    )?;
    report::write_failure_order(
        &args.out_dir.join("failure_order.csv"),
        &failure_order_matrix(&est.traces, n),
    )?;
    log::info!(
        "mean failures {:.4} (se {:.4}) over {} cascades",
        est.mean_failures,
        est.std_error,
        est.num_simulations
    );
    Ok(EXIT_OK)
}

fn flush_campaign(dir: &Path, cp: &Checkpoint) -> Result<()> {
    report::write_atomic(&dir.join("checkpoint.json"), cp.to_json()?.as_bytes())?;
    report::write_jsonl(&dir.join("records.jsonl"), &cp.records)?;
    report::write_timings(&dir.join("timings.csv"), &cp.records)?;
    Ok(())
}

pub fn cmd_optimize(args: &OptimizeArgs) -> Result<i32> {
    let started = unix_now();
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    let mut config = CampaignConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let (network, case_source, case_text) = load_case(args.case.as_deref())?;
    let objective = CascadeObjective::new(&network, &config)?;
    ensure_dir(&args.out_dir)?;
    let checkpoint_path = args.out_dir.join("checkpoint.json");
    let resume = if args.resume {
        let text = fs::read_to_string(&checkpoint_path)
            .map_err(|e| Error::Io(format!("{}: {e}", checkpoint_path.display())))?;
        Some(Checkpoint::from_json(&text)?)
    } else {
        None
    };
    install_interrupt_handler();
    let dir = args.out_dir.clone();
    let mut flush = |cp: &Checkpoint| flush_campaign(&dir, cp);
    let outcome = run_campaign_with(
        &config,
        &objective,
        resume,
        Control {
            interrupt: Some(&INTERRUPTED),
            stop_after: args.stop_after,
            on_progress: Some(&mut flush),
        },
    )?;
    flush_campaign(&args.out_dir, &outcome.checkpoint)?;
    if outcome.interrupted {
        eprintln!(
            "interrupted after {} of {} evaluations; resume with --resume",
            outcome.records().len(),
            config.total_evals()
        );
        return Ok(EXIT_INTERRUPTED);
    }
    report::write_progression(&args.out_dir.join("progression.csv"), outcome.records())?;
    report::write_atomic(&args.out_dir.join("best.json"), &to_json_bytes(&outcome.best)?)?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        case_source,
        case_sha256: hex::encode(Sha256::digest(case_text.as_bytes())),
        substitutions: SUBSTITUTIONS.iter().map(|s| s.to_string()).collect(),
        resumed: args.resume,
        records: outcome.records().len(),
        started_unix: started,
        finished_unix: unix_now(),
    };
    report::write_atomic(&args.out_dir.join("manifest.json"), &to_json_bytes(&manifest)?)?;
    if let Some(best) = &outcome.best {
        log::info!(
            "best attack: record {} objective {:.4} l1 {:.4}",
            best.index,
            best.raw_objective,
            best.l1_norm
        );
    }
    Ok(EXIT_OK)
}

pub fn cmd_report(args: &ReportArgs) -> Result<i32> {
    let experiments = args
        .records
        .iter()
        .map(|p| report::Experiment::load(p))
        .collect::<Result<Vec<_>>>()?;
    let rep = report::build_report(experiments);
    print!("{}", report::render_table(&rep.rows));
    if let Some(dir) = &args.out_dir {
        ensure_dir(dir)?;
        report::write_csv(&dir.join("report.csv"), &rep.rows)?;
        report::write_csv(&dir.join("nonzero.csv"), &rep.nonzero)?;
        report::write_csv(&dir.join("walltime.csv"), &rep.wall_times)?;
    }
    if !rep.wall_times.is_empty() {
        println!();
        for w in &rep.wall_times {
            println!(
                "{}: {} evaluations, mean {:.3}s, median {:.3}s, total {:.1}s",
                w.experiment, w.evaluations, w.mean, w.median, w.total
            );
        }
    }
    if !rep.mismatches.is_empty() {
        for m in &rep.mismatches {
            eprintln!(
                "{} record {}: stored {} = {}, recomputed {}",
                m.file.display(),
                m.index,
                m.field,
                m.stored,
                m.recomputed
            );
        }
        return Err(Error::Integrity(format!(
            "{} stored field(s) disagree with recomputation",
            rep.mismatches.len()
        )));
    }
    Ok(EXIT_OK)
}
