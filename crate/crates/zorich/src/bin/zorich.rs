use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zorich::args::{ParamRange, Plane, Window};
use zorich::run::load_map;
use zorich::{run_with_env_threads, Experiment, MapSource, RunConfig, RunError};
use zorich_core::symbolic::Itinerary;

#[derive(Parser)]
#[command(name = "zorich", version, about = "Numerical experiments with Zorich maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// derive, render-slice, trace-hair, endpoint, classify, boxdim,
    /// mcmullen, karpinska, access-path or family7.
    experiment: Experiment,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target contraction factor when deriving the map.
    #[arg(long)]
    alpha: Option<f64>,
    /// Grid resolution of the derivative sampling.
    #[arg(long)]
    resolution: Option<usize>,
    /// Map configuration JSON, as written by `derive`.
    #[arg(long, conflicts_with_all = ["alpha", "resolution"])]
    map: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Slice plane, e.g. x2=0.
    #[arg(long)]
    plane: Option<Plane>,
    /// Comma-separated lo:hi intervals.
    #[arg(long)]
    window: Option<Window>,
    /// Image side in pixels.
    #[arg(long)]
    pixels: Option<usize>,
    /// Iteration budget per orbit.
    #[arg(long)]
    budget: Option<usize>,
    /// Itinerary as JSON.
    #[arg(long)]
    itinerary: Option<String>,
    /// Parameter range lo:hi:n (a single value for karpinska).
    #[arg(long, allow_hyphen_values = true)]
    t: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Box-count target: calibration, julia or tube.
    #[arg(long)]
    set: Option<String>,
    /// Dyadic exponents lo:hi of the box-count scales.
    #[arg(long)]
    scales: Option<String>,
    /// Point x1,x2,x3 to classify; repeatable.
    #[arg(long = "point", allow_hyphen_values = true)]
    points: Vec<String>,
}

fn parse_point(text: &str) -> Result<[f64; 3], RunError> {
    let v: Vec<f64> = text
        .split(',')
        .map(|c| c.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| RunError::Config(format!("bad point {text:?}")))?;
    <[f64; 3]>::try_from(v).map_err(|_| RunError::Config(format!("a point has three coordinates: {text:?}")))
}

fn build(a: RunArgs) -> Result<RunConfig, RunError> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
            let c = RunConfig::from_json(&text)?;
            if c.experiment != a.experiment {
                return Err(RunError::Config(format!("config is for {}, not {}", c.experiment, a.experiment)));
            }
            c
        }
        None => RunConfig::new(a.experiment),
    };
    if let Some(path) = &a.map {
        cfg.map = load_map(path)?;
    } else if a.alpha.is_some() || a.resolution.is_some() {
        let (alpha0, res0) = match cfg.map {
            MapSource::Derive { alpha, resolution } => (alpha, resolution),
            MapSource::Config(_) => (0.5, 512),
        };
        cfg.map = MapSource::Derive { alpha: a.alpha.unwrap_or(alpha0), resolution: a.resolution.unwrap_or(res0) };
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = a.out {
        cfg.out = o;
    }
    let p = &mut cfg.params;
    if let Some(v) = a.plane {
        p.plane = Some(v.to_string());
    }
    if let Some(v) = a.window {
        p.window = Some(v.to_string());
    }
    if let Some(v) = a.itinerary {
        let s: Itinerary = serde_json::from_str(&v).map_err(|e| RunError::Config(format!("itinerary: {e}")))?;
        s.validate().map_err(RunError::config)?;
        p.itinerary = Some(s);
    }
    if let Some(v) = a.t {
        if a.experiment != Experiment::Karpinska {
            v.parse::<ParamRange>().map_err(|e| RunError::Config(format!("t: {e}")))?;
        }
        p.t = Some(v);
    }
    p.pixels = a.pixels.or(p.pixels);
    p.budget = a.budget.or(p.budget);
    p.tol = a.tol.or(p.tol);
    p.samples = a.samples.or(p.samples);
    p.k_max = a.k_max.or(p.k_max);
    p.depth = a.depth.or(p.depth);
    p.rho = a.rho.or(p.rho);
    p.set = a.set.or(p.set.take());
    p.scales = a.scales.or(p.scales.take());
    if !a.points.is_empty() {
        p.points = Some(a.points.iter().map(|s| parse_point(s)).collect::<Result<_, _>>()?);
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let Command::Run(args) = cli.command;
    let outcome = build(args).and_then(|cfg| run_with_env_threads(&cfg));
    match outcome {
        Ok(s) => {
            println!("{}: {} [{}]", s.experiment, s.summary, if s.passed { "ok" } else { "INVARIANT FAILED" });
            println!("report: {}", s.report.display());
            ExitCode::from(if s.passed { 0 } else { 2 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
