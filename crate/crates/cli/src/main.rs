use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use loopperc_cli::config::{parse_assignment, parse_value, set_key};
use loopperc_cli::run::{execute, plan, write_artifacts};
use loopperc_cli::CliError;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "loopperc", version, about = "Loop soup and 2-bond percolation experiments on metric graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run whatever experiment the config file describes.
    Run(Common),
    /// Two-point connection probabilities at intensity 1/2.
    TwoPoint(Common),
    /// Occupation-time law at one vertex.
    Occupation(Common),
    /// Russo formula check for a connection event.
    Russo(Common),
    /// Covariance of increasing event pairs.
    Fkg(Common),
    /// f_n(eps) on a grid of radii and noise levels.
    FnCurve(Common),
    /// Coupled finite-difference slopes of f_n in eps.
    OdeScan(Common),
    /// f_n along an eps or alpha sweep.
    ThresholdScan(Common),
    /// Capacities of vertex sets (no sampling).
    Capacity(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default `results`).
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
    /// Shorthand for `--set experiment.alpha=...`.
    #[arg(long)]
    alpha: Option<f64>,
    /// Shorthand for `--set experiment.epsilon=...`.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Shorthand for `--set experiment.delta=...`.
    #[arg(long)]
    delta: Option<f64>,
    /// Override any key, e.g. `--set graph.radius=4` or `--set experiment.radii=[2,4]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Validate and print the plan without sampling.
    #[arg(long)]
    dry_run: bool,
}

fn build_config(kind: Option<&str>, args: &Common) -> Result<Value, CliError> {
    let mut value = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config { key: None, message: format!("{}: {e}", path.display()) })?;
            serde_json::from_str(&text).map_err(|e| CliError::Config { key: None, message: format!("malformed JSON in {}: {e}", path.display()) })?
        }
        None if kind.is_none() => return Err(CliError::Config { key: None, message: "`run` needs --config".into() }),
        None => Value::Object(Default::default()),
    };
    if !value.is_object() {
        return Err(CliError::Config { key: None, message: "config must be a JSON object".into() });
    }
    if let Some(kind) = kind {
        match value.pointer("/experiment/kind") {
            Some(Value::String(k)) if k != kind => {
                return Err(CliError::config("experiment.kind", format!("config describes `{k}`, subcommand asks for `{kind}`")));
            }
            _ => set_key(&mut value, "experiment.kind", Value::from(kind))?,
        }
    }
    let mut overrides: Vec<(String, Value)> = Vec::new();
    for (key, v) in [("seed", args.seed.map(Value::from)), ("replicas", args.replicas.map(Value::from)), ("threads", args.threads.map(Value::from))] {
        if let Some(v) = v {
            overrides.push((key.into(), v));
        }
    }
    if let Some(o) = &args.output {
        overrides.push(("output".into(), Value::from(o.to_string_lossy().into_owned())));
    }
    if let Some(l) = &args.label {
        overrides.push(("label".into(), Value::from(l.clone())));
    }
    for (key, v) in [("experiment.alpha", args.alpha), ("experiment.epsilon", args.epsilon), ("experiment.delta", args.delta)] {
        if let Some(v) = v {
            overrides.push((key.into(), Value::from(v)));
        }
    }
    for s in &args.set {
        overrides.push(parse_assignment(s)?);
    }
    for (k, v) in overrides {
        set_key(&mut value, &k, v)?;
    }
    Ok(value)
}

fn run(kind: Option<&str>, args: &Common) -> Result<(), CliError> {
    let cfg = parse_value(build_config(kind, args)?)?;
    if args.dry_run {
        let p = plan(&cfg)?;
        println!("{}", serde_json::to_string_pretty(&p).expect("plan serializes"));
        return Ok(());
    }
    let (seed, drawn) = match cfg.seed {
        Some(s) => (s, false),
        None => {
            let s = rand::random::<u64>();
            eprintln!("no seed given; drew seed {s}");
            (s, true)
        }
    };
    let outcome = execute(&cfg, seed)?;
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("results"));
    write_artifacts(&dir, &cfg, seed, drawn, &outcome)?;
    println!("{} seed={seed} config_hash={}", cfg.experiment.kind(), cfg.hash(seed));
    for r in &outcome.rows {
        match r.se {
            Some(se) => println!("  {:<24} {:.6} +- {:.6}", r.label, r.estimate, se),
            None => println!("  {:<24} {:.6}", r.label, r.estimate),
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Run(a) => (None, a),
        Command::TwoPoint(a) => (Some("two_point"), a),
        Command::Occupation(a) => (Some("occupation"), a),
        Command::Russo(a) => (Some("russo"), a),
        Command::Fkg(a) => (Some("fkg"), a),
        Command::FnCurve(a) => (Some("fn_curve"), a),
        Command::OdeScan(a) => (Some("ode_scan"), a),
        Command::ThresholdScan(a) => (Some("threshold_scan"), a),
        Command::Capacity(a) => (Some("capacity"), a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
