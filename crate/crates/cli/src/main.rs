use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kicked_hj::experiment::{
    cmd_hessian, cmd_hyperbolic, cmd_lyapunov_sweep, cmd_markov_check, cmd_partition_trace, cmd_selftest,
    cmd_weak_kam, exit_code, ExperimentConfig, Failure, Fault, Report, KEYS,
};
use kicked_hj::{Error, Result};

/// Numerical experiments for the viscous kicked Hamilton-Jacobi equation on the torus.
///
/// Any configuration key can also be given as `--key value` (for example
/// `--nu-list 0.05,0.02` or `--n_per_axis 512`) or as `--set key=value`.
#[derive(Parser, Debug)]
#[command(name = "kicked-hj", version)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Configuration override `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Weak KAM solution, gradients, cut locus and contraction report.
    WeakKam,
    /// Hyperbolic data of the fixed point at the origin.
    Hyperbolic,
    /// Action Hessian determinants along backward orbits.
    Hessian,
    /// Decay rate across the viscosity list.
    LyapunovSweep,
    /// Partition function trace on the domain partition.
    PartitionTrace,
    /// Markov layer identities and the drift/minorization certificate.
    MarkovCheck,
    /// Invariant suite on a reduced grid.
    Selftest {
        /// Corrupt an intermediate result to confirm the suite can fail.
        #[arg(long, value_name = "FAULT")]
        inject_fault: Option<Fault>,
    },
}

/// Splits `--key value` pairs naming configuration keys out of the argument list.
fn extract_key_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut pairs = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let key = arg.strip_prefix("--").map(|flag| match flag.split_once('=') {
            Some((k, v)) => (k.replace('-', "_"), Some(v.to_string())),
            None => (flag.replace('-', "_"), None),
        });
        match key {
            Some((k, inline)) if KEYS.contains(&k.as_str()) && k != "seed" => {
                match inline.or_else(|| it.next()) {
                    Some(v) => pairs.push((k, v)),
                    None => rest.push(arg),
                }
            }
            _ => rest.push(arg),
        }
    }
    (rest, pairs)
}

fn load_config(cli: &Cli, key_overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{s}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for (k, v) in key_overrides {
        cfg.set(k, v)?;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> Result<Report> {
    match &cli.command {
        Command::WeakKam => cmd_weak_kam(cfg),
        Command::Hyperbolic => cmd_hyperbolic(cfg),
        Command::Hessian => cmd_hessian(cfg),
        Command::LyapunovSweep => cmd_lyapunov_sweep(cfg),
        Command::PartitionTrace => cmd_partition_trace(cfg),
        Command::MarkovCheck => cmd_markov_check(cfg),
        Command::Selftest { inject_fault } => cmd_selftest(cfg, *inject_fault),
    }
}

fn main() -> ExitCode {
    let (args, key_overrides) = extract_key_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    let outcome = load_config(&cli, &key_overrides).and_then(|cfg| run(&cli, &cfg));
    match &outcome {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            match &report.failure {
                Some(Failure::Numerical(m)) => eprintln!("numerical failure: {m}"),
                Some(Failure::Acceptance(m)) => eprintln!("check failed: {m}"),
                None => {}
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&outcome) as u8)
}
