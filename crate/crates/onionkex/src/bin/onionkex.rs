//! Command-line front end: single protocol sessions, linkage experiments,
//! and the bundled validation suite.
//!
//! Exit codes: 0 on success, 1 when a run or validation check fails,
//! 2 on usage or configuration errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use onionkex::adversary::{run_sweep, sweep_to_csv, SweepConfig, SweepPoint};
use onionkex::oniontransport::{
    GuardPolicy, LatencyModel, NetworkConfig, SelectionPolicy,
};
use onionkex::runner::{run_session, SessionRun, SessionSetup};
use onionkex::validate::{run_all, DEFAULT_SUITE_SEED};

#[derive(Parser)]
#[command(
    name = "onionkex",
    about = "Fragmented key establishment over simulated onion circuits",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one two-endpoint key establishment session and write its artifacts.
    RunSession(RunSessionArgs),
    /// Run a Monte Carlo linkage sweep and emit CSV.
    Experiment(ExperimentArgs),
    /// Run the bundled validation suite.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunSessionArgs {
    /// Session configuration JSON (same shape as the written `setup.json`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Session identifier agreed by both endpoints.
    #[arg(long)]
    tagname: Option<String>,
    /// Key length in bits.
    #[arg(long)]
    key_type: Option<u32>,
    /// Number of fragments per endpoint.
    #[arg(long)]
    num_of_splits: Option<u32>,
    /// Whether fragment dispatch order is randomized per endpoint.
    #[arg(long)]
    shuffle: Option<bool>,
    /// Master seed; every actor derives its own stream from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Relay population size.
    #[arg(long)]
    relay_count: Option<usize>,
    /// Fraction of relays under adversary observation.
    #[arg(long)]
    compromised_fraction: Option<f64>,
    /// Charged milliseconds per public-key operation.
    #[arg(long)]
    crypto_stub_ms: Option<f64>,
    /// RSA modulus size in bits.
    #[arg(long)]
    rsa_bits: Option<usize>,
    /// Directory the artifacts are written into.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Master seed; every grid point derives its own sub-seed.
    #[arg(long)]
    seed: u64,
    /// Monte Carlo trials per grid point.
    #[arg(long)]
    trials: u64,
    /// Sweep configuration JSON overriding the default grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Relay population size for every point.
    #[arg(long)]
    relay_count: Option<usize>,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Suite seed.
    #[arg(long, default_value_t = DEFAULT_SUITE_SEED)]
    seed: u64,
}

/// A failure with its process exit code.
enum Failure {
    /// Bad flags or unreadable/invalid configuration.
    Usage(String),
    /// The run itself failed.
    Run(String),
}

impl Failure {
    fn report(self) -> ExitCode {
        match self {
            Failure::Usage(message) => {
                eprintln!("error: {message}");
                ExitCode::from(2)
            }
            Failure::Run(message) => {
                eprintln!("error: {message}");
                ExitCode::from(1)
            }
        }
    }
}

fn default_setup() -> SessionSetup {
    SessionSetup {
        tagname: "session-001".into(),
        key_type: 256,
        num_of_splits: 5,
        shuffle: true,
        network: NetworkConfig {
            relay_count: 10,
            compromised_fraction: Some(0.2),
            compromised_ids: None,
            weights: None,
            selection_policy: SelectionPolicy::Uniform,
            guard_policy: GuardPolicy::FreshPerCircuit,
            latency: LatencyModel {
                per_hop_ms: 50.0,
                circuit_build_ms: 2000.0,
                stabilization_ms: 500.0,
            },
            seed: 0,
        },
        seed: 42,
        crypto_stub_ms: 10.0,
        rsa_bits: 2048,
    }
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))
}

fn write_artifact(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    fs::write(&path, bytes)
        .map_err(|e| Failure::Run(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn write_session_artifacts(
    dir: &Path,
    setup: &SessionSetup,
    run: &SessionRun,
) -> Result<Vec<PathBuf>, Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Run(format!("cannot create {}: {e}", dir.display())))?;
    let mut observations = Vec::new();
    for record in &run.observations {
        let line = serde_json::to_string(record)
            .map_err(|e| Failure::Run(format!("cannot encode observation: {e}")))?;
        observations.extend_from_slice(line.as_bytes());
        observations.push(b'\n');
    }
    let setup_json = serde_json::to_string_pretty(setup)
        .map_err(|e| Failure::Run(format!("cannot encode setup: {e}")))?;
    let report = run.report.canonical_json();
    let text_file = |lines: &[String]| {
        if lines.is_empty() {
            String::new()
        } else {
            format!("{}\n", lines.join("\n"))
        }
    };
    Ok(vec![
        write_artifact(dir, "setup.json", format!("{setup_json}\n").as_bytes())?,
        write_artifact(dir, "report.json", format!("{report}\n").as_bytes())?,
        write_artifact(dir, "observations.jsonl", &observations)?,
        write_artifact(dir, "qkms_trace.txt", text_file(&run.qkms_trace).as_bytes())?,
        write_artifact(dir, "client_a_trace.txt", text_file(&run.client_a_trace).as_bytes())?,
        write_artifact(dir, "client_b_trace.txt", text_file(&run.client_b_trace).as_bytes())?,
        write_artifact(dir, "proxy_a_state.txt", run.proxy_a_state.as_bytes())?,
        write_artifact(dir, "proxy_b_state.txt", run.proxy_b_state.as_bytes())?,
    ])
}

fn run_session_command(args: RunSessionArgs) -> Result<ExitCode, Failure> {
    let mut setup = match &args.config {
        Some(path) => read_config::<SessionSetup>(path)?,
        None => default_setup(),
    };
    if let Some(tagname) = args.tagname {
        setup.tagname = tagname;
    }
    if let Some(key_type) = args.key_type {
        setup.key_type = key_type;
    }
    if let Some(num_of_splits) = args.num_of_splits {
        setup.num_of_splits = num_of_splits;
    }
    if let Some(shuffle) = args.shuffle {
        setup.shuffle = shuffle;
    }
    if let Some(seed) = args.seed {
        setup.seed = seed;
    }
    if let Some(relay_count) = args.relay_count {
        setup.network.relay_count = relay_count;
    }
    if let Some(fraction) = args.compromised_fraction {
        setup.network.compromised_fraction = Some(fraction);
    }
    if let Some(stub) = args.crypto_stub_ms {
        setup.crypto_stub_ms = stub;
    }
    if let Some(bits) = args.rsa_bits {
        setup.rsa_bits = bits;
    }

    let run = run_session(&setup).map_err(|e| Failure::Run(e.to_string()))?;
    let paths = write_session_artifacts(&args.out_dir, &setup, &run)?;

    let report = &run.report;
    println!(
        "tagname={} key_type={} num_of_splits={} shuffle={}",
        report.tagname, report.key_type, report.num_of_splits, report.shuffle
    );
    println!(
        "keys_match={} probe_round_trip={}",
        report.keys_match, report.probe_round_trip
    );
    for (label, endpoint) in [("client-a", &report.client_a), ("client-b", &report.client_b)] {
        println!(
            "{label}: fragments={} bundles={} distinct_delivery_circuits={} reconstructed={}",
            endpoint.fragments_received,
            endpoint.bundle_ids.len(),
            endpoint.distinct_delivery_circuits,
            endpoint.reconstructed
        );
    }
    println!(
        "timing: total={}ms transport={}ms crypto={}ms other={}ms transport_fraction={:.4}",
        report.timing.total_ms,
        report.timing.transport_ms,
        report.timing.crypto_ms,
        report.timing.other_ms,
        report.timing.transport_fraction
    );
    for path in paths {
        println!("wrote {}", path.display());
    }
    if report.keys_match && report.probe_round_trip {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Failure::Run("session did not establish matching keys".into()))
    }
}

fn default_points() -> Vec<SweepPoint> {
    let mut points = Vec::new();
    for guard_policy in [
        GuardPolicy::FreshPerCircuit,
        GuardPolicy::PinnedPerEndpoint,
        GuardPolicy::PinnedServiceSide,
    ] {
        for compromised_fraction in [0.2, 0.3, 0.5] {
            for circuits_per_session in [1usize, 2, 3] {
                points.push(SweepPoint {
                    guard_policy,
                    compromised_fraction,
                    circuits_per_session,
                });
            }
        }
    }
    points
}

fn run_experiment_command(args: ExperimentArgs) -> Result<ExitCode, Failure> {
    let mut config = match &args.config {
        Some(path) => read_config::<SweepConfig>(path)?,
        None => SweepConfig {
            relay_count: 10,
            trials: 0,
            seed: 0,
            points: default_points(),
        },
    };
    config.seed = args.seed;
    config.trials = args.trials;
    if let Some(relay_count) = args.relay_count {
        config.relay_count = relay_count;
    }

    let rows = run_sweep(&config).map_err(|e| Failure::Run(e.to_string()))?;
    let csv = sweep_to_csv(&rows);
    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| {
                    Failure::Run(format!("cannot create {}: {e}", parent.display()))
                })?;
            }
            fs::write(path, &csv)
                .map_err(|e| Failure::Run(format!("cannot write {}: {e}", path.display())))?;
            println!("wrote {} ({} rows)", path.display(), rows.len());
        }
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn run_validate_command(args: ValidateArgs) -> Result<ExitCode, Failure> {
    let outcome = run_all(args.seed);
    for criterion in &outcome.criteria {
        println!("{}", criterion.summary_line());
    }
    if outcome.all_passed() {
        println!("all criteria passed");
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Failure::Run("one or more criteria failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::RunSession(args) => run_session_command(args),
        Command::Experiment(args) => run_experiment_command(args),
        Command::Validate(args) => run_validate_command(args),
    };
    match result {
        Ok(code) => code,
        Err(failure) => failure.report(),
    }
}
