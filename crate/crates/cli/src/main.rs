//! `mqlearn`: learn broker models, cross-check them and replay the differences.
//!
//! Exit codes: 0 success or equivalent, 1 diffs found (or another failure),
//! 2 usage error, 3 transport error, 4 nondeterminism detected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use mqlearn::crosscheck::{format_report, parse_filters, parse_report, CrossCheckError};
use mqlearn::learner::LearnError;
use mqlearn::mqtt::{extract_reference_model, mappers, serve, sim_sul, tcp_sul, MutantId};
use mqlearn::oracles::{OracleError, RandomWalkOracle, WMethodOracle};
use mqlearn::sul::{broker_timeout, Mapper, Sul, SulError, Target};
use mqlearn::{
    apply_filters, confirm, cross_check, learn, EquivalenceOracle, LearnLimits, MealyMachine,
    RandomWalkConfig, Verdict,
};

#[derive(Parser)]
#[command(
    name = "mqlearn",
    version,
    about = "Learning-based differential testing of MQTT brokers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    RandomWalk,
    WMethod,
}

#[derive(clap::Args)]
struct OracleArgs {
    /// Equivalence oracle.
    #[arg(long, value_enum, default_value = "random-walk")]
    oracle: OracleKind,
    /// Random walk: probability of a reset after each step.
    #[arg(long, default_value_t = 0.05)]
    reset_prob: f64,
    /// Random walk: step budget per equivalence query.
    #[arg(long, default_value_t = 10_000)]
    max_steps: u64,
    /// Random walk: renew the step budget after every counterexample.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    reset_on_ce: bool,
    /// Random walk: RNG seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// W-method: number of extra states the suite is complete for.
    #[arg(long, default_value_t = 2)]
    depth: usize,
}

#[derive(clap::Args)]
struct TransportArgs {
    /// Per-step receive timeout for tcp:// targets.
    #[arg(long, default_value_t = 100)]
    timeout_ms: u64,
    /// Take the timeout from a known broker profile (activemq, emqttd, hbmqtt,
    /// mosquitto, vernemq) instead of --timeout-ms.
    #[arg(long)]
    timeout_profile: Option<String>,
}

impl TransportArgs {
    fn timeout(&self) -> Result<Duration, CliError> {
        if let Some(name) = &self.timeout_profile {
            return broker_timeout(name)
                .ok_or_else(|| CliError::Usage(format!("unknown timeout profile {name:?}")));
        }
        if self.timeout_ms == 0 {
            return Err(CliError::Usage("--timeout-ms must be positive".into()));
        }
        Ok(Duration::from_millis(self.timeout_ms))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Learn a Mealy-machine model of a target.
    Learn {
        /// `sim:<broker>` or `tcp://host:port`.
        target: String,
        #[arg(long)]
        mapper: String,
        #[command(flatten)]
        oracle: OracleArgs,
        #[command(flatten)]
        transport: TransportArgs,
        /// Stop after this many equivalence queries.
        #[arg(long)]
        max_rounds: Option<usize>,
        /// Model file; the DOT graph and report are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two learned models and report every difference.
    Crosscheck {
        model_a: PathBuf,
        model_b: PathBuf,
        /// Differences allowed along one trace before it stops.
        #[arg(long, default_value_t = 1)]
        max_diffs: usize,
        /// File of input patterns whose diffs are hidden.
        #[arg(long)]
        filters: Option<PathBuf>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a diff report on two targets and classify each diff.
    Replay {
        diff_file: PathBuf,
        target_a: String,
        target_b: String,
        #[arg(long)]
        mapper: String,
        #[command(flatten)]
        transport: TransportArgs,
    },
    /// Build the exact model of a simulated broker by exhaustive exploration.
    Extract {
        broker: String,
        #[arg(long)]
        mapper: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a simulated broker over TCP until interrupted.
    Serve {
        broker: String,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 1883)]
        port: u16,
    },
}

#[derive(Debug)]
enum CliError {
    Failure(String),
    Usage(String),
    Transport(String),
    Nondeterminism(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Transport(_) => 3,
            CliError::Nondeterminism(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Failure(m)
            | CliError::Usage(m)
            | CliError::Transport(m)
            | CliError::Nondeterminism(m) => m,
        }
    }
}

impl From<SulError> for CliError {
    fn from(err: SulError) -> Self {
        match err {
            SulError::Transport(m) => CliError::Transport(m),
            SulError::Nondeterminism(w) => {
                CliError::Nondeterminism(format!("nondeterministic behaviour observed\n{w}"))
            }
            SulError::UnknownInput(_) => CliError::Usage(err.to_string()),
        }
    }
}

impl From<LearnError> for CliError {
    fn from(err: LearnError) -> Self {
        if let Some(w) = err.nondeterminism() {
            return CliError::Nondeterminism(format!("nondeterministic behaviour observed\n{w}"));
        }
        match err {
            LearnError::Sul(e) | LearnError::Oracle(OracleError::Sul(e)) => e.into(),
            LearnError::Oracle(e @ OracleError::AlphabetMismatch { .. })
            | LearnError::Oracle(e @ OracleError::InvalidConfig(_)) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Failure(other.to_string()),
        }
    }
}

fn mapper(name: &str) -> Result<Mapper, CliError> {
    mappers::by_name(name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown mapper {name:?}; known mappers: {}",
            mappers::MAPPER_NAMES.join(", ")
        ))
    })
}

fn broker(name: &str) -> Result<MutantId, CliError> {
    name.parse().map_err(CliError::Usage)
}

fn open_target(target: &str, mapper: Mapper, timeout: Duration) -> Result<Box<dyn Sul>, CliError> {
    match target.parse::<Target>().map_err(CliError::Usage)? {
        Target::Sim(name) => Ok(Box::new(sim_sul(broker(&name)?, mapper))),
        Target::Tcp(addr) => Ok(Box::new(tcp_sul(&addr, mapper, timeout)?)),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<MealyMachine, CliError> {
    MealyMachine::deserialize(&read(path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_model(machine: &MealyMachine, out: &Path) -> Result<(), CliError> {
    write(out, &machine.serialize())?;
    write(&out.with_extension("dot"), &machine.to_dot())
}

fn cmd_learn(
    target: &str,
    mapper_name: &str,
    oracle_args: &OracleArgs,
    transport: &TransportArgs,
    max_rounds: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let mapper = mapper(mapper_name)?;
    let timeout = transport.timeout()?;
    let is_tcp = target.starts_with("tcp://");
    let mut oracle: Box<dyn EquivalenceOracle> = match oracle_args.oracle {
        OracleKind::RandomWalk => Box::new(
            RandomWalkOracle::new(RandomWalkConfig {
                reset_probability: oracle_args.reset_prob,
                max_steps: oracle_args.max_steps,
                reset_on_ce: oracle_args.reset_on_ce,
                seed: oracle_args.seed,
            })
            .map_err(|e| CliError::Usage(e.to_string()))?,
        ),
        OracleKind::WMethod => Box::new(WMethodOracle::new(oracle_args.depth)),
    };
    let sul = open_target(target, mapper, timeout)?;
    let limits = LearnLimits {
        max_rounds,
        max_queries: None,
    };
    let outcome = learn(sul, oracle.as_mut(), &limits)?;
    write_model(&outcome.machine, out)?;

    let mut report = String::new();
    let _ = writeln!(report, "target: {target}");
    let _ = writeln!(report, "mapper: {mapper_name}");
    for (key, value) in oracle.describe() {
        let _ = writeln!(report, "{key}: {value}");
    }
    if is_tcp {
        let _ = writeln!(report, "timeout_ms: {}", timeout.as_millis());
    }
    let _ = writeln!(report, "model: {}", out.display());
    let _ = writeln!(report, "verified: {}", outcome.verified);
    report.push_str(&outcome.statistics.to_report());
    let _ = writeln!(report, "exit_status: 0");
    write(&out.with_extension("report"), &report)?;
    print!("{report}");
    Ok(())
}

fn cmd_crosscheck(
    a: &Path,
    b: &Path,
    max_diffs: usize,
    filters: Option<&Path>,
    out: Option<&Path>,
) -> Result<bool, CliError> {
    let model_a = load_model(a)?;
    let model_b = load_model(b)?;
    let patterns = match filters {
        Some(path) => parse_filters(&read(path)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        None => Vec::new(),
    };
    let diffs = cross_check(&model_a, &model_b, max_diffs).map_err(|e| match e {
        CrossCheckError::Alphabet(e) => CliError::Usage(format!("cannot compare models: {e}")),
        other => CliError::Usage(other.to_string()),
    })?;
    let found = diffs.len();
    let diffs = apply_filters(diffs, &patterns);
    let report = format_report(&diffs);
    if let Some(out) = out {
        write(out, &report)?;
    }
    print!("{report}");
    eprintln!(
        "{} diff(s), {} hidden by filters",
        diffs.len(),
        found - diffs.len()
    );
    Ok(diffs.is_empty())
}

fn cmd_replay(
    diff_file: &Path,
    target_a: &str,
    target_b: &str,
    mapper_name: &str,
    transport: &TransportArgs,
) -> Result<(), CliError> {
    let diffs = parse_report(&read(diff_file)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", diff_file.display())))?;
    let mapper = mapper(mapper_name)?;
    let timeout = transport.timeout()?;
    let mut sul_a = open_target(target_a, mapper.clone(), timeout)?;
    let mut sul_b = open_target(target_b, mapper, timeout)?;
    let (mut confirmed, mut inconclusive) = (0, 0);
    for (n, diff) in diffs.iter().enumerate() {
        let report = confirm(diff, sul_a.as_mut(), sul_b.as_mut());
        println!("diff #{} {}", n + 1, report.verdict);
        for (label, observed) in [("A", &report.observed_a), ("B", &report.observed_b)] {
            if let Some(observed) = observed {
                let quoted: Vec<String> = observed
                    .iter()
                    .map(|s| mqlearn::automata::quote_symbol(s))
                    .collect();
                println!("   {label}: {}", quoted.join("  "));
            }
        }
        match report.verdict {
            Verdict::Confirmed => confirmed += 1,
            Verdict::Inconclusive(_) => inconclusive += 1,
            _ => {}
        }
    }
    eprintln!("{confirmed} of {} diff(s) confirmed", diffs.len());
    if inconclusive > 0 {
        Err(CliError::Transport(format!(
            "{inconclusive} replay(s) inconclusive"
        )))
    } else if confirmed == diffs.len() {
        Ok(())
    } else {
        Err(CliError::Failure(format!(
            "{} diff(s) not confirmed",
            diffs.len() - confirmed
        )))
    }
}

fn cmd_extract(broker_name: &str, mapper_name: &str, out: &Path) -> Result<(), CliError> {
    let mutant = broker(broker_name)?;
    let mapper = mapper(mapper_name)?;
    let machine =
        extract_reference_model(mutant, &mapper).map_err(|e| CliError::Failure(e.to_string()))?;
    write_model(&machine, out)?;
    println!(
        "{} states written to {}",
        machine.num_states(),
        out.display()
    );
    Ok(())
}

fn cmd_serve(broker_name: &str, host: &str, port: u16) -> Result<(), CliError> {
    let mutant = broker(broker_name)?;
    let server = serve(mutant, (host, port))
        .map_err(|e| CliError::Transport(format!("cannot bind {host}:{port}: {e}")))?;
    println!("serving {mutant} on {}", server.local_addr());
    server.wait();
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Learn {
            target,
            mapper,
            oracle,
            transport,
            max_rounds,
            out,
        } => cmd_learn(&target, &mapper, &oracle, &transport, max_rounds, &out)?,
        Command::Crosscheck {
            model_a,
            model_b,
            max_diffs,
            filters,
            out,
        } => {
            if !cmd_crosscheck(
                &model_a,
                &model_b,
                max_diffs,
                filters.as_deref(),
                out.as_deref(),
            )? {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Replay {
            diff_file,
            target_a,
            target_b,
            mapper,
            transport,
        } => cmd_replay(&diff_file, &target_a, &target_b, &mapper, &transport)?,
        Command::Extract {
            broker,
            mapper,
            out,
        } => cmd_extract(&broker, &mapper, &out)?,
        Command::Serve { broker, host, port } => cmd_serve(&broker, &host, port)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}
