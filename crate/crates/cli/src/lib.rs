//! The `ghz` command line.
//!
//! Batch subcommands render their whole output into a string before anything
//! is written, so a failed run never leaves a partial file behind and equal
//! flags give byte-identical output.

use std::fs;
use std::io::{self, BufRead, IsTerminal, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ghz_core::Sign;

mod commands;
pub mod play;

pub use commands::{Check, StrategyChoice};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, arguments or input files.
    Invalid(String),
    /// Anything that is not the user's fault.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Jsonl,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "ghz", version, about = "Simulate and analyze the three-player GHZ game")]
pub struct Cli {
    #[command(flatten)]
    pub config: RunConfig,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Number of trials (rounds for `play`).
    #[arg(long, global = true, default_value_t = 10_000, value_parser = parse_trials)]
    pub trials: u64,
    /// Per-detector efficiency in [0, 1].
    #[arg(long, global = true, default_value_t = 1.0, value_parser = parse_eta)]
    pub eta: f64,
    /// Master seed; every trial seed is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the output here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Play many refereed rounds with one strategy.
    Game {
        #[arg(long, value_enum, default_value_t = StrategyChoice::Quantum)]
        strategy: StrategyChoice,
        /// Six answers X_A Y_A X_B Y_B X_C Y_C for `classical-table`.
        #[arg(long, num_args = 6, allow_negative_numbers = true, value_parser = parse_sign)]
        table: Option<Vec<Sign>>,
    },
    /// Quantum win rate against detector efficiency.
    Sweep {
        /// Comma-separated efficiencies.
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,0.7937,0.9,1", value_parser = parse_eta)]
        grid: Vec<f64>,
    },
    /// Print an inconsistency proof for a parity system.
    Prove {
        #[command(subcommand)]
        system: ProveTarget,
    },
    /// Run the entanglement-swapping version of the game.
    Teleport {
        #[arg(long, value_enum, default_value_t = Order::BellFirst)]
        order: Order,
    },
    /// Elements of reality between preparation and final x measurements.
    Elements {
        /// Final x outcomes on A, B, C; their product must be -1.
        #[arg(num_args = 3, allow_negative_numbers = true, value_parser = parse_sign, required = true)]
        outcomes: Vec<Sign>,
    },
    /// Join the quantum team as player A.
    Play,
}

#[derive(Debug, Subcommand)]
pub enum ProveTarget {
    /// The six pre-agreed answers against the four winning conditions.
    Classical,
    /// Counterfactual y values in three worlds that keep the recorded x outcomes.
    Stapp {
        #[arg(num_args = 3, allow_negative_numbers = true, value_parser = parse_sign, required = true)]
        outcomes: Vec<Sign>,
    },
    /// A system in `VAR` / `CON` text form.
    File { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Order {
    BellFirst,
    RemoteFirst,
    Interleaved,
}

pub fn parse_sign(s: &str) -> Result<Sign, String> {
    match s {
        "+1" | "1" | "+" => Ok(Sign::Plus),
        "-1" | "-" => Ok(Sign::Minus),
        _ => Err(format!("`{s}` is not a sign; use +1 or -1")),
    }
}

fn parse_trials(s: &str) -> Result<u64, String> {
    match s.parse::<u64>() {
        Ok(0) => Err("trials must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_eta(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("efficiency {v} is outside [0, 1]"))
    }
}

/// Renders a batch subcommand. `play` is not a batch command.
pub fn render(cli: &Cli) -> Result<String, CliError> {
    let cfg = &cli.config;
    match &cli.command {
        Command::Game { strategy, table } => commands::game(cfg, *strategy, table.as_deref()),
        Command::Sweep { grid } => commands::sweep(cfg, grid),
        Command::Prove { system } => commands::prove(cfg, system),
        Command::Teleport { order } => commands::teleport(cfg, *order),
        Command::Elements { outcomes } => commands::elements(cfg, outcomes),
        Command::Play => Err(CliError::Invalid("play is interactive and has no batch output".into())),
    }
}

fn emit(cfg: &RunConfig, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cfg.out {
        Some(path) => {
            fs::write(path, text).map_err(|e| CliError::Invalid(format!("cannot write {}: {e}", path.display())))
        }
        None => stdout
            .write_all(text.as_bytes())
            .and_then(|_| stdout.flush())
            .map_err(|e| CliError::Internal(e.to_string())),
    }
}

/// Full entry point with injectable streams; returns the exit code.
pub fn run_with<I, T>(
    args: I,
    stdin: &mut dyn BufRead,
    stdin_is_terminal: bool,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    let result = match cli.command {
        Command::Play => {
            if !stdin_is_terminal {
                Err(CliError::Invalid(
                    "play needs an interactive terminal on standard input".into(),
                ))
            } else {
                play::run_session(&cli.config, stdin, stdout).and_then(|report| match &cli.config.out {
                    Some(_) => emit(&cli.config, &report, stdout),
                    None => Ok(()),
                })
            }
        }
        _ => render(&cli).and_then(|text| emit(&cli.config, &text, stdout)),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "ghz: {e}");
            e.exit_code()
        }
    }
}

/// Entry point used by the binary.
pub fn main_exit_code() -> i32 {
    let stdin = io::stdin();
    let is_tty = stdin.is_terminal();
    let mut input = stdin.lock();
    run_with(
        std::env::args_os(),
        &mut input,
        is_tty,
        &mut io::stdout().lock(),
        &mut io::stderr().lock(),
    )
}
