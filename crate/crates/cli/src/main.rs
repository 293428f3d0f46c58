use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use maxcas::campaign::DEFAULT_CEILING;
use maxcas::caslib::Mutation;
use maxcas::lincheck::DEFAULT_BUDGET;
use maxcas::registers::DEFAULT_WIDTH;

mod bench;
mod check;
mod simulate;

/// Exit statuses.
pub const PASS: u8 = 0;
pub const REJECTED: u8 = 1;
pub const BUDGET: u8 = 2;
pub const USAGE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "maxcas", version, about = "Simulate, check and benchmark the max-register compare-and-swap")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a verification campaign over generated schedules.
    Simulate(SimulateArgs),
    /// Check a recorded history for linearizability.
    Check(CheckArgs),
    /// Measure native and simulated compare-and-swap throughput.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ShapeArg {
    Contend,
    Mixed,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 2)]
    procs: usize,
    #[arg(long, default_value_t = 1)]
    ops_per_proc: usize,
    /// Value domain; the first value is every object's initial value.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    values: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    objects: usize,
    /// Enumerate every interleaving (the default).
    #[arg(long, conflicts_with = "random")]
    exhaustive: bool,
    /// Run N random schedules instead.
    #[arg(long, value_name = "N")]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cut schedules after K register steps, leaving calls pending.
    #[arg(long, value_name = "K")]
    truncate: Option<usize>,
    /// In random mode, cut this many of the schedules at a random point.
    #[arg(long, value_name = "N", default_value_t = 0)]
    truncated_count: usize,
    /// Refuse exhaustive runs with more schedules than this.
    #[arg(long, default_value_t = DEFAULT_CEILING)]
    ceiling: usize,
    #[arg(long, value_enum, default_value_t = ShapeArg::Contend)]
    shape: ShapeArg,
    /// Directory for failing traces and per-schedule verdicts.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also write the trace of every schedule to --out.
    #[arg(long, requires = "out")]
    record: bool,
    /// Most failing traces to write.
    #[arg(long, default_value_t = 100)]
    max_failures: usize,
    /// Search budget of the black-box checker, in explored nodes.
    #[arg(long, value_name = "NODES", default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Run a seeded-bug build.
    #[arg(long, value_name = "NAME", value_parser = parse_mutation)]
    mutation: Option<Mutation>,
    /// Invariants to check after every step (default: all).
    #[arg(long, value_delimiter = ',', conflicts_with = "no_invariants")]
    invariants: Option<Vec<String>>,
    #[arg(long)]
    no_invariants: bool,
    /// Bits per register half.
    #[arg(long, default_value_t = DEFAULT_WIDTH)]
    width: u32,
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// History or trace file in the machine's line format; `-` reads stdin.
    file: PathBuf,
    /// Initial value (default: from the header record, else 0).
    #[arg(long)]
    initial: Option<u64>,
    #[arg(long, value_name = "NODES", default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Print the verdict as one JSON record.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ContentionArg {
    Low,
    High,
    Both,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 4)]
    threads: usize,
    /// Read-then-cas rounds per thread.
    #[arg(long, default_value_t = 100_000)]
    ops: u64,
    #[arg(long, value_enum, default_value_t = ContentionArg::Both)]
    contention: ContentionArg,
    /// One JSON record per row.
    #[arg(long)]
    json: bool,
}

fn parse_mutation(s: &str) -> Result<Mutation, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Mutation::ALL.iter().map(|m| m.name()).collect();
        format!("unknown mutation `{s}`; expected one of {}", names.join(", "))
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => PASS,
                _ => USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match cli.command {
        Command::Simulate(args) => simulate::run(args),
        Command::Check(args) => check::run(args),
        Command::Bench(args) => bench::run(args),
    };
    ExitCode::from(code)
}
