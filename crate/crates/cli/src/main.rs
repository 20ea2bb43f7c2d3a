use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hyperem_cli::{run, CliError, Command, Context};

#[derive(Parser)]
#[command(name = "hyperem", version, about = "Hyperspectral emulation pipeline")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set epochs=10` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate a synthetic dataset of parameter maps and cubes.
    GenData(Common),
    /// Train an emulator.
    Train(Common),
    /// Emulate cubes from parameter maps with a trained model.
    Emulate(Common),
    /// Compare emulated cubes with references.
    Eval(Common),
    /// Retrieve a parameter from cubes by LUT inversion.
    Invert(Common),
    /// Time emulation throughput.
    Bench(Common),
    /// Export error-map heatmaps and band scatter data.
    Plot(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let ctx = Context { workers: cli.workers };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let (cmd, common) = match cli.command {
        Sub::GenData(c) => (Command::GenData, c),
        Sub::Train(c) => (Command::Train, c),
        Sub::Emulate(c) => (Command::Emulate, c),
        Sub::Eval(c) => (Command::Eval, c),
        Sub::Invert(c) => (Command::Invert, c),
        Sub::Bench(c) => (Command::Bench, c),
        Sub::Plot(c) => (Command::Plot, c),
    };
    match run(cmd, common.config.as_deref(), &common.sets, &ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit(&e)
        }
    }
}

fn exit(e: &CliError) -> ExitCode {
    ExitCode::from(e.exit_code())
}
