//! `rowsim` command-line tool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rowsim::experiment::{run, ExperimentSpec, RunOptions};
use rowsim::profile::{builtin, builtin_names, DeviceProfile};

#[derive(Parser)]
#[command(name = "rowsim", version, about = "DRAM read-disturbance simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec. ROWSIM_OUT overrides its output_dir.
    Run {
        spec: PathBuf,
        /// Worker threads; defaults to the number of CPUs.
        #[arg(long)]
        threads: Option<usize>,
        /// Reject row-open times above the JEDEC limit instead of warning.
        #[arg(long)]
        strict_jedec: bool,
    },
    /// Inspect builtin device profiles.
    Profiles {
        #[command(subcommand)]
        command: ProfilesCommand,
    },
}

#[derive(Subcommand)]
enum ProfilesCommand {
    /// List builtin profile names.
    List,
    /// Print a builtin profile, or a profile file, as JSON.
    Show { name: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { spec, threads, strict_jedec } => run_spec(&spec, threads, strict_jedec),
        Command::Profiles { command: ProfilesCommand::List } => {
            for name in builtin_names() {
                let p = builtin(name).expect("listed builtin exists");
                let temps: Vec<String> = p.temperatures().iter().map(|t| format!("{t}C")).collect();
                println!("{name}\t{}", temps.join(","));
            }
            ExitCode::SUCCESS
        }
        Command::Profiles { command: ProfilesCommand::Show { name } } => match DeviceProfile::load(&name) {
            Ok(p) => {
                println!("{}", p.to_json());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}

fn run_spec(path: &Path, threads: Option<usize>, strict_jedec: bool) -> ExitCode {
    let spec = match ExperimentSpec::load(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let opts = RunOptions { strict_jedec, ..RunOptions::from_env() };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(&spec, &opts)) {
        Ok(out) => {
            println!("{}", serde_json::to_string_pretty(&out.summary).expect("summary serializes"));
            eprintln!("wrote {} files to {}", out.files.len(), out.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
