use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use poisson_sde::presets::list_presets;
use poisson_sde::scenario::{run_config_text, validate_config, ExitStatus, RunOptions};

/// Output directory override when `--out` is not given.
const OUT_ENV: &str = "PSDE_OUT_DIR";

#[derive(Parser)]
#[command(name = "psde", version, about = "Bounded and recurrent solutions of semilinear SDEs")]
struct Cli {
    /// Directory for report.json and the CSV files (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for the simulations.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Report a wall time of zero so reports are byte-identical across runs.
    #[arg(long, global = true)]
    fixed_clock: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and run a scenario file.
    Run { config: PathBuf },
    /// List the built-in presets.
    Presets,
    /// Check a scenario file and print the admissibility conditions.
    Validate { config: PathBuf },
}

fn exit(status: ExitStatus) -> ExitCode {
    ExitCode::from(status.code() as u8)
}

fn read(path: &PathBuf) -> Result<String, ExitCode> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("cannot read {}: {e}", path.display());
        exit(ExitStatus::ValidationFailure)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("--threads must be at least 1");
            return exit(ExitStatus::ValidationFailure);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot start thread pool: {e}");
            return exit(ExitStatus::RuntimeFailure);
        }
    }
    match cli.command {
        Command::Presets => {
            println!(
                "{}",
                serde_json::to_string_pretty(&list_presets()).expect("serializable")
            );
            exit(ExitStatus::Ok)
        }
        Command::Validate { config } => {
            let raw = match read(&config) {
                Ok(r) => r,
                Err(code) => return code,
            };
            let v = validate_config(&raw);
            for c in &v.checks {
                let needed: Vec<_> = c.required_by.iter().map(|a| a.name()).collect();
                println!(
                    "{} {}: {} = {} vs {}{}",
                    if c.passed { "pass" } else { "fail" },
                    c.condition,
                    c.constant,
                    c.value,
                    c.threshold,
                    if needed.is_empty() {
                        String::new()
                    } else {
                        format!(" (needed by {})", needed.join(", "))
                    }
                );
            }
            for i in &v.issues {
                eprintln!("{i}");
            }
            if v.valid {
                println!("valid");
                exit(ExitStatus::Ok)
            } else {
                exit(ExitStatus::ValidationFailure)
            }
        }
        Command::Run { config } => {
            let raw = match read(&config) {
                Ok(r) => r,
                Err(code) => return code,
            };
            let opts = RunOptions {
                out_dir: cli.out.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)),
                fixed_clock: cli.fixed_clock,
                dry: false,
            };
            let (status, outcome) = run_config_text(&raw, &opts);
            match outcome {
                Ok(report) => {
                    for r in &report.results {
                        println!("{}: {} violations", r.analysis.name(), r.violations);
                    }
                    for a in report.audits.iter().filter(|a| a.error.is_some()) {
                        eprintln!("audit failed: {}", a.error.as_deref().unwrap_or_default());
                    }
                    println!("exit status: {:?}", report.exit_status);
                }
                Err(msg) => eprintln!("{msg}"),
            }
            exit(status)
        }
    }
}
