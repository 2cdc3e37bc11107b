//! Command-line front end: runs one configured task per invocation and writes CSV/JSON
//! outputs plus a manifest into the chosen directory.
//!
//! Exit codes: 0 success; 2 when computations succeeded but a hypothesis verdict
//! failed (outputs are still written); 1 on operational errors such as unreadable or
//! invalid configs.

use clap::Parser;
use semiflow_spectra::config::{RunConfig, TaskKind};
use semiflow_spectra::tasks::run_task;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "semiflow-spectra",
    version,
    about = "Spectral toolkit for suspension semiflows over piecewise-expanding interval maps"
)]
struct Cli {
    /// Task to run: check, density, correlation, ly_verify, resonances, or rho_hat.
    /// Must match the task named in the config file.
    task: String,

    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Output directory (overrides output_dir from the config).
    #[arg(long)]
    output: Option<PathBuf>,

    /// Worker-thread count (default: all cores). Results are independent of this.
    #[arg(long)]
    threads: Option<usize>,

    /// Allow resonance scans whose strip extends beyond the verified region; the
    /// outputs are then marked outside_proven_strip.
    #[arg(long)]
    override_strip: bool,
}

fn main() {
    // Usage errors exit 1 (code 2 is reserved for failed hypothesis verdicts);
    // --help/--version keep clap's success path.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            e.exit()
        }
        Err(e) => {
            let _ = e.print();
            std::process::exit(1);
        }
    };
    std::process::exit(run(cli));
}

fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("semiflow-spectra: --threads must be at least 1");
            return 1;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("semiflow-spectra: cannot configure {n} worker threads: {e}");
            return 1;
        }
    }

    let task: TaskKind = match cli.task.parse() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("semiflow-spectra: {e}");
            return 1;
        }
    };

    let cfg = match RunConfig::from_path(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("semiflow-spectra: {e}");
            return 1;
        }
    };
    if cfg.task != task {
        eprintln!(
            "semiflow-spectra: CLI task '{}' does not match config task '{}'",
            task, cfg.task
        );
        return 1;
    }

    let out_dir = match cli.output.clone().or_else(|| cfg.output_dir.clone()) {
        Some(d) => d,
        None => {
            eprintln!(
                "semiflow-spectra: no output directory (set output_dir in the config or pass --output)"
            );
            return 1;
        }
    };

    match run_task(&cfg, &out_dir, cli.override_strip) {
        Ok(outcome) => {
            println!(
                "wrote {} file(s) to {}",
                outcome.outputs.len(),
                out_dir.display()
            );
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("semiflow-spectra: {e}");
            1
        }
    }
}
