use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use wavess::experiment::{load_spec, run, ExperimentError, Mode};

/// Spike-and-slab wavelet regression experiments.
#[derive(Parser, Debug)]
#[command(name = "wavess", version)]
struct Cli {
    /// Suite to run.
    #[arg(value_enum)]
    mode: Mode,
    /// JSON experiment spec.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory (overrides the spec).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the spec).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "WAVESS_THREADS")]
    threads: Option<usize>,
}

fn fail(e: &ExperimentError) -> ExitCode {
    eprintln!("wavess: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let mut spec = match load_spec(&cli.spec) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    if let Some(o) = cli.out {
        spec.output = o;
    }
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let spec = match spec.resolve(cli.mode) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("wavess: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("wavess: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let out = match run(&spec) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    println!("mode {} spec_hash {}", out.mode.name(), out.spec_hash);
    for c in &out.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    if out.mode.is_check() && !out.all_passed() {
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
