use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use vbdesign::pipeline::{run, RunConfig, Stage};

/// Variational design under uncertainty: MAP point, sensitive directions, validation.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving all artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Last stage to run: map, vbem, validate or all.
    #[arg(long, default_value = "all")]
    stage: String,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let stage: Stage = match args.stage.parse() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut config = match RunConfig::from_file(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    match run(&config, &args.out, stage) {
        Ok(s) => {
            println!("map: F = {:.10e}, {} forward calls, converged = {}", s.f_mu, s.map_forward_calls, s.map_converged);
            if let Some(v) = &s.vbem {
                println!("vbem: F = {:.10e} after {} iterations, converged = {}", v.f_final, v.iterations, v.converged);
                let shown: Vec<String> = v.sigma2.iter().take(5).map(|x| format!("{x:.3e}")).collect();
                println!("vbem: smallest variances {}", shown.join(" "));
                for w in &v.warnings {
                    eprintln!("warning: {w}");
                }
            }
            if let Some(r) = &s.validation {
                println!("validate: nKL = {:.4e} (se {:.2e}), ESS = {:.1} of {}", r.nkl, r.nkl_se, r.ess, r.m);
            }
            println!("artifacts in {} ({} forward calls)", s.out_dir.display(), s.forward_calls);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
