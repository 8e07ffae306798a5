#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod cache;
mod config;
mod run;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Parser;

use config::{Experiment, Method};

/// Batch runner for sofic entropy experiments.
#[derive(Parser, Debug)]
#[command(name = "sofic", version)]
struct Cli {
    /// Experiment file (TOML).
    #[arg(long, value_name = "PATH", required_unless_present = "verify")]
    config: Option<PathBuf>,
    /// Overrides the method in the config.
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Exit nonzero if any cell fails.
    #[arg(long)]
    strict: bool,
    /// Output directory (default: `output` from the config, relative to the config file).
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Cell cache directory.
    #[arg(long, value_name = "DIR", env = "SOFIC_CACHE_DIR")]
    cache: Option<PathBuf>,
    /// Run a property suite instead of an experiment: packing, chain, schur, witness or all.
    #[arg(long, value_name = "SUITE", conflicts_with = "config")]
    verify: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(suite) = &cli.verify {
        if suite.trim().is_empty() {
            let mut cmd = <Cli as clap::CommandFactory>::command();
            cmd.error(
                clap::error::ErrorKind::InvalidValue,
                "--verify needs a suite name: packing, chain, schur, witness or all",
            )
            .exit();
        }
    }
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: &Cli) -> Result<ExitCode> {
    if let Some(suite) = &cli.verify {
        let reports = verify::verify(suite.trim(), cli.seed.unwrap_or(0))?;
        let pass = reports.iter().all(|r| r.pass);
        println!("{}", serde_json::to_string_pretty(&reports)?);
        return Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE });
    }
    let Some(path) = &cli.config else {
        bail!("--config is required")
    };
    let mut exp = Experiment::load(path)?;
    if cli.method.is_some() || cli.seed.is_some() {
        let mut config = exp.config.clone();
        if let Some(m) = cli.method {
            config.method = m;
        }
        if let Some(s) = cli.seed {
            config.seed = s;
        }
        exp = Experiment::from_config(config, exp.dir.clone())?;
    }
    let output = run::output_dir(&exp, cli.output.clone());
    let outcome = run::run(&exp, &output, cli.cache.as_deref())?;
    let s = &outcome.summary;
    println!(
        "{}: estimate {} ({}), summary at {}",
        exp.config.method.as_str(),
        s["estimate"],
        s["direction"].as_str().unwrap_or("?"),
        output.join("summary.json").display()
    );
    for w in s["warnings"].as_array().into_iter().flatten() {
        eprintln!("warning: {}", w.as_str().unwrap_or_default());
    }
    if outcome.cell_errors > 0 {
        eprintln!("{} cell(s) failed; see summary.json", outcome.cell_errors);
        if cli.strict {
            return Ok(ExitCode::FAILURE);
        }
    }
    Ok(ExitCode::SUCCESS)
}
