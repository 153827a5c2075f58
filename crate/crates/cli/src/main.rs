//! `carleman-lab <subcommand> --config <path> [--out <dir>] [--seed <int>]`
//!
//! Exit codes: 0 when every check passes, 1 when a check fails or a run
//! errors, 2 on usage or configuration errors.

mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use clap::Parser;
use serde_json::json;

use experiments::{registry, Context};
use output::{sha256_hex, to_json, write_files, Manifest};

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "carleman-lab", version, about = "Carleman estimate and inverse problem experiments", after_help = subcommand_help())]
struct Cli {
    /// Experiment to run.
    subcommand: String,
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `output_dir` from the config, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `ensemble.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn subcommand_help() -> String {
    let mut s = String::from("Subcommands:\n");
    for e in registry().iter() {
        s.push_str(&format!("  {:<20} {}\n", e.name(), e.summary()));
    }
    s
}

fn run(cli: Cli) -> Result<u8, (u8, anyhow::Error)> {
    let usage = |e: anyhow::Error| (EXIT_USAGE, e);
    let reg = registry();
    let exp = reg.get(&cli.subcommand).map_err(|e| usage(e.into()))?;
    let (cfg, raw) = config::parse_config(&cli.config).map_err(usage)?;
    let seed = cli.seed.unwrap_or(cfg.ensemble.seed);
    let out_dir = cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context::new(cfg, seed).map_err(usage)?;

    let outcome = exp.run(&ctx).map_err(|e| (EXIT_FAIL, e))?;
    let passed = outcome.passed();
    let code = if passed { 0 } else { EXIT_FAIL };
    let report = json!({
        "subcommand": exp.name(),
        "seed": seed,
        "passed": passed,
        "checks": outcome.checks,
        "result": outcome.result,
    });
    let fail = |e: anyhow::Error| (EXIT_FAIL, e);
    let mut files = vec![
        ("report.json".to_string(), to_json(&report).map_err(fail)?),
        ("report.csv".to_string(), outcome.table.to_csv().map_err(fail)?),
    ];
    files.extend(outcome.extra);
    let manifest = Manifest {
        tool: "carleman-lab",
        tool_version: env!("CARGO_PKG_VERSION"),
        library_version: carleman_lab::VERSION,
        subcommand: exp.name(),
        config_path: cli.config.display().to_string(),
        config_sha256: sha256_hex(&raw),
        seed,
        passed,
        exit_code: code as i32,
        artifacts: files.iter().map(|f| f.0.clone()).collect(),
        created_unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    files.push(("manifest.json".to_string(), to_json(&manifest).map_err(fail)?));
    write_files(&out_dir, &files).map_err(fail)?;

    for c in &outcome.checks {
        let v = c.value.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
        println!("{} {:<32} {:>14}  ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, v, c.requirement);
    }
    println!("{}: {} -> {}", exp.name(), if passed { "passed" } else { "failed" }, out_dir.display());
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err((code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
