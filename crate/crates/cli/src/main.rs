use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use nsgate_cli::bundle::write_bundle;
use nsgate_cli::config::{ScenarioConfig, ScenarioId};
use nsgate_cli::scenarios::{run_scenario, run_table1};
use nsgate_cli::verify::{report, run_property_suite, VerifyOptions};

#[derive(Parser)]
#[command(name = "nsgate", version, about = "Run NS / C-Z gate and waveguide scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write a result bundle.
    Run {
        /// ns-sc, ns-pusc, ns-dispersive, cz, catch-release or sweep
        scenario: ScenarioId,
        /// TOML config file
        #[arg(long)]
        config: Option<PathBuf>,
        /// Parameter override, e.g. --set noise.kappa.value=0.1 (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for trajectory runs
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve every row of the p-USC parameter table and score the C-Z gate.
    Table1 {
        #[arg(long, default_value = "results/table1")]
        out: PathBuf,
    },
    /// Run the property suite; exits 1 if any check fails.
    Verify {
        #[arg(long, default_value = "results/verify")]
        out: PathBuf,
        /// Negative control: perturb every Hamiltonian so Hermiticity fails.
        #[arg(long)]
        inject_non_hermitian: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_metrics(metrics: &std::collections::BTreeMap<String, f64>) {
    for (k, v) in metrics {
        println!("{k:<36} {v:.6}");
    }
}

fn execute(command: Command) -> Result<bool> {
    let start = Instant::now();
    match command {
        Command::Run { scenario, config, overrides, out, seed } => {
            let mut cfg = ScenarioConfig::load(scenario, config.as_deref(), &overrides)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out.or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("results").join(scenario.as_str()));
            let output = run_scenario(&cfg).with_context(|| format!("scenario {scenario}"))?;
            let params = serde_json::to_value(&cfg.params)?;
            write_bundle(&dir, scenario.as_str(), params, cfg.seed, &output, start.elapsed().as_secs_f64())?;
            print_metrics(&output.metrics);
            println!("wrote {}", dir.display());
            Ok(true)
        }
        Command::Table1 { out } => {
            let (rows, output) = run_table1()?;
            println!("{:>2} {:>7} {:>8} {:>7} {:>7} {:>10} {:>10}", "k", "r", "ωq/2π", "g/2π", "t/ns", "F", "F(σz)");
            for r in &rows {
                println!(
                    "{:>2} {:>7.4} {:>8.3} {:>7.3} {:>7.3} {:>10.6} {:>10.6}",
                    r.k, r.r, r.omega_q_ghz, r.g_ghz, r.gate_time_ns, r.fidelity_dressed, r.fidelity_dressed_sigma_z
                );
            }
            write_bundle(&out, "table1", serde_json::json!({}), 0, &output, start.elapsed().as_secs_f64())?;
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Verify { out, inject_non_hermitian } => {
            let opts = VerifyOptions { inject_non_hermitian };
            let results = run_property_suite(&opts);
            for r in &results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!("{status} {:<40} {:>11.3e} < {:<9.1e} {}", r.name, r.worst, r.tolerance, r.detail);
            }
            let output = report(&results, &opts)?;
            let params = serde_json::json!({ "inject_non_hermitian": inject_non_hermitian });
            write_bundle(&out, "verify", params, 0, &output, start.elapsed().as_secs_f64())?;
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} of {} checks passed; wrote {}", results.len() - failed, results.len(), out.display());
            Ok(failed == 0)
        }
    }
}
