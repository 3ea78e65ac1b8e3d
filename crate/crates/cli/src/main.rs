mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ktl::experiments::gaussian::run_gaussian_suite;
use ktl::experiments::lognormal::run_lognormal_example;
use ktl::experiments::options::run_options_experiment;
use ktl::experiments::output::OutputDir;
use ktl::experiments::simulation::run_simulation;
use ktl::experiments::transport_run::run_transport;
use ktl::gaussian;
use serde::Serialize;
use serde_json::{json, Value};

use config::{Command, RunConfig};

/// Optimal-transport Kyle model: transport solves, normal-model reports,
/// simulations and the stock+call and lognormal experiments.
#[derive(Debug, Parser)]
#[command(name = "ktl", version)]
struct Cli {
    command: Command,
    /// TOML run configuration; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; KTL_OUT takes precedence.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Exit with status 1 when the command's checks fail.
    #[arg(long)]
    check: bool,
    /// Override a config leaf under the command's section, e.g.
    /// `--set n_paths=2000` or `--set pipeline.source_nodes=101`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

struct Outcome {
    report: Value,
    pass: bool,
    summary: String,
}

fn outcome<R: Serialize>(report: &R, pass: bool, summary: String) -> Result<Outcome, String> {
    Ok(Outcome {
        report: serde_json::to_value(report).map_err(|e| e.to_string())?,
        pass,
        summary,
    })
}

fn section(cfg: &RunConfig, command: Command) -> Value {
    let all = serde_json::to_value(cfg).expect("config serializes");
    all[command.section()].clone()
}

fn execute(cfg: &RunConfig, command: Command, out: &OutputDir) -> Result<Outcome, String> {
    let err = |e: ktl::Error| e.to_string();
    match command {
        Command::Transport => {
            let r = run_transport(&cfg.transport, Some(out)).map_err(err)?;
            let summary = format!(
                "W2 {:.6}  duality gap {:.3e} (relative {:.3e})  map jump ratio {:.1}  pivots {}",
                r.w2, r.duality.gap, r.relative_gap, r.map_jump_ratio, r.pivots
            );
            outcome(&r, r.pass, summary)
        }
        Command::Gaussian => {
            let g = &cfg.gaussian;
            let eq = gaussian::calibrate(&g.equilibrium).map_err(err)?;
            let equilibrium = eq.report();
            let mut pass = equilibrium.identity_error <= g.tolerance;
            let mut summary = format!(
                "S {:?}  Λ {:?}  identity error {:.2e}",
                equilibrium.s, equilibrium.lambda, equilibrium.identity_error
            );
            let suite = if g.run_suite {
                let s = run_gaussian_suite(&g.suite).map_err(err)?;
                for c in &s.cases {
                    summary.push_str(&format!(
                        "\nn={} α={} β={}: Λ {:.4} S {:.4} drift {:.4} (core Λ {:.4}, drift {:.4}) {}",
                        c.dim,
                        c.alpha,
                        c.beta,
                        c.lambda_error,
                        c.s_error,
                        c.drift_error,
                        c.lambda_error_core,
                        c.drift_error_core,
                        if c.pass { "pass" } else { "FAIL" }
                    ));
                }
                pass &= s.pass;
                Some(s)
            } else {
                None
            };
            let report = json!({ "equilibrium": equilibrium, "suite": suite, "pass": pass });
            outcome(&report, pass, summary)
        }
        Command::Simulate => {
            let r = run_simulation(&cfg.simulate, Some(out)).map_err(err)?;
            let s = &r.summary;
            let mut summary = format!(
                "{} paths, mode {:?}: E[P_T] {:?} (target {:?}, z {:?})  dealer wealth {:.4} ± {:.4}",
                s.n_paths,
                s.mode,
                s.mean_p_end.iter().map(|e| e.mean).collect::<Vec<_>>(),
                r.expected_terminal_mean,
                r.terminal_mean_z,
                s.dealer_wealth.mean,
                s.dealer_wealth.se
            );
            if let Some(g) = s.max_terminal_gap {
                summary.push_str(&format!("  max terminal gap {g:.2e}"));
            }
            outcome(&r, r.pass, summary)
        }
        Command::Options => {
            let r = run_options_experiment(&cfg.options, Some(out)).map_err(err)?;
            let mut summary = r.table.clone();
            for (name, ok) in &r.checks {
                summary.push_str(&format!("\n[{}] {name}", if *ok { "pass" } else { "FAIL" }));
            }
            outcome(&r, r.pass, summary)
        }
        Command::Lognormal => {
            let r = run_lognormal_example(&cfg.lognormal, Some(out)).map_err(err)?;
            let mut summary = format!(
                "closed form max error {:.3e}  pipeline {:.3e}  map {:.3e}  convergence ratios heat {:.2} pde {:.2}",
                r.closed_form.max_error,
                r.pipeline_closed_form.max_error,
                r.map_error,
                r.convergence.heat_ratio,
                r.convergence.pde_ratio
            );
            for c in &r.cases {
                summary.push_str(&format!(
                    "\nβ={}: P_0 {:.4}  physical mean {:.4}  premium {:.4} ± {:.4}",
                    c.beta, c.p0, c.physical_mean.mean, c.premium.mean, c.premium.se
                ));
            }
            outcome(&r, r.pass, summary)
        }
    }
}

fn write_failure(root: &std::path::Path, config: &Value, message: &str) {
    let doc = json!({ "config": config, "error": message, "pass": false });
    if std::fs::create_dir_all(root).is_ok() {
        let _ = std::fs::write(root.join("report.json"), serde_json::to_string_pretty(&doc).unwrap_or_default());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let root = std::env::var_os("KTL_OUT").map(PathBuf::from).unwrap_or(cli.out.clone());

    let mut overrides = Vec::new();
    for raw in &cli.set {
        match config::split_override(raw) {
            Ok(kv) => overrides.push(kv),
            Err(e) => {
                eprintln!("error: {e}");
                write_failure(&root, &Value::Null, &e);
                return ExitCode::from(2);
            }
        }
    }
    if let Some(seed) = cli.seed {
        match cli.command.seed_key() {
            Some(key) => overrides.push((key.to_string(), seed.to_string())),
            None => eprintln!("note: --seed has no effect on {}", cli.command.section()),
        }
    }
    let cfg = match config::load_file(cli.config.as_deref(), cli.command, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            write_failure(&root, &Value::Null, &e);
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    let section = section(&cfg, cli.command);
    let out = match OutputDir::create(&root, &section) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&cfg, cli.command, &out) {
        Ok(o) => {
            println!("{}", o.summary);
            let path = match out.report(&section, &o.report) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: writing report: {e}");
                    return ExitCode::from(2);
                }
            };
            println!("{} {}", if o.pass { "PASS" } else { "FAIL" }, path.display());
            if cli.check && !o.pass {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            let _ = out.report(&section, &json!({ "error": e, "pass": false }));
            ExitCode::from(2)
        }
    }
}
