use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kvh_cli::compare::{compare, Norm};
use kvh_cli::{run, Check, RunConfig, Scenario};

#[derive(Parser)]
#[command(name = "kvh", version, about = "Koopman-van Hove scenario runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its artifacts and report.
    Run {
        /// TOML config; keys not given take the scenario defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        /// Restrict to this check (repeatable).
        #[arg(long = "check")]
        checks: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// TOML override such as `dt=5e-4` or `grid.n_q=64` (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Print record-wise distances between two binary artifacts.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "l2", value_parser = ["l1", "l2", "linf"])]
        norm: String,
    },
    ListScenarios,
    ListChecks,
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.into()).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cli.cmd {
        Cmd::Run { config, scenario, checks, seed, output, sets } => {
            let base = match &config {
                Some(p) => match std::fs::read_to_string(p) {
                    Ok(t) => t,
                    Err(e) => {
                        eprintln!("error: cannot read {}: {e}", p.display());
                        return ExitCode::from(2);
                    }
                },
                None => String::new(),
            };
            let mut over = Vec::new();
            if let Some(s) = scenario {
                over.push(format!("scenario = {}", toml_str(&s)));
            }
            if !checks.is_empty() {
                let list: Vec<String> = checks.iter().map(|c| toml_str(c)).collect();
                over.push(format!("checks = [{}]", list.join(", ")));
            }
            if let Some(s) = seed {
                over.push(format!("seed = {s}"));
            }
            if let Some(o) = output {
                over.push(format!("output = {}", toml_str(&o.to_string_lossy())));
            }
            over.extend(sets);
            let cfg = match RunConfig::from_parts(&base, &over) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match run(&cfg) {
                Ok(out) => {
                    print!("{}", out.report.render());
                    println!("artifacts = {}", out.dir.display());
                    ExitCode::from(if out.passed() { 0 } else { 1 })
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Cmd::Compare { a, b, norm } => {
            let norm = Norm::from_name(&norm).expect("restricted by clap");
            match compare(&a, &b, norm) {
                Ok(d) => {
                    for (k, v) in d.iter().enumerate() {
                        println!("{k} {v:e}");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Cmd::ListScenarios => {
            for s in Scenario::all() {
                let on = s.default_checks();
                let mut line = format!("{:<18} {} [{}]", s.name(), s.description(), on.iter().map(|c| c.name()).collect::<Vec<_>>().join(", "));
                let extra: Vec<_> = s.checks().iter().filter(|c| !on.contains(c)).map(|c| c.name()).collect();
                if !extra.is_empty() {
                    line += &format!(" (opt-in: {})", extra.join(", "));
                }
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Cmd::ListChecks => {
            for c in Check::all() {
                println!("{:<20} {}", c.name(), c.description());
            }
            ExitCode::SUCCESS
        }
    }
}
