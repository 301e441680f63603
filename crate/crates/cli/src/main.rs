use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dcsim::harness;
use dcsim::scenario::{Protocol, Scenario, ScenarioError};
use dcsim::trace::{emit_summary, emit_trace, write_summary, write_trace, Format};
use dcsim::SimError;

#[derive(Parser)]
#[command(name = "dcsim", version, about = "Packet-level SRM vs NDN/SVS loss-recovery simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file, preset name, or `<preset>.<protocol>`.
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    end_ms: Option<u64>,
    /// Comma-separated protocol list.
    #[arg(long, value_delimiter = ',')]
    protocols: Vec<Protocol>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute one run under the first listed protocol.
    Run {
        #[command(flatten)]
        common: Common,
        /// Trace output; format follows the extension (.jsonl, .json, .csv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary output; `.csv` writes the per-node table.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run each listed protocol and print a side-by-side table.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Write the comparison JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vary scenario keys over values and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted key path; several comma-separated keys move together.
        #[arg(long, value_delimiter = ',', required = true)]
        param: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Number of seeds, counting up from the scenario seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario against the schema without running it.
    Validate { scenario: String },
}

enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::Runtime(e.into()),
            _ => Failure::Input(e.into()),
        }
    }
}

fn runtime(e: anyhow::Error) -> Failure {
    Failure::Runtime(e)
}

fn load(c: &Common) -> Result<Scenario, Failure> {
    let mut sc = Scenario::load_target(&c.scenario)?;
    if let Some(s) = c.seed {
        sc.seed = s;
    }
    if let Some(e) = c.end_ms {
        sc.end_ms = e;
    }
    if !c.protocols.is_empty() {
        sc.protocols = c.protocols.clone();
    }
    // overrides must still satisfy the schema
    sc.resolve()?;
    Ok(sc)
}

fn format_of(path: &Path) -> Result<Format, Failure> {
    Format::from_path(path)
        .with_context(|| format!("cannot infer output format of {}", path.display()))
        .map_err(Failure::Input)
}

fn execute(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run {
            common,
            out,
            summary,
        } => {
            let sc = load(&common)?;
            let proto = sc.protocols[0];
            log::info!("running {} under {proto} with seed {}", sc.name, sc.seed);
            let run = harness::run(&sc, proto)?;
            if let Some(p) = &out {
                let f = format_of(p)?;
                emit_trace(&run.trace, f, p)
                    .with_context(|| format!("writing {}", p.display()))
                    .map_err(runtime)?;
            }
            match &summary {
                Some(p) => {
                    let f = format_of(p)?;
                    emit_summary(&run.summary, f, p)
                        .with_context(|| format!("writing {}", p.display()))
                        .map_err(runtime)?;
                }
                None => {
                    let stdout = std::io::stdout();
                    write_summary(&run.summary, Format::Json, stdout.lock())
                        .context("writing summary")
                        .map_err(runtime)?;
                }
            }
            if out.is_none() && log::log_enabled!(log::Level::Trace) {
                let stderr = std::io::stderr();
                write_trace(&run.trace, Format::Jsonl, stderr.lock())
                    .context("writing trace")
                    .map_err(runtime)?;
            }
        }
        Cmd::Compare { common, out } => {
            let sc = load(&common)?;
            let cmp = harness::compare(&sc, &sc.protocols)?;
            print!("{}", cmp.render_table());
            if let Some(p) = out {
                let text = serde_json::to_string_pretty(&cmp.to_json()).expect("json value");
                std::fs::write(&p, text + "\n")
                    .with_context(|| format!("writing {}", p.display()))
                    .map_err(runtime)?;
            }
        }
        Cmd::Sweep {
            common,
            param,
            values,
            seeds,
            out,
        } => {
            let sc = load(&common)?;
            let seeds: Vec<u64> = (0..seeds).map(|i| sc.seed.wrapping_add(i)).collect();
            let rows = harness::sweep(&sc, sc.protocols[0], &param, &values, &seeds)?;
            let csv = harness::sweep_csv(&rows);
            match out {
                Some(p) => std::fs::write(&p, csv)
                    .with_context(|| format!("writing {}", p.display()))
                    .map_err(runtime)?,
                None => print!("{csv}"),
            }
        }
        Cmd::Validate { scenario } => {
            let sc = Scenario::load_target(&scenario)?;
            println!("{}: ok", sc.name);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIM_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
