use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use mvpr::disjunct::{disjunct_report, partition_devices, DisjunctReport};
use mvpr::harness::{self, Axis, HarnessOptions, Mode};
use mvpr::model::{Scenario, ScenarioConfig};
use mvpr::netsim::run_protocol;
use mvpr::pipeline::{resolve_eta, ProtocolOptions};
use mvpr::support::{check_theorem1, ConditionReport};
use mvpr::Error;

#[derive(Parser)]
#[command(name = "mvpr", version, about = "Multi-view compressive phase retrieval simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a scenario and write it as JSON.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one trial and print the result as JSON.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "proposed")]
        mode: String,
        /// Redraw until the effective t reaches this value.
        #[arg(long)]
        min_t: Option<i64>,
        /// Write the message trace (proposed mode) as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Keep full payload bodies in the trace.
        #[arg(long)]
        full_payload: bool,
    },
    /// Sweep one parameter and write a CSV table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// theta, nsr_db, m_total or k.
        #[arg(long)]
        axis: String,
        /// Comma list or start:step:end.
        #[arg(long)]
        values: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value = "proposed,no_collab")]
        modes: String,
        /// Master seed; defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        min_t: Option<i64>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the disjunctness and condition report for one scenario.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Target t for the exact check; defaults to the effective t.
        #[arg(long)]
        t_target: Option<usize>,
    },
}

#[derive(Serialize)]
struct VerifyOutput {
    disjunct: DisjunctReport,
    conditions: ConditionReport,
}

fn load_config(path: &Path, seed: Option<u64>) -> mvpr::Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = ScenarioConfig::from_json(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_json<T: Serialize>(v: &T) -> mvpr::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn exec(cli: Cli) -> mvpr::Result<()> {
    match cli.cmd {
        Cmd::Gen { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let sc = Scenario::generate(&cfg)?;
            std::fs::write(out, serde_json::to_string(&sc)?)?;
        }
        Cmd::Run {
            config,
            seed,
            mode,
            min_t,
            trace,
            full_payload,
        } => {
            let cfg = load_config(&config, None)?;
            let mode: Mode = mode.parse()?;
            let opts = HarnessOptions {
                min_t_eff: min_t,
                ..Default::default()
            };
            let seed = seed.unwrap_or(cfg.seed);
            let result = harness::run_trial(&cfg, mode, seed, &opts)?;
            if let Some(path) = trace {
                // Replays the accepted scenario to capture its trace.
                let (sc, partition, _) = harness::draw_scenario(&cfg, seed, &opts)?;
                let out = run_protocol(&sc, &partition, &ProtocolOptions::from_config(&sc.config))?;
                let f = std::io::BufWriter::new(std::fs::File::create(path)?);
                out.trace.write_jsonl(f, full_payload)?;
            }
            print_json(&result)?;
        }
        Cmd::Sweep {
            config,
            axis,
            values,
            trials,
            modes,
            seed,
            min_t,
            out,
        } => {
            let cfg = load_config(&config, None)?;
            let axis: Axis = axis.parse()?;
            let values = harness::parse_values(&values)?;
            let modes = modes
                .split(',')
                .filter(|m| !m.trim().is_empty())
                .map(|m| m.trim().parse())
                .collect::<mvpr::Result<Vec<Mode>>>()?;
            let opts = HarnessOptions {
                min_t_eff: min_t,
                ..Default::default()
            };
            let table = harness::sweep(&cfg, axis, &values, trials, &modes, seed.unwrap_or(cfg.seed), &opts)?;
            match out {
                Some(path) => harness::emit_csv(&table, &path)?,
                None => table.write_csv(std::io::stdout().lock())?,
            }
        }
        Cmd::Verify { config, seed, t_target } => {
            let cfg = load_config(&config, seed)?;
            let sc = Scenario::generate(&cfg)?;
            let partition = partition_devices(cfg.i_count, cfg.b_count, Default::default())?;
            let eta = resolve_eta(&sc, &partition, &ProtocolOptions::from_config(&cfg))?;
            let conditions = check_theorem1(&sc, &partition, eta)?;
            let t = t_target.unwrap_or(conditions.t_eff.max(0) as usize);
            let disjunct = disjunct_report(&sc, &partition, t)?;
            print_json(&VerifyOutput { disjunct, conditions })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match exec(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidConfig(_) | Error::Json(_) => 2,
                Error::Io(_) => 3,
                Error::Csv(e) if e.is_io_error() => 3,
                _ => 1,
            })
        }
    }
}
