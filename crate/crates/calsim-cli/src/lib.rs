//! `calsim` command line: run scenarios, analyze traces, compute CAL bounds.
//!
//! [`execute`] takes the argument list and returns the exit code and both
//! output streams, so the binary is a thin wrapper around it.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 check violation, 3 runtime fault.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use calsim::fedmodel::CoordinationMode;
use calsim::metrics::{
    analyze, check_causal_consistency, check_eventual_consistency, compare_logical_traces, CausalOutcome,
    EventualOutcome, LogicalComparison, Trace,
};
use calsim::scenarios::{builtin, builtin_scenarios};
use calsim::simnet::{run, tardy_count};
use calsim::timekit::Timestamp;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

pub mod cal;
pub mod config;
mod table;

pub use cal::{cal, CalReport};
pub use config::ScenarioConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Machine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Centralized,
    Decentralized,
}

impl From<Mode> for CoordinationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Centralized => CoordinationMode::Centralized,
            Mode::Decentralized => CoordinationMode::Decentralized,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "calsim", version, about = "Simulate tag-coordinated federations and check the CAL tradeoff")]
pub struct Cli {
    /// Output style for reports.
    #[arg(long, value_enum, default_value_t = Format::Human, global = true)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write its trace
    Run(RunArgs),
    /// Static analysis: gamma, cycle class, offsets, unavailability, STA/STAA
    Cal { config: PathBuf },
    /// Inconsistency, unavailability, offsets and apparent latency of traces
    Analyze {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Causal and eventual consistency of a trace
    Check {
        trace: PathBuf,
        /// Virtual time after which no writes may occur; defaults to the end of the trace.
        #[arg(long, value_parser = parse_time)]
        quiescence: Option<Timestamp>,
    },
    /// Compare the logical content of two traces
    Diff { a: PathBuf, b: PathBuf },
    /// Built-in scenarios
    #[command(subcommand)]
    Scenarios(ScenariosCommand),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exclusive end of the run, e.g. `3s` or `500ms`.
    #[arg(long, value_parser = parse_time)]
    pub horizon: Option<Timestamp>,
    /// Defaults to `output.trace`, then to the config path with a `.trace` extension.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ScenariosCommand {
    /// Names and summaries of the built-in scenarios
    List,
    /// Print a built-in scenario as a config document
    Export {
        name: String,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn parse_time(s: &str) -> Result<Timestamp, String> {
    s.parse().map_err(|e| format!("{e}"))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

enum Fail {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type CmdResult = Result<(i32, String), Fail>;

fn usage(e: impl Into<anyhow::Error>) -> Fail {
    Fail::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Fail {
    Fail::Runtime(e.into())
}

pub fn execute<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            return if e.use_stderr() {
                Outcome { code, stdout: String::new(), stderr: text }
            } else {
                Outcome { code, stdout: text, stderr: String::new() }
            };
        }
    };
    let fmt = cli.format;
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, fmt),
        Command::Cal { config } => cmd_cal(&config, fmt),
        Command::Analyze { traces } => cmd_analyze(&traces, fmt),
        Command::Check { trace, quiescence } => cmd_check(&trace, quiescence, fmt),
        Command::Diff { a, b } => cmd_diff(&a, &b, fmt),
        Command::Scenarios(ScenariosCommand::List) => cmd_list(fmt),
        Command::Scenarios(ScenariosCommand::Export { name, mode, out }) => cmd_export(&name, mode, out.as_deref()),
    };
    match result {
        Ok((code, stdout)) => Outcome { code, stdout, stderr: String::new() },
        Err(Fail::Usage(e)) => Outcome { code: EXIT_USAGE, stdout: String::new(), stderr: format!("error: {e:#}\n") },
        Err(Fail::Runtime(e)) => Outcome { code: EXIT_RUNTIME, stdout: String::new(), stderr: format!("error: {e:#}\n") },
    }
}

fn machine(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

pub fn read_trace(path: &Path) -> anyhow::Result<Trace> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Trace::parse(&text).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn cmd_run(a: &RunArgs, fmt: Format) -> CmdResult {
    let cfg = ScenarioConfig::load(&a.config).map_err(usage)?;
    let mut sim = cfg.to_sim();
    if let Some(m) = a.mode {
        sim.federation.mode = m.into();
    }
    if let Some(s) = a.seed {
        sim.seed = s;
    }
    if let Some(h) = a.horizon {
        sim.horizon = h;
    }
    let trace = run(&sim).map_err(runtime)?;
    let path = a
        .trace_out
        .clone()
        .or_else(|| cfg.output.as_ref().and_then(|o| o.trace.clone()))
        .unwrap_or_else(|| a.config.with_extension("trace"));
    std::fs::write(&path, trace.render()).with_context(|| format!("cannot write {}", path.display())).map_err(runtime)?;
    let report = analyze(&trace);
    let tardy = tardy_count(&trace);
    let name = cfg.name.clone().unwrap_or_else(|| a.config.display().to_string());
    let text = match fmt {
        Format::Machine => machine(&json!({
            "scenario": name,
            "mode": sim.federation.mode,
            "seed": sim.seed,
            "horizon": sim.horizon,
            "records": trace.records.len(),
            "tardy": tardy,
            "trace": path,
            "metrics": report,
        })),
        Format::Human => format!(
            "{name}: {} mode, seed {}, {} records, {tardy} tardy\n{}trace written to {}\n",
            sim.federation.mode,
            sim.seed,
            trace.records.len(),
            report.render(),
            path.display()
        ),
    };
    Ok((EXIT_OK, text))
}

fn cmd_cal(path: &Path, fmt: Format) -> CmdResult {
    let cfg = ScenarioConfig::load(path).map_err(usage)?;
    let report = cal(&cfg).map_err(runtime)?;
    Ok((EXIT_OK, if fmt == Format::Machine { machine(&report) } else { report.render() }))
}

fn cmd_analyze(paths: &[PathBuf], fmt: Format) -> CmdResult {
    let mut reports = Vec::new();
    for p in paths {
        let t = read_trace(p).map_err(usage)?;
        reports.push((p.display().to_string(), analyze(&t)));
    }
    let text = match fmt {
        Format::Machine => {
            machine(&reports.iter().map(|(p, r)| json!({ "trace": p, "metrics": r })).collect::<Vec<_>>())
        }
        Format::Human => reports.iter().map(|(p, r)| format!("== {p}\n{}", r.render())).collect(),
    };
    Ok((EXIT_OK, text))
}

fn cmd_check(path: &Path, quiescence: Option<Timestamp>, fmt: Format) -> CmdResult {
    let t = read_trace(path).map_err(usage)?;
    let q = quiescence.unwrap_or_else(|| t.records.iter().map(|r| r.vt).max().unwrap_or(Timestamp::ZERO));
    let causal = check_causal_consistency(&t);
    let eventual = check_eventual_consistency(&t, q).map_err(runtime)?;
    let ok = causal == CausalOutcome::Pass && matches!(eventual, EventualOutcome::Converged { .. });
    let text = match fmt {
        Format::Machine => machine(&json!({ "causal": causal, "eventual": eventual, "pass": ok })),
        Format::Human => {
            let c = match &causal {
                CausalOutcome::Pass => "causal: pass\n".to_string(),
                CausalOutcome::Violation { missing, present, read } => {
                    format!("causal: violation: read {read} reflects {present} but not its cause {missing}\n")
                }
            };
            let e = match &eventual {
                EventualOutcome::Converged { state } => format!("eventual: converged on {state}\n"),
                EventualOutcome::Diverged { states } => {
                    let parts: Vec<String> = states.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    format!("eventual: diverged: {}\n", parts.join(" "))
                }
            };
            c + &e
        }
    };
    Ok((if ok { EXIT_OK } else { EXIT_VIOLATION }, text))
}

fn cmd_diff(a: &Path, b: &Path, fmt: Format) -> CmdResult {
    let (ta, tb) = (read_trace(a).map_err(usage)?, read_trace(b).map_err(usage)?);
    let cmp = compare_logical_traces(&ta, &tb);
    let code = if cmp == LogicalComparison::Equal { EXIT_OK } else { EXIT_VIOLATION };
    let text = match (fmt, &cmp) {
        (Format::Machine, _) => machine(&cmp),
        (Format::Human, LogicalComparison::Equal) => "equal\n".to_string(),
        (Format::Human, LogicalComparison::FirstDivergence(d)) => {
            format!("first divergence at tag {} in {} (entry {})\n", d.tag, d.key, d.index)
        }
    };
    Ok((code, text))
}

fn cmd_list(fmt: Format) -> CmdResult {
    let all = builtin_scenarios();
    let text = match fmt {
        Format::Machine => machine(
            &all.iter()
                .map(|s| json!({ "name": s.name, "mode": s.config.federation.mode, "summary": s.summary }))
                .collect::<Vec<_>>(),
        ),
        Format::Human => all
            .iter()
            .map(|s| format!("{:<32}{:<15}{}\n", s.name, s.config.federation.mode.to_string(), s.summary))
            .collect(),
    };
    Ok((EXIT_OK, text))
}

fn cmd_export(name: &str, mode: Option<Mode>, out: Option<&Path>) -> CmdResult {
    let mut def = builtin(name).ok_or_else(|| usage(anyhow!("no built-in scenario named {name:?}")))?;
    if let Some(m) = mode {
        def = def.in_mode(m.into());
    }
    let mut text = ScenarioConfig::from_scenario(&def).to_json();
    text.push('\n');
    match out {
        Some(p) => {
            std::fs::write(p, &text).with_context(|| format!("cannot write {}", p.display())).map_err(runtime)?;
            Ok((EXIT_OK, String::new()))
        }
        None => Ok((EXIT_OK, text)),
    }
}
