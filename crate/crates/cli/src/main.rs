//! `ergodic`: runs bound computations and witness searches from JSON configs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod report;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use commands::{CommandName, RunOptions};
use config::{ExperimentConfig, Format, OutputSpec};
use report::{Report, Table};

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_EXHAUSTED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "ergodic", version, about = "Local-stability bounds and witnesses for ergodic averages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Least n whose averages vary by at most eps on [n, K(n)].
    StabilitySearch(JobArgs),
    /// The explicit bound below which a mean-stability witness exists.
    MeanBound(JobArgs),
    /// Least n whose exceptional set on [n, K(n)] has measure at most lambda2.
    PointwiseSearch(JobArgs),
    /// The explicit bound below which a pointwise witness exists.
    PetBound(JobArgs),
    /// Checks the maximal ergodic inequality and its corollaries.
    MaximalCheck(JobArgs),
    /// Upcrossing profile with the Bishop and Ivanov inequalities.
    Upcrossings(JobArgs),
    /// Tabulates the projection, upcrossing and fluctuation bounds side by side.
    CompareBounds(JobArgs),
    /// Convergence-rate certificate from the norm of the limit.
    RateFromNorm(JobArgs),
    /// Block-rotation system encoding a halting table.
    Specker(JobArgs),
}

impl Command {
    fn split(self) -> (CommandName, JobArgs) {
        match self {
            Command::StabilitySearch(a) => (CommandName::StabilitySearch, a),
            Command::MeanBound(a) => (CommandName::MeanBound, a),
            Command::PointwiseSearch(a) => (CommandName::PointwiseSearch, a),
            Command::PetBound(a) => (CommandName::PetBound, a),
            Command::MaximalCheck(a) => (CommandName::MaximalCheck, a),
            Command::Upcrossings(a) => (CommandName::Upcrossings, a),
            Command::CompareBounds(a) => (CommandName::CompareBounds, a),
            Command::RateFromNorm(a) => (CommandName::RateFromNorm, a),
            Command::Specker(a) => (CommandName::Specker, a),
        }
    }
}

/// Flag values are read as JSON when they parse as JSON and as strings
/// otherwise, then validated exactly like config keys.
#[derive(Debug, Args)]
struct JobArgs {
    /// Config file; repeat to run several jobs.
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    /// Jobs run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Recompute the reported quantities and record the outcome.
    #[arg(long)]
    verify: bool,
    /// Print big integers in full.
    #[arg(long)]
    full: bool,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Decimal digits allowed per bound evaluation.
    #[arg(long)]
    digit_budget: Option<u64>,

    /// System recipe as JSON, e.g. '{"kind":"identity","dim":2}'.
    #[arg(long)]
    system: Option<String>,
    /// Coordinates as a JSON list, or a pattern object.
    #[arg(long)]
    f: Option<String>,
    /// f64 or rational.
    #[arg(long)]
    scalar: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    lambda1: Option<String>,
    #[arg(long)]
    lambda2: Option<String>,
    /// Growth function: identity, n+c, cn, cn+d, n^k, b^n, or a JSON spec.
    #[arg(long = "K")]
    growth: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    /// Downcrossing count for the Ivanov check.
    #[arg(long)]
    downcrossings: Option<String>,
    #[arg(long)]
    norm_f: Option<String>,
    #[arg(long)]
    norm_inf: Option<String>,
    #[arg(long)]
    norm_fstar: Option<String>,
    /// isometry or nonexpansive.
    #[arg(long)]
    mode: Option<String>,
    /// Halting table as JSON, machine index to halting step.
    #[arg(long)]
    table: Option<String>,
    /// Number of blocks.
    #[arg(long = "N")]
    blocks: Option<String>,
    #[arg(long)]
    trace_cap: Option<String>,
    #[arg(long)]
    probe_limit: Option<String>,
    #[arg(long)]
    kachurovskii_constant: Option<String>,
}

impl JobArgs {
    fn flag_config(&self) -> Result<ExperimentConfig, String> {
        let pairs = [
            ("system", &self.system),
            ("f", &self.f),
            ("scalar", &self.scalar),
            ("eps", &self.eps),
            ("lambda", &self.lambda),
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("K", &self.growth),
            ("horizon", &self.horizon),
            ("n", &self.n),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("downcrossings", &self.downcrossings),
            ("norm_f", &self.norm_f),
            ("norm_inf", &self.norm_inf),
            ("norm_fstar", &self.norm_fstar),
            ("mode", &self.mode),
            ("table", &self.table),
            ("N", &self.blocks),
            ("trace_cap", &self.trace_cap),
            ("probe_limit", &self.probe_limit),
            ("kachurovskii_constant", &self.kachurovskii_constant),
        ];
        let mut map = Map::new();
        for (key, value) in pairs {
            if let Some(text) = value {
                let v = serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.clone()));
                map.insert(key.to_string(), v);
            }
        }
        let mut cfg: ExperimentConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| format!("flags: {e}"))?;
        cfg.digit_budget = self.digit_budget;
        if self.output.is_some() || self.format.is_some() {
            cfg.output = Some(OutputSpec {
                path: self.output.clone(),
                format: self.format,
            });
        }
        Ok(cfg)
    }
}

/// Output path (stdout when `None`) and format.
type Destination = (Option<PathBuf>, Format);

/// What one job produced.
enum Outcome {
    Done(Report),
    /// Budget or cap ran out inside the library.
    Exhausted(String),
    Invalid(String),
}

impl Outcome {
    fn exit_code(&self) -> u8 {
        match self {
            Outcome::Done(r) if r.verified == Some(false) => EXIT_VERIFY_FAILED,
            Outcome::Done(r) if r.exhausted => EXIT_EXHAUSTED,
            Outcome::Done(_) => 0,
            Outcome::Exhausted(_) => EXIT_EXHAUSTED,
            Outcome::Invalid(_) => EXIT_INVALID,
        }
    }

    fn body(&self, command: CommandName) -> Value {
        match self {
            Outcome::Done(r) => r.body.clone(),
            Outcome::Exhausted(msg) | Outcome::Invalid(msg) => json!({ "command": command.as_str(), "error": msg }),
        }
    }

    fn table(&self, command: CommandName) -> Table {
        match self {
            Outcome::Done(r) => r.table.clone().unwrap_or_else(|| Table::flatten(&r.body)),
            _ => Table::flatten(&self.body(command)),
        }
    }
}

fn run_job(command: CommandName, cfg: &Result<ExperimentConfig, String>, opts: RunOptions) -> Outcome {
    let cfg = match cfg {
        Ok(c) => c,
        Err(msg) => return Outcome::Invalid(msg.clone()),
    };
    match commands::run(command, cfg, opts) {
        Ok(r) => Outcome::Done(r),
        Err(e) if e.is_exhaustion() => Outcome::Exhausted(e.to_string()),
        Err(e) => Outcome::Invalid(e.to_string()),
    }
}

fn job_configs(args: &JobArgs) -> Vec<Result<ExperimentConfig, String>> {
    let flags = args.flag_config();
    let load = |base: ExperimentConfig| -> Result<ExperimentConfig, String> {
        let mut cfg = base;
        cfg.overlay(flags.clone()?);
        Ok(cfg)
    };
    if args.configs.is_empty() {
        return vec![load(ExperimentConfig::default())];
    }
    args.configs
        .iter()
        .map(|path| ExperimentConfig::load(path).map_err(|e| e.to_string()).and_then(load))
        .collect()
}

fn run_all(command: CommandName, configs: &[Result<ExperimentConfig, String>], opts: RunOptions, jobs: usize) -> Vec<Outcome> {
    let slots: Vec<Mutex<Option<Outcome>>> = configs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, configs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(i) else { break };
                let outcome = run_job(command, cfg, opts);
                *slots[i].lock().expect("no job panics while holding a slot") = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every job ran"))
        .collect()
}

fn render(command: CommandName, outcomes: &[&Outcome], format: Format) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    match format {
        Format::Json => {
            let value = match outcomes {
                [one] => one.body(command),
                many => Value::Array(many.iter().map(|o| o.body(command)).collect()),
            };
            let text = serde_json::to_string_pretty(&value).map_err(|e| e.to_string())?;
            out.extend_from_slice(text.as_bytes());
            out.push(b'\n');
        }
        Format::Csv => {
            for (i, o) in outcomes.iter().enumerate() {
                if i > 0 {
                    out.push(b'\n');
                }
                o.table(command).write_csv(&mut out).map_err(|e| e.to_string())?;
            }
        }
    }
    Ok(out)
}

fn emit(bytes: &[u8], path: Option<&PathBuf>) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| format!("writing {}: {e}", p.display())),
        None => std::io::stdout().write_all(bytes).map_err(|e| e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { 0 });
        }
    };
    let (command, args) = cli.command.split();
    let opts = RunOptions {
        verify: args.verify,
        full: args.full,
    };
    let configs = job_configs(&args);
    let outcomes = run_all(command, &configs, opts, args.jobs);

    // Jobs sharing an output destination and format are written together.
    let mut groups: Vec<(Destination, Vec<&Outcome>)> = Vec::new();
    for (cfg, outcome) in configs.iter().zip(&outcomes) {
        let spec = cfg.as_ref().ok().and_then(|c| c.output.clone()).unwrap_or_default();
        let key = (spec.path, spec.format.unwrap_or(Format::Json));
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, list)) => list.push(outcome),
            None => groups.push((key, vec![outcome])),
        }
    }
    let mut code = 0;
    for ((path, format), list) in &groups {
        if let Err(msg) = render(command, list, *format).and_then(|bytes| emit(&bytes, path.as_ref())) {
            eprintln!("error: {msg}");
            code = EXIT_INVALID;
        }
    }
    for o in &outcomes {
        match o {
            Outcome::Invalid(msg) => eprintln!("error: {msg}"),
            Outcome::Exhausted(msg) => eprintln!("exhausted: {msg}"),
            Outcome::Done(r) if r.verified == Some(false) => eprintln!("verification failed"),
            Outcome::Done(_) => {}
        }
    }
    let worst = outcomes.iter().map(Outcome::exit_code).fold(code, |acc, c| {
        // Validation errors outrank failed checks, which outrank exhaustion.
        let rank = |c: u8| match c {
            EXIT_INVALID => 3,
            EXIT_VERIFY_FAILED => 2,
            EXIT_EXHAUSTED => 1,
            _ => 0,
        };
        if rank(c) > rank(acc) {
            c
        } else {
            acc
        }
    });
    ExitCode::from(worst)
}
