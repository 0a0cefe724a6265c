//! `adalloc`: generate synthetic logs, train dual prices, replay policies and
//! compare their reports.

mod config;

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adalloc::datagen::{generate, GenSpec};
use adalloc::experiment::{build_policy, ghp_baseline, policy_table, resolve_targets, train};
use adalloc::io::{
    read_campaigns, read_request_records, read_requests, write_campaigns, write_requests,
    DualsDocument,
};
use adalloc::model::{validate_log, CampaignTable, Request};
use adalloc::policy::PolicyKind;
use adalloc::replay::{compare, comparison_table, fingerprint, replay, ReplayReport};
use adalloc::Error;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

/// Budget-constrained ad allocation with dual prices and auction replay.
#[derive(Debug, Parser)]
#[command(name = "adalloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic campaign table and request log.
    Gen(GenArgs),
    /// Check the request log of a run config against its campaign table.
    Validate(RunArgs),
    /// Train dual prices for the lp policy and write them as JSON.
    Train(RunArgs),
    /// Replay the request log through a policy and write its report.
    Replay(ReplayArgs),
    /// Compare replay reports against a baseline report.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Generator spec (JSON); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed overriding the generator spec's.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving campaigns.csv and requests.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory overriding the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Policy overriding the config's: ghp, ot or lp.
    #[arg(long)]
    policy: Option<String>,
    /// Seed for sampled accounting, overriding the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory overriding the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Baseline report (JSON).
    baseline: PathBuf,
    /// Candidate reports (JSON), one table row each.
    #[arg(required = true)]
    candidates: Vec<PathBuf>,
    /// CSV file for the table; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failed command: message for stderr plus the process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_IO: u8 = 4;

impl Failure {
    fn validation(message: impl Display) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, err: impl Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match err {
            Error::Io(_) => EXIT_IO,
            Error::Infeasible(_) => EXIT_INFEASIBLE,
            _ => EXIT_VALIDATION,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn load_config(path: &Path, out: Option<PathBuf>) -> Result<RunConfig, Failure> {
    let mut config = RunConfig::load(path).map_err(|e| match e {
        Error::Io(io) => Failure::io(path, io),
        other => Failure::validation(format!("{}: {other}", path.display())),
    })?;
    if let Some(out) = out {
        config.out_dir = out;
    }
    Ok(config)
}

fn load_campaigns(path: &Path) -> Result<(CampaignTable, Vec<u8>), Failure> {
    let bytes = read(path)?;
    let table = read_campaigns(&bytes[..])
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    Ok((table, bytes))
}

/// Reads a request log, refusing it unless it validates cleanly.
fn load_log(path: &Path, campaigns: &CampaignTable) -> Result<(Vec<Request>, Vec<u8>), Failure> {
    let bytes = read(path)?;
    let report = validate_log(read_request_records(&bytes[..]), campaigns);
    if let Some(first) = report.violations.first() {
        return Err(Failure::validation(format!(
            "{}: {} violation(s), first: {}",
            path.display(),
            report.violations.len(),
            serde_json::to_string(first).expect("violation serializes")
        )));
    }
    let requests = read_requests(&bytes[..], campaigns)?;
    Ok((requests, bytes))
}

fn cmd_gen(args: GenArgs) -> CmdResult {
    let mut spec = match &args.config {
        Some(path) => serde_json::from_slice::<GenSpec>(&read(path)?)
            .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?,
        None => GenSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let generated = generate(&spec)?;
    let mut campaigns = Vec::new();
    write_campaigns(&mut campaigns, &generated.campaigns)?;
    let mut requests = Vec::new();
    write_requests(&mut requests, &generated.requests, &generated.campaigns)?;
    write(&args.out.join("campaigns.csv"), campaigns)?;
    write(&args.out.join("requests.jsonl"), requests)?;
    eprintln!(
        "wrote {} campaigns and {} requests to {}",
        generated.campaigns.len(),
        generated.requests.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_validate(args: RunArgs) -> CmdResult {
    let config = load_config(&args.config, args.out)?;
    let (campaigns, _) = load_campaigns(&config.campaigns)?;
    let bytes = read(&config.log)?;
    let report = validate_log(read_request_records(&bytes[..]), &campaigns);
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    if report.is_valid() {
        Ok(())
    } else {
        Err(Failure::validation(format!(
            "{}: {} violation(s)",
            config.log.display(),
            report.violations.len()
        )))
    }
}

fn cmd_train(args: RunArgs) -> CmdResult {
    let config = load_config(&args.config, args.out)?;
    let problem = config.problem()?;
    let (campaigns, _) = load_campaigns(&config.campaigns)?;
    let (log, _) = load_log(config.train_log(), &campaigns)?;
    let table = policy_table(&campaigns, config.goal_override);
    let baseline = ghp_baseline(&log, &table, &problem);
    let targets = resolve_targets(&problem, &baseline, &config.uplift);
    match train(&log, &table, &targets, &config.trainer) {
        Ok(trained) => {
            let doc = DualsDocument::new(&trained.duals, &campaigns, trained.trace);
            let mut bytes = serde_json::to_vec_pretty(&doc).expect("duals serialize");
            bytes.push(b'\n');
            let path = config.duals_path();
            write(&path, bytes)?;
            eprintln!(
                "{:?} training (converged: {}), t_cy {:.6}, t_vy {:.6}; wrote {}",
                trained.method,
                trained.converged,
                targets.t_cy,
                targets.t_vy,
                path.display()
            );
            Ok(())
        }
        Err(Error::Infeasible(report)) => {
            let path = config.out_dir.join("infeasible.json");
            let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
            bytes.push(b'\n');
            write(&path, bytes)?;
            Err(Failure {
                code: EXIT_INFEASIBLE,
                message: format!("{}; wrote {}", Error::Infeasible(report), path.display()),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_replay(args: ReplayArgs) -> CmdResult {
    let mut config = load_config(&args.config, args.out)?;
    if let Some(policy) = args.policy {
        config.policy = policy;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.check_label().map_err(Failure::from)?;
    let kind: PolicyKind = config.policy.parse()?;
    let problem = config.problem()?;
    let (campaigns, campaign_bytes) = load_campaigns(&config.campaigns)?;
    let (log, log_bytes) = load_log(&config.log, &campaigns)?;
    let train_log = if config.train_log() == config.log.as_path() {
        None
    } else {
        Some(load_log(config.train_log(), &campaigns)?.0)
    };
    let duals = match kind {
        PolicyKind::Lp => {
            let path = config.duals_path();
            let doc: DualsDocument = serde_json::from_slice(&read(&path)?)
                .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
            Some(doc.to_params(&campaigns)?)
        }
        _ => None,
    };
    let table = policy_table(&campaigns, config.goal_override);
    let policy = build_policy(
        kind,
        train_log.as_deref().unwrap_or(&log),
        &table,
        &problem,
        duals.as_ref(),
    )?;
    let fp = fingerprint(&log_bytes, &campaign_bytes, &problem);
    let mut run = replay(&log, &campaigns, policy.as_ref(), config.accounting(), &fp);
    let label = config.label();
    run.report.policy = label.clone();
    let report_path = config.out_dir.join(format!("report_{label}.json"));
    write(&report_path, run.report.to_json())?;
    write(
        &config.out_dir.join(format!("buckets_{label}.csv")),
        run.report.bucket_csv(),
    )?;
    let t = &run.report.totals;
    eprintln!(
        "{label}: rev {:.6}, clk {:.6}, cvn {:.6}; wrote {}",
        t.rev,
        t.clk,
        t.cvn,
        report_path.display()
    );
    Ok(())
}

fn load_report(path: &Path) -> Result<ReplayReport, Failure> {
    ReplayReport::from_json(&read(path)?)
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn cmd_compare(args: CompareArgs) -> CmdResult {
    let baseline = load_report(&args.baseline)?;
    let rows = args
        .candidates
        .iter()
        .map(|path| Ok(compare(&load_report(path)?, &baseline)?))
        .collect::<Result<Vec<_>, Failure>>()?;
    let table = comparison_table(&rows);
    match &args.out {
        Some(path) => write(path, table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Train(args) => cmd_train(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
