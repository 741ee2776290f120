//! `dbp-eq`: run SER sweeps, self-checks and bandwidth tables.

mod bandwidth;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dbp_eq::harness::run_sweep;
use dbp_eq::verify::{run_checks, VerifyOptions, CHECKS};

use config::{CliConfig, ConfigError};

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "dbp-eq", version, about = "Decentralized LMMSE equalization under colored noise: SER sweeps, self-checks and bandwidth tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo SER sweep and write the CSV report.
    Run(RunArgs),
    /// Run the built-in property checks; exits 1 if any fails.
    Verify(VerifyArgs),
    /// Print closed-form bandwidth next to simulated ledger values.
    Bandwidth(ScenarioArgs),
}

/// Scenario knobs shared by `run` and `bandwidth`. Flags override the
/// config file, which overrides the built-in desk-scale defaults.
#[derive(Args, Debug, Default)]
struct ScenarioArgs {
    /// Flat JSON config file; unknown keys are rejected.
    #[arg(long, value_name = "FILE", conflicts_with = "paper_scale")]
    config: Option<PathBuf>,
    /// Start from the large preset (M=128, C=8, K=8, N=192, 100 trials).
    #[arg(long)]
    paper_scale: bool,
    /// Master RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// BS antennas.
    #[arg(long = "M", value_name = "M")]
    m: Option<usize>,
    /// Target UEs.
    #[arg(long = "K", value_name = "K")]
    k: Option<usize>,
    /// Antenna clusters.
    #[arg(long = "C", value_name = "C")]
    c: Option<usize>,
    /// Noise samples.
    #[arg(long = "N", value_name = "N")]
    n: Option<usize>,
    /// BCD sweeps for entries without their own T.
    #[arg(long = "T", value_name = "T")]
    t: Option<usize>,
    /// Low-rank rank for BCD-LRD entries without their own r (default n_interf).
    #[arg(long = "r", value_name = "R")]
    r: Option<usize>,
    /// Symbols per coherence block.
    #[arg(long)]
    ncoh: Option<usize>,
    /// Interference over thermal in dB.
    #[arg(long, allow_negative_numbers = true)]
    iot: Option<f64>,
    /// Channel model: rayleigh or one_ring.
    #[arg(long)]
    channel: Option<String>,
    /// Constellation: qpsk or qam16.
    #[arg(long)]
    modulation: Option<String>,
    /// Interfering UEs (default K).
    #[arg(long)]
    n_interf: Option<usize>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma list: zf,lmmse,bdac,sdr,cdr,bcd,bcd-lrd; parameters after a
    /// colon, e.g. bcd:T=1, bcd:tol=1e-12, bcd-lrd:T=4,r=4 or r=auto.
    #[arg(long)]
    algorithms: Option<String>,
    /// Comma list of SNR points in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
    /// Channel realizations per SNR point.
    #[arg(long)]
    trials: Option<usize>,
    /// CSV output path (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Directory for the message log of each algorithm's first trial.
    #[arg(long, value_name = "DIR")]
    dump_messages: Option<PathBuf>,
    /// Write the effective config as JSON; feeding it back reproduces the run.
    #[arg(long, value_name = "FILE")]
    dump_config: Option<PathBuf>,
    /// Worker threads (default: DBP_EQ_THREADS, else all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Fill the wallclock_s column (the CSV is then no longer reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Run only checks whose name contains this text.
    #[arg(long)]
    filter: Option<String>,
    /// List the checks and exit.
    #[arg(long)]
    list: bool,
    /// Book this many extra entries on one ledger message (self-test hook).
    #[arg(long, hide = true, default_value_t = 0, allow_negative_numbers = true)]
    inject_ledger_fault: i64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => Ok(cmd_verify(args)),
        Command::Bandwidth(args) => cmd_bandwidth(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn base_config(args: &ScenarioArgs) -> Result<CliConfig, ConfigError> {
    let mut cfg = match (&args.config, args.paper_scale) {
        (Some(path), _) => CliConfig::load(path)?,
        (None, true) => CliConfig::paper_scale(),
        (None, false) => CliConfig::default(),
    };
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut cfg.m, args.m);
    set(&mut cfg.k, args.k);
    set(&mut cfg.c, args.c);
    set(&mut cfg.n, args.n);
    set(&mut cfg.t, args.t);
    set(&mut cfg.ncoh, args.ncoh);
    cfg.r = args.r.or(cfg.r);
    cfg.n_interf = args.n_interf.or(cfg.n_interf);
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.iot {
        cfg.iot = v;
    }
    if let Some(v) = &args.channel {
        cfg.channel = v.clone();
    }
    if let Some(v) = &args.modulation {
        cfg.modulation = v.clone();
    }
    Ok(cfg)
}

fn file_label(label: &str) -> String {
    label.chars().map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '.' { ch } else { '_' }).collect()
}

fn cmd_run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let mut cfg = base_config(&args.scenario)?;
    if let Some(v) = &args.algorithms {
        cfg.algorithms = v.clone();
    }
    if let Some(v) = &args.snr {
        cfg.snr = v.clone();
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    let cfg = cfg.resolved();
    let mut spec = cfg.run_spec()?;
    spec.threads = args.threads;
    spec.timing = args.timing;
    spec.capture_messages = args.dump_messages.is_some();

    if let Some(path) = &args.dump_config {
        fs::write(path, cfg.to_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    let report = run_sweep(&spec)?;
    match &args.out {
        Some(path) => report.save_csv(path).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", report.to_csv()),
    }
    if let Some(dir) = &args.dump_messages {
        write_message_logs(dir, &report.message_logs)?;
    }
    for row in report.rows.iter().filter(|r| r.failed()) {
        eprintln!("FAIL {} at {} dB: {}", row.algorithm, row.snr_db, row.failure.as_deref().unwrap_or("unknown"));
    }
    if report.all_failed() {
        eprintln!("error: every algorithm failed numerically");
        return Ok(ExitCode::from(EXIT_ALL_FAILED));
    }
    Ok(ExitCode::SUCCESS)
}

fn write_message_logs(dir: &Path, logs: &[(String, String)]) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (label, log) in logs {
        let path = dir.join(format!("{}.csv", file_label(label)));
        fs::write(&path, log).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> ExitCode {
    if args.list {
        for c in CHECKS {
            println!("{:<22} {}", c.name, c.summary);
        }
        return ExitCode::SUCCESS;
    }
    let outcomes = run_checks(args.filter.as_deref(), &VerifyOptions { ledger_fault: args.inject_ledger_fault });
    if outcomes.is_empty() {
        eprintln!("no check matches '{}'", args.filter.unwrap_or_default());
        return ExitCode::FAILURE;
    }
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn cmd_bandwidth(args: ScenarioArgs) -> anyhow::Result<ExitCode> {
    let cfg = base_config(&args)?.resolved();
    let spec = cfg.run_spec()?;
    let rows = bandwidth::table(&spec.cfg, spec.sweeps, spec.rank)?;
    print!("{}", bandwidth::render(&spec.cfg, spec.sweeps, spec.rank, &rows));
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn labels_become_file_names() {
        assert_eq!(file_label("bcd-lrd:T=4,r=4"), "bcd-lrd_T_4_r_4");
        assert_eq!(file_label("bcd:tol=1e-12"), "bcd_tol_1e-12");
    }
}
