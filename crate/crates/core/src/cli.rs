//! Command-line front end.
//!
//! Exit codes are a stable contract: 0 on success, 1 when a property
//! check or reproduction criterion fails, 2 on usage errors.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::acceptance::{run_criterion, CRITERIA};
use crate::analysis::{check_properties, check_send_log, TrialSummary};
use crate::engine::{run, SimConfig};
use crate::harness::{execute, Campaign};
use crate::topology::build_gnk;

#[derive(Parser)]
#[command(
    name = "vcspread",
    about = "Round-synchronous information-spreading simulator on clique chains",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Simulation config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also print phase boundaries and failure events.
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the clique-chain graph G(n,k) as an edge list.
    Gen {
        n: usize,
        k: usize,
        /// Output file; defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a single trial and print its summary.
    Run(RunArgs),
    /// Expand and execute a campaign file.
    Sweep {
        /// Campaign description (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for per-trial JSONL and the aggregate CSV.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all cores).
        #[arg(long, env = "VCSPREAD_WORKERS", default_value_t = 0)]
        workers: usize,
        /// Override the campaign's trials-per-cell.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Run a single trial with full recording and check every property.
    Check(RunArgs),
    /// Reproduce one acceptance criterion (1..=9), or all of them.
    Repro {
        /// Criterion id; omit to run all.
        id: Option<usize>,
    },
}

fn load_sim_config(args: &RunArgs) -> Result<SimConfig, String> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| format!("{}: {e}", args.config.display()))?;
    let mut cfg: SimConfig =
        toml::from_str(&text).map_err(|e| format!("{}: {e}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn print_summary(summary: &TrialSummary) {
    let eff = &summary.effective;
    println!(
        "protocol={} n={} k={} q={} seed={} (tau={} tau'={} T={})",
        eff.protocol.name(),
        eff.n,
        eff.k,
        eff.q,
        eff.seed,
        eff.tau,
        eff.tau_prime,
        eff.fresh_threshold
    );
    println!("survivors: {}", summary.survivors);
    match summary.completion_round {
        Some(r) => println!("completed at round {r} after {} phases", summary.phases),
        None => println!("incomplete at horizon {}", eff.horizon),
    }
    println!("digest: {}", summary.digest);
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode, String> {
    let cfg = load_sim_config(args)?;
    let topo = build_gnk(cfg.n, cfg.k).map_err(|e| e.to_string())?;
    let trace = run(cfg, &topo).map_err(|e| e.to_string())?;
    if args.verbose {
        for (kind, round) in &trace.boundaries {
            println!("round {round}: {kind:?} begins");
        }
        for (round, node) in &trace.fail_events {
            println!("round {round}: node {node} fails");
        }
    }
    print_summary(&TrialSummary::from_trace(&trace));
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: &RunArgs) -> Result<ExitCode, String> {
    let mut cfg = load_sim_config(args)?;
    cfg.record_sends = true;
    cfg.record_snapshots = true;
    let topo = build_gnk(cfg.n, cfg.k).map_err(|e| e.to_string())?;
    let trace = run(cfg, &topo).map_err(|e| e.to_string())?;
    print_summary(&TrialSummary::from_trace(&trace));

    let mut clean = true;
    let replay = check_send_log(&trace, &topo).map_err(|e| e.to_string())?;
    println!(
        "replay: phase_separation={} repetition={} conservation={} completion_match={} filler_invariance={}",
        replay.phase_sep_violations,
        replay.repetition_violations,
        replay.conservation_violations,
        replay.completion_matches,
        replay.filler_free_knowledge_matches
    );
    clean &= replay.clean();

    if trace.fail_events.is_empty() {
        let props = check_properties(&trace, &topo).map_err(|e| e.to_string())?;
        println!(
            "structure: distance={} init_buff={} p1={} p2={} p3={} p4={}",
            props.distance_violations,
            props.init_buff_violations,
            props.p1_violations,
            props.p2_violations,
            props.p3_violations,
            props.p4_violations
        );
        if args.verbose {
            for v in &props.per_phase {
                println!(
                    "  phase {}: p1={} p2={} p3={} p4={}",
                    v.phase, v.p1, v.p2, v.p3, v.p4
                );
            }
        }
        clean &= props.clean();
    } else {
        println!("structure: skipped (run had failures)");
    }

    if clean {
        println!("check: PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("check: FAIL");
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_sweep(
    config: &PathBuf,
    out: &PathBuf,
    workers: usize,
    trials: Option<usize>,
) -> Result<ExitCode, String> {
    let mut campaign =
        Campaign::load(config).map_err(|e| format!("{}: {e}", config.display()))?;
    if let Some(t) = trials {
        campaign.trials = t;
    }
    let report = execute(&campaign, out, workers).map_err(|e| e.to_string())?;
    for s in &report.skipped {
        eprintln!("skipped cell: {s}");
    }
    for f in &report.failed_trials {
        eprintln!("failed trial: {f}");
    }
    for cell in &report.sweep.cells {
        println!(
            "{} n={} k={} q={}: trials={} success={:.2} mean={:?} p95={:?}",
            cell.protocol,
            cell.n,
            cell.k,
            cell.q,
            cell.trials,
            cell.success_rate,
            cell.mean_rounds.map(|m| m.round()),
            cell.p95_rounds
        );
    }
    println!("wrote {}", report.csv_path.display());
    if report.failed_trials.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_repro(id: Option<usize>) -> Result<ExitCode, String> {
    let ids: Vec<usize> = match id {
        Some(i) if CRITERIA.iter().any(|&(c, _)| c == i) => vec![i],
        Some(i) => return Err(format!("no criterion {i}; valid ids are 1..={}", CRITERIA.len())),
        None => CRITERIA.iter().map(|&(c, _)| c).collect(),
    };
    let mut all_pass = true;
    for i in ids {
        let report = run_criterion(i);
        println!("{}", report.line());
        all_pass &= report.pass;
    }
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

/// Entry point for the binary; returns the process exit code.
pub fn run_cli() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen { n, k, out } => build_gnk(*n, *k)
            .map_err(|e| e.to_string())
            .and_then(|topo| {
                let text = topo.to_edge_list();
                match out {
                    Some(path) => fs::write(path, text).map_err(|e| e.to_string())?,
                    None => print!("{text}"),
                }
                Ok(ExitCode::SUCCESS)
            }),
        Command::Run(args) => cmd_run(args),
        Command::Check(args) => cmd_check(args),
        Command::Sweep {
            config,
            out,
            workers,
            trials,
        } => cmd_sweep(config, out, *workers, *trials),
        Command::Repro { id } => cmd_repro(*id),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
