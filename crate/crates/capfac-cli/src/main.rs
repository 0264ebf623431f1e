//! Command-line front end: instance/mechanism I/O, audits, curves, and the
//! impossibility demonstration.
//!
//! Exit codes: 0 on success (including audits that pass), 2 when an audit
//! fails with a witness or a verification-style claim does not confirm,
//! 1 on any error. Identical flags and seed produce byte-identical output.

use capfac::alloc::{impossibility_demonstration, DEFAULT_SWEEP_BUDGET};
use capfac::audit::{
    audit_dic, audit_dic_at_capacity_n, audit_dic_truthful_others, GridSpec, DEFAULT_AUDIT_BUDGET,
};
use capfac::bounds::{
    default_displacement, optimal_not_dic_witness, ratio_curve, relocation_lower_bound_report,
};
use capfac::mechanism::{evaluate, is_uncompromising_on_grid, MechanismSpec};
use capfac::model::{resolve_equilibrium, Instance, Location};
use capfac::rational::parse_rational;
use capfac::welfare::{optimal_location, ratio_report};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "capfac")]
#[command(about = "Workbench for capacity-constrained facility location mechanisms")]
#[command(version)]
struct Cli {
    /// Cap on worker threads for parallel scans (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed for randomized samplers; the built-in commands are fully
    /// deterministic, so this is recorded for reproducibility only
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Enumeration budget override (also via CAPFAC_BUDGET)
    #[arg(long, global = true)]
    budget: Option<u64>,

    /// Write output here instead of stdout
    #[arg(short = 'o', long = "out", global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve the induced subgame at a facility location
    Equilibrium {
        #[arg(short = 'i', long = "instance")]
        instance: PathBuf,
        /// Facility location (rational, e.g. 7/20 or 0.35)
        #[arg(short = 's', long = "facility")]
        facility: String,
    },
    /// Evaluate a mechanism on an instance's locations as truthful reports
    RunMechanism {
        #[arg(short = 'm', long = "mechanism")]
        mechanism: PathBuf,
        #[arg(short = 'i', long = "instance")]
        instance: PathBuf,
    },
    /// Welfare-optimal facility location
    Optimal {
        #[arg(short = 'i', long = "instance")]
        instance: PathBuf,
    },
    /// Mechanism welfare vs optimal welfare with the exact ratio
    Ratio {
        #[arg(short = 'i', long = "instance")]
        instance: PathBuf,
        #[arg(short = 'm', long = "mechanism")]
        mechanism: PathBuf,
    },
    /// Exhaustive DIC audit over a grid; exit 2 with a witness on failure
    AuditDic {
        #[arg(short = 'm', long = "mechanism")]
        mechanism: PathBuf,
        #[arg(short)]
        n: usize,
        #[arg(short)]
        k: usize,
        #[arg(short = 'q', long = "grid", default_value_t = 6)]
        grid: u32,
        /// Restrict the scan to truthful others (weaker, exploration only)
        #[arg(long)]
        truthful_others: bool,
    },
    /// Exhaustive uncompromising-property check over a grid
    AuditUncompromising {
        #[arg(short = 'm', long = "mechanism")]
        mechanism: PathBuf,
        #[arg(short)]
        n: usize,
        #[arg(short = 'q', long = "grid", default_value_t = 6)]
        grid: u32,
    },
    /// CSV bound curve: DIC lower bound, median upper bound, empirical
    /// worst-case ratios per capacity
    RatioCurve {
        #[arg(short)]
        n: usize,
        #[arg(short = 'q', long = "grid", default_value_t = 6)]
        grid: u32,
        /// Local refinement rounds around the empirical incumbent
        #[arg(long = "refine", default_value_t = 0)]
        refine: u32,
    },
    /// Two-scenario manipulation witness against the welfare-optimal rule
    Theorem41 {
        #[arg(short)]
        n: usize,
        #[arg(short)]
        k: usize,
        /// Displacement (rational); defaults to a safely small value
        #[arg(long)]
        eps: Option<String>,
    },
    /// Clustered profile whose relocation pins an uncompromising
    /// mechanism's output; scores the realized ratio
    Theorem43 {
        #[arg(short = 'm', long = "mechanism")]
        mechanism: PathBuf,
        #[arg(short)]
        n: usize,
        #[arg(short)]
        k: usize,
        /// Cluster width (rational), defaults to 1/50
        #[arg(long, default_value = "1/50")]
        eps: String,
    },
    /// Allocation-anonymity impossibility: proof replay plus exhaustive
    /// table sweep on the two-point grid
    ImpossibilityDemo {
        #[arg(short, default_value_t = 3)]
        n: usize,
        #[arg(short, default_value_t = 2)]
        k: usize,
    },
}

#[derive(Serialize)]
struct LocationOut {
    s: Location,
}

#[derive(Serialize)]
struct OptimalOut {
    s: Location,
    welfare: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    #[cfg(feature = "parallel")]
    if let Some(threads) = cli.threads {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {err}");
            return ExitCode::from(1);
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cli.threads;

    match run(cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    let budget = resolve_budget(cli.budget)?;
    let (payload, code) = dispatch(&cli.command, budget)?;
    match &cli.out {
        Some(path) => fs::write(path, payload).map_err(|e| e.to_string())?,
        None => print!("{payload}"),
    }
    Ok(ExitCode::from(code))
}

fn resolve_budget(flag: Option<u64>) -> Result<Option<u64>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("CAPFAC_BUDGET") {
        Ok(text) => text
            .parse::<u64>()
            .map(Some)
            .map_err(|_| format!("CAPFAC_BUDGET is not a number: {text}")),
        Err(_) => Ok(None),
    }
}

fn dispatch(command: &Command, budget: Option<u64>) -> Result<(String, u8), String> {
    let audit_budget = budget.unwrap_or(DEFAULT_AUDIT_BUDGET);
    match command {
        Command::Equilibrium { instance, facility } => {
            let instance = read_instance(instance)?;
            let s = Location::parse(facility).map_err(|e| e.to_string())?;
            let outcome = resolve_equilibrium(&instance, s);
            Ok((to_json(&outcome)?, 0))
        }
        Command::RunMechanism {
            mechanism,
            instance,
        } => {
            let mechanism = read_mechanism(mechanism)?;
            let instance = read_instance(instance)?;
            let s = evaluate(&mechanism, instance.locations()).map_err(|e| e.to_string())?;
            Ok((to_json(&LocationOut { s })?, 0))
        }
        Command::Optimal { instance } => {
            let instance = read_instance(instance)?;
            let (s, welfare) = optimal_location(&instance);
            Ok((
                to_json(&OptimalOut {
                    s,
                    welfare: capfac::rational::format_rational(&welfare),
                })?,
                0,
            ))
        }
        Command::Ratio {
            instance,
            mechanism,
        } => {
            let instance = read_instance(instance)?;
            let mechanism = read_mechanism(mechanism)?;
            let report = ratio_report(&instance, &mechanism).map_err(|e| e.to_string())?;
            Ok((to_json(&report)?, 0))
        }
        Command::AuditDic {
            mechanism,
            n,
            k,
            grid,
            truthful_others,
        } => {
            let mechanism = read_mechanism(mechanism)?;
            let grid = GridSpec::new(*grid).map_err(|e| e.to_string())?;
            let verdict = if *truthful_others {
                audit_dic_truthful_others(&mechanism, *n, *k, &grid, audit_budget)
            } else if *k == *n {
                audit_dic_at_capacity_n(&mechanism, *n, &grid, audit_budget)
            } else {
                audit_dic(&mechanism, *n, *k, &grid, audit_budget)
            }
            .map_err(|e| e.to_string())?;
            let code = if verdict.passed { 0 } else { 2 };
            Ok((to_json(&verdict)?, code))
        }
        Command::AuditUncompromising { mechanism, n, grid } => {
            let mechanism = read_mechanism(mechanism)?;
            let verdict = is_uncompromising_on_grid(&mechanism, *n, *grid, audit_budget)
                .map_err(|e| e.to_string())?;
            let code = if verdict.passed { 0 } else { 2 };
            Ok((to_json(&verdict)?, code))
        }
        Command::RatioCurve { n, grid, refine } => {
            let grid = GridSpec::new(*grid).map_err(|e| e.to_string())?;
            let curve = ratio_curve(*n, &grid, *refine, audit_budget).map_err(|e| e.to_string())?;
            Ok((curve.to_csv(), 0))
        }
        Command::Theorem41 { n, k, eps } => {
            let eps = match eps {
                Some(text) => parse_rational(text).map_err(|e| e.to_string())?,
                None => default_displacement(*n, (*k).max(1)),
            };
            let witness = optimal_not_dic_witness(*n, *k, eps).map_err(|e| e.to_string())?;
            let code = if witness.confirmed { 0 } else { 2 };
            Ok((to_json(&witness)?, code))
        }
        Command::Theorem43 {
            mechanism,
            n,
            k,
            eps,
        } => {
            let mechanism = read_mechanism(mechanism)?;
            let eps = parse_rational(eps).map_err(|e| e.to_string())?;
            let report = relocation_lower_bound_report(&mechanism, *n, *k, eps)
                .map_err(|e| e.to_string())?;
            Ok((to_json(&report)?, 0))
        }
        Command::ImpossibilityDemo { n, k } => {
            let budget = budget.unwrap_or(DEFAULT_SWEEP_BUDGET);
            let report = impossibility_demonstration(*n, *k, budget).map_err(|e| e.to_string())?;
            let confirmed = report.candidate_replay.verified
                && report
                    .sweep
                    .as_ref()
                    .is_none_or(|s| s.dic_passing_anonymous == 0 && s.anonymous > 0);
            let code = if confirmed { 0 } else { 2 };
            Ok((to_json(&report)?, code))
        }
    }
}

fn read_instance(path: &PathBuf) -> Result<Instance, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_mechanism(path: &PathBuf) -> Result<MechanismSpec, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| e.to_string())
}
