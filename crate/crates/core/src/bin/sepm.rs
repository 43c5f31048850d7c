use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use sepm_core::calibrate::calibrate;
use sepm_core::profile::{Profile, PROFILE_ENV};
use sepm_core::routing::{truth_table, TopologySpec};
use sepm_core::scenario::{run_scenario, RunOptions, Scenario, ScenarioOutcome};
use sepm_core::Error;

#[derive(Parser)]
#[command(
    name = "sepm",
    version,
    about = "Electropermanent-magnet valve network simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenario files or bundled scenarios.
    Run {
        #[arg(required = true, value_name = "SCENARIO")]
        scenarios: Vec<String>,
        /// Output directory; each scenario writes into a subdirectory named after it.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Print the compiled schedule without executing it.
        #[arg(long)]
        dry_run: bool,
        /// Seed for stochastic occlusion.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scenarios run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Valve registry to start from and update (single scenario only).
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Print the truth table of a topology: binary, tree:K, six-port, dual-tree, mix-decoder[:K].
    Truthtable {
        topology: String,
        #[arg(long)]
        csv: bool,
    },
    /// Fit a profile to the calibration targets and report residuals.
    Calibrate {
        /// Bundled profile name or path; defaults to $SEPM_PROFILE, then the bundled default.
        profile: Option<String>,
        #[arg(long)]
        max_iterations: Option<u32>,
        /// Write the fitted profile here.
        #[arg(long)]
        write: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenarios,
            out,
            dry_run,
            seed,
            jobs,
            registry,
        } => cmd_run(&scenarios, &out, dry_run, seed, jobs, registry),
        Command::Truthtable { topology, csv } => cmd_truthtable(&topology, csv),
        Command::Calibrate {
            profile,
            max_iterations,
            write,
        } => cmd_calibrate(profile.as_deref(), max_iterations, write),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run_one(reference: &str, out: &Path, opts: &RunOptions) -> Result<ScenarioOutcome, Error> {
    let (scenario, base) = Scenario::locate(reference)?;
    let outcome = run_scenario(&scenario, base.as_deref(), opts)?;
    if opts.dry_run {
        return Ok(outcome);
    }
    outcome.write(&out.join(&scenario.name))?;
    if let (Some(path), Some(reg)) = (&opts.registry, &outcome.registry) {
        reg.persist(path)?;
    }
    Ok(outcome)
}

fn cmd_run(
    scenarios: &[String],
    out: &Path,
    dry_run: bool,
    seed: u64,
    jobs: usize,
    registry: Option<PathBuf>,
) -> Result<(), Error> {
    if registry.is_some() && scenarios.len() > 1 {
        return Err(Error::Usage("--registry takes a single scenario".into()));
    }
    if jobs == 0 {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    let opts = RunOptions {
        seed,
        dry_run,
        registry,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(e.to_string()))?;
    let results: Vec<Result<ScenarioOutcome, Error>> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|s| run_one(s, out, &opts))
            .collect()
    });

    let mut first_error = None;
    for (reference, result) in scenarios.iter().zip(results) {
        match result {
            Ok(o) => {
                if dry_run {
                    println!("# {}", o.name);
                    print!("{}", o.schedule.listing());
                    continue;
                }
                let report = o.report.as_ref().expect("executed");
                println!(
                    "{}: {} pulses, {:.3} J, holding {} J -> {}",
                    o.name,
                    report.ledger.total_pulses,
                    report.ledger.total_energy,
                    report.ledger.holding_energy,
                    out.join(&o.name).display()
                );
                for m in &o.metrics {
                    let flag = if m.within { "" } else { "  (out of range)" };
                    println!("  {} = {:.6}{flag}", m.name, m.value);
                }
                for f in &report.failures {
                    eprintln!(
                        "error: {}: step {} at {:.4} s: {}",
                        o.name, f.step, f.time, f.message
                    );
                }
                if !report.failures.is_empty() && first_error.is_none() {
                    first_error = Some(Error::Valve(sepm_core::valve::ValveError::NotOccluded(
                        format!("{}: {} failed occlusion(s)", o.name, report.failures.len()),
                    )));
                }
            }
            Err(e) if first_error.is_none() => first_error = Some(e),
            Err(e) => eprintln!("error: {reference}: {e}"),
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_truthtable(spec: &str, csv: bool) -> Result<(), Error> {
    let topology = spec.parse::<TopologySpec>()?.build()?;
    let table = truth_table(&topology)?;
    print!("{}", if csv { table.to_csv() } else { table.to_text() });
    Ok(())
}

fn cmd_calibrate(
    reference: Option<&str>,
    max_iterations: Option<u32>,
    write: Option<PathBuf>,
) -> Result<(), Error> {
    let profile = Profile::resolve(reference, Some(Path::new(".")))?;
    let source = reference
        .map(str::to_string)
        .or_else(|| std::env::var(PROFILE_ENV).ok())
        .unwrap_or(profile.name.clone());
    println!("profile: {source}");
    let report = calibrate(&profile, max_iterations)?;
    print!("{}", report.summary());
    if let Some(path) = write {
        std::fs::write(&path, report.profile.to_toml())
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
