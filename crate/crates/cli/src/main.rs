use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mec_offload::config::{parse_config, ExperimentConfig, PolicyName};
use mec_offload::experiment::{calibrate_policy, emit_plots, point_setup, run_experiment, run_oracle};
use mec_offload::Error;

/// Experiment harness for the MEC offloading simulator.
#[derive(Debug, Parser)]
#[command(name = "mec-offload", version)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured sweep and write runs.csv and summary.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        workers: Option<usize>,
        /// Base seed (overrides `seed` in the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Also render one SVG chart per sweep axis.
        #[arg(long)]
        plots: bool,
    },
    /// Solve the discretized MDP and compare the configured policies to it.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Find the knob that makes a policy spend the given average power.
    Calibrate {
        #[arg(long)]
        policy: String,
        /// Target average power (W).
        #[arg(long)]
        power: f64,
        /// Optional config for the system and run settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::Parse { .. }
        | Error::Validation(_)
        | Error::InvalidParam { .. }
        | Error::InfeasibleLoad(_)
        | Error::ScenarioInconsistency(_) => 2,
        Error::Contract(_) => 3,
        _ => 1,
    }
}

fn load(path: &Path, out: Option<PathBuf>) -> mec_offload::Result<ExperimentConfig> {
    let mut cfg = parse_config(path).map_err(|e| match e {
        Error::Io(io) => Error::Validation(format!("cannot read {}: {io}", path.display())),
        other => other,
    })?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    Ok(cfg)
}

fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> mec_offload::Result<T> + Send,
) -> mec_offload::Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Validation("--workers must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn execute(cmd: Command) -> mec_offload::Result<()> {
    match cmd {
        Command::Simulate {
            config,
            out,
            workers,
            seed,
            plots,
        } => {
            let mut cfg = load(&config, out)?;
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let result = with_workers(workers, || run_experiment(&cfg))?;
            println!("policy,axis,value,runs,delay_mean,delay_ci,power_mean,power_ci");
            for s in &result.summary {
                println!(
                    "{},{},{},{},{:.6},{:.6},{:.6e},{:.3e}",
                    s.policy, s.axis, s.value, s.delay.n, s.delay.mean, s.delay.ci_half, s.power.mean, s.power.ci_half
                );
            }
            eprintln!(
                "wrote {} ({} runs simulated, {} reused)",
                result.summary_path.display(),
                result.computed,
                result.reused
            );
            if plots {
                for f in emit_plots(&result.summary_path, &cfg.out_dir)? {
                    eprintln!("wrote {}", f.display());
                }
            }
        }
        Command::Oracle { config, out, workers } => {
            let cfg = load(&config, out)?;
            let report = with_workers(workers, || run_oracle(&cfg))?;
            eprintln!(
                "{} states, converged in {} sweeps (span {:.2e})",
                report.states, report.sweeps, report.span
            );
            println!("policy,theta,ratio,boundary_mass");
            for r in &report.rows {
                println!("{},{:.6},{:.4},{:.2e}", r.policy, r.theta, r.ratio, r.boundary_mass);
            }
        }
        Command::Calibrate {
            policy,
            power,
            config,
            runs,
            horizon,
            workers,
        } => {
            let name: PolicyName = policy.parse().map_err(Error::Validation)?;
            if !(power > 0.0 && power.is_finite()) {
                return Err(Error::Validation(format!("--power must be positive, got {power}")));
            }
            let mut cfg = match &config {
                Some(p) => load(p, None)?,
                None => ExperimentConfig::default(),
            };
            if let Some(r) = runs {
                cfg.runs = r.max(1);
            }
            if let Some(h) = horizon {
                cfg.horizon = h.max(1);
            }
            let pt = point_setup(&cfg, None)?;
            let cal = with_workers(workers, || calibrate_policy(name, &cfg, &pt, power))?;
            println!("policy,target,knob,power,relative_error,evaluations");
            println!(
                "{name},{power},{},{},{:.4e},{}",
                cal.knob,
                cal.power,
                cal.relative_error(),
                cal.evaluations
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
