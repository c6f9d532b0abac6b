//! Command-line harness: oracle solves, lower-bound curves, Monte Carlo
//! campaigns and single-trial traces.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use banditest::error::Error;
use banditest::harness::{run_campaign, ExperimentConfig};
use banditest::oracle::lower_bound_delay;
use banditest::policy::{run_trial_observed, StepTrace};

#[derive(Parser)]
#[command(name = "banditest", version, about = "Sequential multi-hypothesis testing on exponential-family bandits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the max-min oracle at the configured true parameters.
    Oracle(ConfigArg),
    /// Print the lower-bound delay curve as CSV (logL, lower_bound).
    Bound {
        #[command(flatten)]
        config: ConfigArg,
        /// Largest logL on the curve (must be positive).
        #[arg(long = "logl-max", alias = "logL-max")]
        logl_max: f64,
        /// Number of curve points.
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
    /// Run the configured Monte Carlo campaign and write summary CSV.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory for campaign.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Trace a single trial step by step as CSV on stdout.
    Trace {
        #[command(flatten)]
        config: ConfigArg,
        /// Threshold exponent for this trial.
        #[arg(long = "logl", alias = "logL")]
        logl: f64,
        /// Switching parameter for this trial.
        #[arg(long)]
        gamma: f64,
        /// Exploration exponent; first grid value when omitted.
        #[arg(long)]
        beta: Option<f64>,
        /// Trial seed; the config's master seed when omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Usage and parse failures are config errors: exit 1.
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) | Error::Json(_) | Error::Io(_) | Error::Domain(_) => 1,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn dispatch(cli: Cli) -> banditest::Result<()> {
    match cli.command {
        Command::Oracle(cfg) => {
            let config = ExperimentConfig::from_path(&cfg.config)?;
            let r = config.oracle()?;
            println!("D* = {:.6}", r.d_star);
            let lam: Vec<String> = r.lambda_star.as_slice().iter().map(|x| format!("{x:.6}")).collect();
            println!("lambda* = [{}]", lam.join(", "));
            println!("certificate_gap = {:.3e}", r.certificate_gap);
            println!("iterations = {}", r.iterations);
            Ok(())
        }
        Command::Bound { config, logl_max, points } => {
            let config_data = ExperimentConfig::from_path(&config.config)?;
            if !(logl_max > 0.0) {
                return Err(Error::Config(format!("logL-max must be positive, got {logl_max}")));
            }
            if points == 0 {
                return Err(Error::Config("points must be >= 1".into()));
            }
            let d = config_data.oracle()?.d_star;
            println!("logL,lower_bound");
            for i in 1..=points {
                let log_l = logl_max * i as f64 / points as f64;
                let lb = lower_bound_delay((-log_l).exp(), d)?;
                println!("{log_l},{lb}");
            }
            Ok(())
        }
        Command::Run { config, out } => {
            let config_data = ExperimentConfig::from_path(&config.config)?;
            std::fs::create_dir_all(&out)?;
            let summaries = run_campaign(&config_data)?;
            let path = out.join("campaign.csv");
            banditest::harness::emit_csv(&summaries, &path)?;
            eprintln!("wrote {}", path.display());
            if config_data.trace {
                write_cell_traces(&config_data, &out)?;
            }
            Ok(())
        }
        Command::Trace { config, logl, gamma, beta, seed } => {
            let config_data = ExperimentConfig::from_path(&config.config)?;
            let (structure, truth) = config_data.structure.build()?;
            let beta = beta.unwrap_or(config_data.grid.beta[0]);
            let policy = config_data.policy_for(logl, gamma, beta, structure.arm_count())?;
            let seed = seed.unwrap_or(policy.seed);
            let mut stdout = std::io::stdout().lock();
            let record = trace_trial(&policy, &structure, &truth, seed, &mut stdout)?;
            eprintln!(
                "stopped at tau = {} with decision {} (correct: {}), cost {}, switches {}",
                record.tau,
                record.decision + 1,
                record.correct,
                record.cost,
                record.switches
            );
            Ok(())
        }
    }
}

/// Stream one trial's per-step rows (`n, arm, active, l_star, z_l_star,
/// z_1..z_M`) to the writer.
fn trace_trial<W: std::io::Write>(
    policy: &banditest::policy::PolicyConfig,
    structure: &banditest::hypotheses::HypothesisStructure,
    truth: &banditest::hypotheses::NaturalParamVector,
    seed: u64,
    w: &mut W,
) -> banditest::Result<banditest::policy::TrialRecord> {
    let m = structure.hypothesis_count();
    let z_cols: Vec<String> = (0..m).map(|l| format!("z_{}", l + 1)).collect();
    writeln!(w, "n,arm,active,l_star,z_l_star,{}", z_cols.join(","))?;
    let mut io_err = None;
    let record = run_trial_observed(policy, structure, truth, seed, |t: &StepTrace| {
        let zs: Vec<String> = t.z.iter().map(|z| format!("{z}")).collect();
        let res = writeln!(
            w,
            "{},{},{},{},{},{}",
            t.n,
            t.arm + 1,
            if t.stopped { String::new() } else { (t.active as u8).to_string() },
            t.l_star + 1,
            t.z_l_star,
            zs.join(",")
        );
        if let Err(e) = res {
            io_err.get_or_insert(e);
        }
    })?;
    match io_err {
        Some(e) => Err(e.into()),
        None => Ok(record),
    }
}

/// With the config's trace flag set, dump the first trial of every grid
/// cell next to the campaign CSV.
fn write_cell_traces(config: &ExperimentConfig, out: &std::path::Path) -> banditest::Result<()> {
    let (structure, truth) = config.structure.build()?;
    for &beta in &config.grid.beta {
        for &gamma in &config.grid.gamma {
            for &log_l in &config.grid.log_l {
                let policy = config.policy_for(log_l, gamma, beta, structure.arm_count())?;
                let name = format!("trace_beta{beta}_gamma{gamma}_logL{log_l}.csv");
                let mut file = std::fs::File::create(out.join(&name))?;
                match trace_trial(&policy, &structure, &truth, config.master_seed, &mut file) {
                    Ok(_) => {}
                    Err(banditest::Error::Censored { .. }) => {
                        eprintln!("warning: censored trace trial for {name}");
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(())
}
