//! `activegame`: run batch experiments and dump plot-ready data.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime or
//! numerical error.

use std::path::PathBuf;
use std::process::ExitCode;

use activegame::active::{compute_c, expected_cost_hessian, stackelberg_equilibrium};
use activegame::fisher::Criterion;
use activegame::harness::{
    fisher_map, load_config, read_trajectories, run_experiment, summarize, write_fisher_map, write_summaries,
    write_trajectories, ExperimentConfig, Format,
};
use activegame::{linalg, Error};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "activegame", version, about = "Active inverse Stackelberg game simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sample path of an experiment and write the trajectories.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// A, D or E.
        #[arg(long)]
        criterion: Option<String>,
    },
    /// Print the Stackelberg equilibrium and the spectra of C and of the
    /// expected-cost Hessian at the true parameter.
    Equilibrium {
        #[command(flatten)]
        common: Common,
    },
    /// Write the design criterion over a grid of the leader box.
    FisherMap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        criterion: Option<String>,
        /// Grid nodes per axis (defaults to grid_resolution).
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Bias and relative-error summaries of stored trajectories.
    Summarize {
        #[command(flatten)]
        common: Common,
        /// Trajectory file written by `simulate` (.csv or .json).
        #[arg(long)]
        input: PathBuf,
    },
}

struct Loaded {
    ec: ExperimentConfig,
    format: Format,
    out: PathBuf,
}

fn load(common: &Common) -> Result<Loaded, Error> {
    let mut ec = load_config(&common.config).map_err(|e| match e {
        Error::Io { path, source } => Error::Config(format!("cannot read config {}: {source}", path.display())),
        other => other,
    })?;
    if let Some(seed) = common.seed {
        ec.master_seed = seed;
    }
    let format: Format = common.format.parse()?;
    let out = common.out.clone().unwrap_or_else(|| ec.output.dir.clone());
    ec.output.dir = out.clone();
    Ok(Loaded { ec, format, out })
}

fn vec_str(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.10}")).collect();
    format!("[{}]", parts.join(", "))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate {
            common,
            paths,
            horizon,
            criterion,
        } => {
            let Loaded { mut ec, format, .. } = load(&common)?;
            if let Some(p) = paths {
                ec.num_paths = p;
            }
            if let Some(t) = horizon {
                ec.horizon = t;
            }
            if let Some(c) = criterion {
                ec.criterion = c.parse()?;
            }
            ec.validate()?;
            let runs = run_experiment(&ec)?;
            let path = ec.output.trajectories(format);
            write_trajectories(&ec, &runs, format, &path)?;
            println!(
                "{} paths x {} steps ({}, {}-optimality) -> {}",
                runs.len(),
                ec.horizon,
                ec.algorithm,
                ec.criterion,
                path.display()
            );
        }
        Command::Equilibrium { common } => {
            let Loaded { ec, format, .. } = load(&common)?;
            let c = compute_c(&ec.theta_true, &ec.game)?;
            let k = expected_cost_hessian(&ec.theta_true, &ec.game)?;
            let c_eigs: Vec<f64> = linalg::sym_eigenvalues(&linalg::symmetrize(&c)).iter().rev().copied().collect();
            let k_eigs: Vec<f64> = linalg::sym_eigenvalues(&k).iter().rev().copied().collect();
            let eq = stackelberg_equilibrium(&ec.theta_true, &ec.game)?;
            match format {
                Format::Csv => {
                    println!("uL_star = {}", vec_str(&eq.u_leader_star));
                    println!("expected_cost = {:.10}", eq.cost);
                    println!("eig(C) = {}", vec_str(&c_eigs));
                    println!("eig(K) = {}", vec_str(&k_eigs));
                }
                Format::Json => {
                    let value = serde_json::json!({
                        "uL_star": eq.u_leader_star,
                        "expected_cost": eq.cost,
                        "eig_C": c_eigs,
                        "eig_K": k_eigs,
                    });
                    println!("{}", serde_json::to_string_pretty(&value).expect("plain numbers"));
                }
            }
        }
        Command::FisherMap {
            common,
            criterion,
            resolution,
        } => {
            let Loaded { ec, format, out } = load(&common)?;
            let c: Criterion = match criterion {
                Some(c) => c.parse()?,
                None => ec.criterion,
            };
            let res = resolution.unwrap_or(ec.grid_resolution);
            if res < 2 {
                return Err(Error::Config("resolution must be at least 2".into()));
            }
            let map = fisher_map(&ec.theta_true, c, &ec.game, res)?;
            let path = out.join(format!("fisher_map.{}", format.extension()));
            write_fisher_map(&map, format, &path)?;
            println!("{res}x{res} {c}-criterion map -> {}", path.display());
        }
        Command::Summarize { common, input } => {
            let Loaded { ec, format, out } = load(&common)?;
            let runs = read_trajectories(&input, &ec)?;
            let summary = summarize(&ec, &runs)?;
            let written = write_summaries(&summary, format, &out)?;
            print_summary(&summary);
            for p in written {
                println!("-> {}", p.display());
            }
        }
    }
    Ok(())
}

fn print_summary(s: &activegame::harness::SummaryBundle) {
    println!("uL_star = {}", vec_str(&s.u_leader_star));
    println!("horizon = {}", s.bias.horizon);
    for (k, c) in s.bias.components.iter().enumerate() {
        println!("theta{}: bias mean {:.6e}, variance {:.6e}", k + 1, c.mean, c.variance);
    }
    for r in &s.normality {
        println!(
            "theta{}: qq {:.4}, skewness {:.4}, excess kurtosis {:.4}",
            r.component, r.qq_correlation, r.skewness, r.excess_kurtosis
        );
    }
    if let Some(last) = s.errors.rows.last() {
        println!("relative error at t={}: median {:.6e}, min {:.6e}", last.t, last.median, last.min);
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
