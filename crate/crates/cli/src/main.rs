use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mec_offload::experiment::{
    aggregate_csv, outcomes_csv, run_scenario, sweep, train_estimators, write_output, Axis,
    ExperimentConfig, PolicyName, ScenarioOutput,
};
use mec_offload::Error;

/// Task offloading experiments for edge networks with time-varying capacity.
#[derive(Parser)]
#[command(name = "mec-offload", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured policy on every seed.
    Run(Common),
    /// Run several policies over a grid of lambda, beta or L values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Axis to sweep: lambda, beta or L. Defaults to `sweep.axis`.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated axis values. Defaults to `sweep.values`.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Comma-separated policy names. Defaults to `sweep.policies`.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<String>,
    },
    /// Collect bootstrap samples and save the trained estimators as JSON.
    TrainEstimator(Common),
    /// Run the greedy oracle on every seed.
    EvalOracle(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Run this seed only instead of `seeds`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let text = std::fs::read_to_string(&self.config).map_err(|e| {
            Error::InvalidArgument(format!("cannot read {}: {e}", self.config.display()))
        })?;
        let mut cfg = ExperimentConfig::from_toml(&text)?;
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        Ok(cfg)
    }
}

fn write_scenario(
    out: &Path,
    cfg: &ExperimentConfig,
    policy: PolicyName,
    result: &ScenarioOutput,
) -> Result<(), Error> {
    let hash = cfg.hash();
    for (seed, outcomes) in &result.outcomes {
        write_output(
            out,
            &format!("outcomes_{}_seed{seed}.csv", policy.as_str()),
            &outcomes_csv(&hash, outcomes),
        )?;
    }
    write_output(
        out,
        &format!("aggregate_{}.csv", policy.as_str()),
        &aggregate_csv(&hash, &result.rows),
    )?;
    if let Some(p) = result.probability {
        println!("probability p = {p}");
    }
    for r in &result.rows {
        println!(
            "{} seed {}: avg_delay {:.4} s, avg_energy {:.4} J, avg_cost {:.4}, mec_fraction {:.3}",
            r.policy, r.seed, r.avg_delay, r.avg_energy, r.avg_cost, r.mec_fraction
        );
    }
    Ok(())
}

fn scenario(common: &Common, policy: Option<PolicyName>) -> Result<(), Error> {
    let cfg = common.load()?;
    let policy = policy.unwrap_or(cfg.policy);
    let result = run_scenario(&cfg, policy, &mut BTreeMap::new())?;
    write_scenario(&common.out, &cfg, policy, &result)
}

fn run_sweep(
    common: &Common,
    axis: Option<&str>,
    values: &[f64],
    policies: &[String],
) -> Result<(), Error> {
    let cfg = common.load()?;
    let axis = match axis {
        Some(a) => Axis::parse(a)?,
        None => cfg.sweep.axis.ok_or_else(|| {
            Error::InvalidArgument("no sweep axis given (--axis or sweep.axis)".into())
        })?,
    };
    let values = if values.is_empty() {
        cfg.sweep.values.clone()
    } else {
        values.to_vec()
    };
    let policies = if !policies.is_empty() {
        policies
            .iter()
            .map(|p| PolicyName::parse(p))
            .collect::<Result<Vec<_>, _>>()?
    } else if !cfg.sweep.policies.is_empty() {
        cfg.sweep.policies.clone()
    } else {
        vec![cfg.policy]
    };
    let rows = sweep(&cfg, axis, &values, &policies)?;
    let name = match axis {
        Axis::Lambda => "sweep_lambda.csv",
        Axis::Beta => "sweep_beta.csv",
        Axis::Candidates => "sweep_L.csv",
    };
    write_output(&common.out, name, &aggregate_csv(&cfg.hash(), &rows))?;
    println!(
        "{} rows written to {}",
        rows.len(),
        common.out.join(name).display()
    );
    Ok(())
}

fn train(common: &Common) -> Result<(), Error> {
    let cfg = common.load()?;
    std::fs::create_dir_all(&common.out)?;
    for &seed in &cfg.seeds {
        let est = train_estimators(&cfg, seed)?;
        est.delay
            .save(&common.out.join(format!("delay_estimator_seed{seed}.json")))?;
        let r = &est.delay_report;
        println!(
            "seed {seed} delay: {} train / {} validation samples, validation R^2 {:.4}",
            r.train_samples, r.validation_samples, r.validation_r2
        );
        if let Some(energy) = &est.energy {
            energy.save(&common.out.join(format!("energy_estimator_seed{seed}.json")))?;
        }
        if let Some(r) = &est.energy_report {
            println!("seed {seed} energy: validation R^2 {:.4}", r.validation_r2);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => scenario(c, None),
        Command::Sweep {
            common,
            axis,
            values,
            policies,
        } => run_sweep(common, axis.as_deref(), values, policies),
        Command::TrainEstimator(c) => train(c),
        Command::EvalOracle(c) => scenario(c, Some(PolicyName::Oracle)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
