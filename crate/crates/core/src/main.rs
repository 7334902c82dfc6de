//! Batch experiment CLI.
//!
//! Subcommands:
//!   gen     sample a problem instance and write it as JSON
//!   run     execute an experiment spec and emit CSV/JSON tables
//!   replay  re-run a saved instance under a seed, bit-for-bit
//!   verify  recheck the invariants of a saved trial state
//!
//! Exit codes: 0 success, 1 validation error, 2 non-convergence above the
//! tolerated fraction.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use hflsim::coalition;
use hflsim::coalition::{run_formation, FormationConfig, PreferenceRule};
use hflsim::economics;
use hflsim::error::Error;
use hflsim::experiment::{
    generate_instance, mix_seed, run_experiment, ExperimentSpec, ParameterRanges, Scenario,
};
use hflsim::model::NetworkInstance;
use hflsim::output::{write_outputs, write_trial_state, TrialState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "hflsim",
    version,
    about = "Two-level incentive mechanism simulator for hierarchical federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a problem instance and write it as JSON.
    Gen(GenArgs),
    /// Run an experiment scenario and write result tables.
    Run(RunArgs),
    /// Re-run a saved instance under a seed; identical inputs give
    /// identical outputs.
    Replay(ReplayArgs),
    /// Recheck the invariants of a saved instance + trial state.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of devices; overrides the ranges file.
    #[arg(long)]
    devices: Option<usize>,
    /// Number of edge servers; overrides the ranges file.
    #[arg(long)]
    edges: Option<usize>,
    /// JSON file with parameter-range overrides.
    #[arg(long)]
    ranges: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec JSON; defaults apply where absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Scenario name (overrides the spec file).
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated rules: selfish,pareto,altruistic,bandwidth-only.
    #[arg(long)]
    rules: Option<String>,
    #[arg(long, short, default_value = "results")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Write the per-iteration trace of trial 0's initial bandwidth solve.
    #[arg(long)]
    trace_gp: bool,
    /// Tolerated fraction of non-converged runs before exit code 2.
    #[arg(long, default_value_t = 0.01)]
    nonconvergence_budget: f64,
}

#[derive(Args)]
struct ReplayArgs {
    /// Saved instance JSON.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Comma-separated rules; all four by default.
    #[arg(long)]
    rules: Option<String>,
    #[arg(long, short, default_value = "replay")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Saved instance JSON.
    #[arg(long)]
    instance: PathBuf,
    /// Saved trial state JSON files.
    #[arg(long, required = true, num_args = 1..)]
    state: Vec<PathBuf>,
}

fn parse_rules(spec: &Option<String>) -> Result<Option<Vec<PreferenceRule>>, Error> {
    match spec {
        None => Ok(None),
        Some(s) => {
            let rules = s
                .split(',')
                .filter(|part| !part.trim().is_empty())
                .map(PreferenceRule::from_str)
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Some(rules))
        }
    }
}

fn cmd_gen(args: &GenArgs) -> Result<(), Error> {
    let mut ranges = match &args.ranges {
        Some(path) => serde_json::from_str::<ParameterRanges>(&std::fs::read_to_string(path)?)?,
        None => ParameterRanges::default(),
    };
    if let Some(n) = args.devices {
        ranges.n_devices = n;
    }
    if let Some(l) = args.edges {
        ranges.n_edges = l;
    }
    let instance = generate_instance(&ranges, args.seed)?;
    std::fs::write(&args.out, instance.to_json_string()?)?;
    println!(
        "wrote instance with {} devices, {} edges (digest {}) to {}",
        instance.n_devices(),
        instance.n_edges(),
        &instance.digest()[..12],
        args.out.display()
    );
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<f64, Error> {
    let mut spec = match &args.spec {
        Some(path) => ExperimentSpec::from_json_str(&std::fs::read_to_string(path)?)?,
        None => ExperimentSpec::default(),
    };
    if let Some(name) = &args.scenario {
        spec.scenario = Scenario::from_str(name)?;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(trials) = args.trials {
        spec.trials = trials;
    }
    if let Some(rules) = parse_rules(&args.rules)? {
        spec.rules = rules;
    }
    spec.workers = args.workers;
    spec.trace_gp |= args.trace_gp;
    spec.validate()?;

    let results = run_experiment(&spec)?;
    let manifest = write_outputs(&results, &args.out)?;

    // The demo scenario also saves replayable instance + state files.
    if spec.scenario == Scenario::SinglePartitionDemo {
        for report in &results.trials {
            let instance = generate_instance(&spec.axis_points()[0].1, report.seed)?;
            for rr in &report.rules {
                let state = TrialState {
                    instance_digest: report.instance_digest.clone(),
                    rule: rr.rule,
                    assignment: rr.partition.assignment().to_vec(),
                    bandwidth: rr.partition.bandwidth().to_vec(),
                    agg_counts: rr.partition.agg_counts().to_vec(),
                    rewards: rr.rewards.clone(),
                    total_utility: rr.total_utility,
                    per_edge_utility: rr.per_edge_utility.clone(),
                    per_edge_gain: rr.per_edge_gain.clone(),
                    cloud_utility: rr.cloud_utility,
                    converged: rr.converged,
                };
                write_trial_state(
                    &args.out,
                    &format!("trial_{:04}", report.trial),
                    &instance,
                    &state,
                )?;
            }
            // Final coalition attributes, one line per populated coalition.
            for rr in &report.rules {
                if rr.rule != PreferenceRule::Altruistic {
                    continue;
                }
                println!("final stable coalitions ({}):", rr.rule);
                for l in 0..instance.n_edges() {
                    let members = rr.partition.members(l);
                    if members.is_empty() {
                        continue;
                    }
                    let u = economics::coalition_utility(
                        &instance,
                        l,
                        members,
                        rr.partition.bandwidth()[l],
                        rr.partition.agg_counts()[l],
                    );
                    println!(
                        "  edge {l}: price {:.3}, bandwidth {:.3} MHz, rounds {}, utility {:.3}, members {:?}",
                        instance.econ.unit_price[l],
                        rr.partition.bandwidth()[l] / 1e6,
                        rr.partition.agg_counts()[l],
                        u,
                        members
                    );
                }
            }
        }
    }

    println!(
        "{} runs, {} non-converged; outputs in {} ({} files)",
        results.diagnostics.total_runs,
        results.diagnostics.nonconverged_runs,
        args.out.display(),
        manifest.files.len() + 1
    );
    let frac = if results.diagnostics.total_runs == 0 {
        0.0
    } else {
        results.diagnostics.nonconverged_runs as f64 / results.diagnostics.total_runs as f64
    };
    Ok(frac)
}

fn cmd_replay(args: &ReplayArgs) -> Result<(), Error> {
    let instance = NetworkInstance::from_json_str(&std::fs::read_to_string(&args.instance)?)?;
    let rules = parse_rules(&args.rules)?.unwrap_or_else(|| PreferenceRule::ALL.to_vec());
    std::fs::create_dir_all(&args.out)?;
    for (idx, rule) in rules.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[args.seed, idx as u64]));
        let config = FormationConfig::default();
        let outcome = run_formation(&instance, *rule, &config, &mut rng, None)?;
        let total = outcome.total_utility(&instance);
        let metrics = hflsim::experiment::final_state_metrics(
            &instance,
            &outcome.partition,
            &outcome.rewards,
        );
        let state = TrialState {
            instance_digest: instance.digest(),
            rule: *rule,
            assignment: outcome.partition.assignment().to_vec(),
            bandwidth: outcome.partition.bandwidth().to_vec(),
            agg_counts: outcome.partition.agg_counts().to_vec(),
            rewards: outcome.rewards.clone(),
            total_utility: total,
            per_edge_utility: metrics.per_edge_utility,
            per_edge_gain: metrics.per_edge_gain,
            cloud_utility: metrics.cloud_utility,
            converged: outcome.converged,
        };
        write_trial_state(&args.out, "replay", &instance, &state)?;
        println!(
            "{rule}: total utility {total:.3}, {} switches in {} attempts, converged: {}",
            outcome.accepted_switches, outcome.attempts, outcome.converged
        );
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<bool, Error> {
    let instance = NetworkInstance::from_json_str(&std::fs::read_to_string(&args.instance)?)?;
    let mut all_ok = true;
    for path in &args.state {
        let state: TrialState = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let mut ok = true;
        let mut check = |name: &str, passed: bool| {
            println!("[{}] {}: {}", if passed { "pass" } else { "FAIL" }, path.display(), name);
            ok &= passed;
        };
        check("instance digest matches", state.instance_digest == instance.digest());
        let partition = state.partition(instance.n_edges())?;
        check("partition is valid", partition.validate(&instance).is_ok());
        let total = economics::total_utility(
            &instance,
            partition.coalitions(),
            partition.bandwidth(),
            partition.agg_counts(),
        );
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        check("total utility recomputes", rel(total, state.total_utility));
        let psi = coalition::partition_potential(&instance, &partition);
        check("potential equals total utility", rel(psi, total));
        let mut decomposition = true;
        for l in 0..instance.n_edges() {
            let members = partition.members(l);
            if members.is_empty() {
                continue;
            }
            let snap = economics::snapshot(
                &instance,
                l,
                members,
                partition.bandwidth()[l],
                partition.agg_counts()[l],
            );
            let summed: f64 = snap.device_utilities.iter().sum();
            decomposition &= rel(summed, snap.utility);
        }
        check("device utilities decompose coalition utilities", decomposition);
        let metrics =
            hflsim::experiment::final_state_metrics(&instance, &partition, &state.rewards);
        let all_close = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).all(|(x, y)| rel(*x, *y) || (x.is_nan() && y.is_nan()))
        };
        check(
            "edge utilities recompute",
            all_close(&metrics.per_edge_utility, &state.per_edge_utility),
        );
        check("accuracy gains recompute", all_close(&metrics.per_edge_gain, &state.per_edge_gain));
        check(
            "cloud utility recomputes",
            rel(metrics.cloud_utility, state.cloud_utility)
                || (metrics.cloud_utility.is_nan() && state.cloud_utility.is_nan()),
        );
        all_ok &= ok;
    }
    Ok(all_ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Gen(args) => cmd_gen(args).map(|()| ExitCode::SUCCESS),
        Command::Run(args) => cmd_run(args).map(|frac| {
            if frac > args.nonconvergence_budget {
                eprintln!("non-convergence fraction {frac:.4} exceeds budget");
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }),
        Command::Replay(args) => cmd_replay(args).map(|()| ExitCode::SUCCESS),
        Command::Verify(args) => {
            cmd_verify(args).map(|ok| if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
