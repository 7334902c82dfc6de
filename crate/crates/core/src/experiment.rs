//! Batch experiment driver: instance generation from the simulation
//! parameter ranges, seeded multi-trial execution of every preference rule
//! on shared instances, and long-format result tables.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coalition::{
    run_formation, CoalitionPartition, FormationConfig, PotentialSample, PreferenceRule,
    SwitchRecord,
};
use crate::economics::EconomicParams;
use crate::error::{Error, Result};
use crate::model::{ChannelMatrix, Device, EdgeServer, NetworkInstance, SystemConfig};
use crate::stackelberg::{self, StackelbergParams};
use crate::stats;

// ---------------------------------------------------------------------------
// Parameter ranges and spec
// ---------------------------------------------------------------------------

/// Sampling ranges for instance generation; every field can be overridden
/// from the spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParameterRanges {
    pub n_devices: usize,
    pub n_edges: usize,
    pub total_bandwidth: f64,
    pub cloud_interval: (f64, f64),
    pub model_size: f64,
    pub noise_power: f64,
    pub cpu_freq: (f64, f64),
    pub cycles_per_unit: f64,
    pub tx_power: (f64, f64),
    pub congestion_coef: (f64, f64),
    pub unit_price: (f64, f64),
    pub fixed_reward: f64,
    pub improvement_coef: f64,
    /// SNR window the path-loss gains are mapped into (at reference power).
    pub snr_window: (f64, f64),
    /// Side length of the square deployment region, meters.
    pub region_size: f64,
    pub pricing: StackelbergParams,
}

impl Default for ParameterRanges {
    fn default() -> Self {
        Self {
            n_devices: 12,
            n_edges: 4,
            total_bandwidth: 5e6,
            cloud_interval: (15.0, 25.0),
            model_size: 3e6,
            noise_power: 1e-7,
            cpu_freq: (1e9, 4e9),
            cycles_per_unit: 3e9,
            tx_power: (0.2, 0.5),
            congestion_coef: (0.05, 0.15),
            unit_price: (5.0, 15.0),
            fixed_reward: 1.0,
            improvement_coef: 1.0,
            snr_window: (5.0, 80.0),
            region_size: 1000.0,
            pricing: StackelbergParams::default(),
        }
    }
}

impl ParameterRanges {
    pub fn validate(&self) -> Result<()> {
        let pos_pair = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo;
        if self.n_edges < 1
            || self.n_devices < self.n_edges
            || !(self.total_bandwidth > 0.0)
            || !pos_pair(self.cloud_interval)
            || !(self.model_size > 0.0)
            || !(self.noise_power > 0.0)
            || !pos_pair(self.cpu_freq)
            || !(self.cycles_per_unit > 0.0)
            || !pos_pair(self.tx_power)
            || !pos_pair(self.congestion_coef)
            || !pos_pair(self.unit_price)
            || !(self.fixed_reward >= 0.0)
            || !(self.improvement_coef > 0.0)
            || !pos_pair(self.snr_window)
            || !(self.region_size > 0.0)
        {
            return Err(Error::SpecValidation("parameter ranges out of bounds".into()));
        }
        self.pricing.validate()
    }
}

/// The experiment scenarios; each reproduces one figure-style sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// One instance end to end, with the final coalition attributes.
    SinglePartitionDemo,
    /// Potential trajectories and final utilities at fixed size.
    Convergence,
    /// Total utility versus the global aggregation interval.
    IntervalSweep,
    /// Total utility versus device count, low congestion cost.
    DeviceSweepLowCost,
    /// Total utility versus device count, high congestion cost.
    DeviceSweepHighCost,
    /// Per-server and cloud utilities at fixed size.
    ServerUtilities,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::SinglePartitionDemo,
        Scenario::Convergence,
        Scenario::IntervalSweep,
        Scenario::DeviceSweepLowCost,
        Scenario::DeviceSweepHighCost,
        Scenario::ServerUtilities,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::SinglePartitionDemo => "single-partition-demo",
            Scenario::Convergence => "convergence",
            Scenario::IntervalSweep => "interval-sweep",
            Scenario::DeviceSweepLowCost => "device-sweep-low-cost",
            Scenario::DeviceSweepHighCost => "device-sweep-high-cost",
            Scenario::ServerUtilities => "server-utilities",
        }
    }

    fn index(&self) -> u64 {
        Scenario::ALL.iter().position(|s| s == self).unwrap() as u64
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::SpecValidation(format!("unknown scenario '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub trials: usize,
    pub seed: u64,
    pub rules: Vec<PreferenceRule>,
    #[serde(default)]
    pub ranges: ParameterRanges,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    /// Keep the per-iteration trace of trial 0's initial bandwidth solve.
    #[serde(default)]
    pub trace_gp: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: Scenario::Convergence,
            trials: 200,
            seed: 42,
            rules: PreferenceRule::ALL.to_vec(),
            ranges: ParameterRanges::default(),
            workers: 0,
            trace_gp: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::SpecValidation("trials must be >= 1".into()));
        }
        if self.rules.is_empty() {
            return Err(Error::SpecValidation("rule list must not be empty".into()));
        }
        self.ranges.validate()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Axis points of the scenario: the swept value plus the ranges to
    /// sample instances from at that point.
    pub fn axis_points(&self) -> Vec<(f64, ParameterRanges)> {
        let base = self.ranges.clone();
        match self.scenario {
            Scenario::SinglePartitionDemo | Scenario::Convergence | Scenario::ServerUtilities => {
                vec![(base.n_devices as f64, base)]
            }
            Scenario::IntervalSweep => [15.0, 20.0, 25.0]
                .into_iter()
                .map(|t| {
                    let mut r = base.clone();
                    r.cloud_interval = (t, t);
                    (t, r)
                })
                .collect(),
            Scenario::DeviceSweepLowCost | Scenario::DeviceSweepHighCost => {
                let alpha = if self.scenario == Scenario::DeviceSweepLowCost {
                    base.congestion_coef.0
                } else {
                    base.congestion_coef.1
                };
                (6..=18)
                    .step_by(2)
                    .map(|n| {
                        let mut r = base.clone();
                        r.n_devices = n;
                        r.congestion_coef = (alpha, alpha);
                        (n as f64, r)
                    })
                    .collect()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Instance generation
// ---------------------------------------------------------------------------

/// Deterministic seed mixing for independent substreams.
pub fn mix_seed(parts: &[u64]) -> u64 {
    fn splitmix(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Sample one feasible instance. Placement, capabilities and prices are
/// drawn uniformly from the ranges; infeasible draws (a device with no
/// reachable edge) are resampled up to 100 times.
pub fn generate_instance(ranges: &ParameterRanges, seed: u64) -> Result<NetworkInstance> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    for _ in 0..100 {
        let devices: Vec<Device> = (0..ranges.n_devices)
            .map(|id| Device {
                id,
                cpu_freq: sample(&mut rng, ranges.cpu_freq),
                cycles_per_unit: ranges.cycles_per_unit,
                tx_power: sample(&mut rng, ranges.tx_power),
                position: [
                    rng.random_range(0.0..ranges.region_size),
                    rng.random_range(0.0..ranges.region_size),
                ],
            })
            .collect();
        let edges: Vec<EdgeServer> = (0..ranges.n_edges)
            .map(|id| EdgeServer {
                id,
                position: [
                    rng.random_range(0.0..ranges.region_size),
                    rng.random_range(0.0..ranges.region_size),
                ],
            })
            .collect();
        let channel = ChannelMatrix::from_path_loss(
            &devices,
            &edges,
            ranges.noise_power,
            ranges.snr_window.0,
            ranges.snr_window.1,
            std::f64::consts::SQRT_2 * ranges.region_size,
        )?;
        let econ = EconomicParams {
            unit_price: (0..ranges.n_edges).map(|_| sample(&mut rng, ranges.unit_price)).collect(),
            fixed_reward: vec![ranges.fixed_reward; ranges.n_edges],
            congestion_coef: (0..ranges.n_edges)
                .map(|_| sample(&mut rng, ranges.congestion_coef))
                .collect(),
            improvement_coef: ranges.improvement_coef,
        };
        let config = SystemConfig {
            total_bandwidth: ranges.total_bandwidth,
            cloud_interval: sample(&mut rng, ranges.cloud_interval),
            model_size: ranges.model_size,
            noise_power: ranges.noise_power,
            rng_seed: seed,
        };
        match NetworkInstance::new(config, devices, edges, channel, econ, ranges.pricing.clone()) {
            Ok(inst) => return Ok(inst),
            Err(Error::InvalidInstance(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Infeasible("no feasible instance in 100 draws".into()))
}

// ---------------------------------------------------------------------------
// Trial execution
// ---------------------------------------------------------------------------

/// Result of one rule on one instance.
#[derive(Debug, Clone)]
pub struct RuleResult {
    pub rule: PreferenceRule,
    pub converged: bool,
    pub pricing_converged: bool,
    pub attempts: usize,
    pub accepted_switches: usize,
    pub total_utility: f64,
    pub per_edge_utility: Vec<f64>,
    pub per_edge_gain: Vec<f64>,
    pub cloud_utility: f64,
    pub partition: CoalitionPartition,
    pub rewards: Vec<f64>,
    pub switch_log: Vec<SwitchRecord>,
    pub potential_trajectory: Vec<PotentialSample>,
    pub initial_gp_trace: Vec<crate::bandwidth::GpTraceRow>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrialReport {
    pub trial: usize,
    pub axis: f64,
    pub seed: u64,
    pub instance_digest: String,
    pub rules: Vec<RuleResult>,
}

/// Upper-game figures at a committed final state.
#[derive(Debug, Clone)]
pub struct FinalMetrics {
    pub per_edge_utility: Vec<f64>,
    /// Accuracy gain per edge; NaN for coalitions outside the game.
    pub per_edge_gain: Vec<f64>,
    pub cloud_utility: f64,
}

/// Edge-server utilities, accuracy gains and the cloud utility at a
/// committed final state. Coalitions unable to produce data fall back to
/// their fixed payouts and are excluded from the cloud sums.
pub fn final_state_metrics(
    instance: &NetworkInstance,
    partition: &CoalitionPartition,
    rewards: &[f64],
) -> FinalMetrics {
    let l_total = instance.n_edges();
    let mut per_edge_utility = vec![0.0; l_total];
    let mut per_edge_gain = vec![f64::NAN; l_total];
    let mut schedule: Vec<Option<u32>> = vec![None; l_total];
    for l in 0..l_total {
        let members = partition.members(l);
        if members.is_empty() {
            continue;
        }
        let b = partition.bandwidth()[l];
        let k = partition.agg_counts()[l];
        match stackelberg::edge_utility(instance, l, members, b, k, rewards[l]) {
            Ok(u) => {
                per_edge_utility[l] = u;
                per_edge_gain[l] =
                    stackelberg::accuracy_gain(instance, l, members, b, k).unwrap_or(f64::NAN);
                schedule[l] = Some(k);
            }
            Err(_) => {
                per_edge_utility[l] = -(members.len() as f64) * instance.econ.fixed_reward[l];
            }
        }
    }
    let cloud_utility = stackelberg::cloud_utility(
        instance,
        partition.coalitions(),
        partition.bandwidth(),
        rewards,
        &schedule,
    )
    .unwrap_or(f64::NAN);
    FinalMetrics { per_edge_utility, per_edge_gain, cloud_utility }
}

/// Run every requested rule on one shared instance with a shared initial
/// assignment; per-rule exploration streams are forked from the trial seed.
pub fn run_trial(
    spec: &ExperimentSpec,
    ranges: &ParameterRanges,
    axis: f64,
    trial: usize,
) -> Result<TrialReport> {
    let scenario_id = spec.scenario.index();
    let instance_seed = mix_seed(&[spec.seed, scenario_id, axis.to_bits(), trial as u64, 1]);
    let instance = generate_instance(ranges, instance_seed)?;
    let init_seed = mix_seed(&[spec.seed, scenario_id, axis.to_bits(), trial as u64, 2]);
    let mut init_rng = ChaCha8Rng::seed_from_u64(init_seed);
    let initial: Vec<usize> =
        (0..instance.n_devices()).map(|_| init_rng.random_range(0..instance.n_edges())).collect();

    let keep_rejections =
        matches!(spec.scenario, Scenario::SinglePartitionDemo | Scenario::Convergence);
    let mut rules = Vec::with_capacity(spec.rules.len());
    for (rule_idx, &rule) in spec.rules.iter().enumerate() {
        let config = FormationConfig {
            log_every_rejection: if keep_rejections { 1 } else { 0 },
            record_gp_trace: spec.trace_gp && trial == 0,
            ..FormationConfig::default()
        };
        let rule_seed =
            mix_seed(&[spec.seed, scenario_id, axis.to_bits(), trial as u64, 3, rule_idx as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(rule_seed);
        let started = std::time::Instant::now();
        let outcome = run_formation(&instance, rule, &config, &mut rng, Some(initial.clone()))?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        let total_utility = outcome.total_utility(&instance);
        let metrics = final_state_metrics(&instance, &outcome.partition, &outcome.rewards);
        rules.push(RuleResult {
            rule,
            converged: outcome.converged,
            pricing_converged: outcome.pricing_converged,
            attempts: outcome.attempts,
            accepted_switches: outcome.accepted_switches,
            total_utility,
            per_edge_utility: metrics.per_edge_utility,
            per_edge_gain: metrics.per_edge_gain,
            cloud_utility: metrics.cloud_utility,
            partition: outcome.partition,
            rewards: outcome.rewards,
            switch_log: outcome.switch_log,
            potential_trajectory: outcome.potential_trajectory,
            initial_gp_trace: outcome.initial_gp_trace,
            wall_ms,
        });
    }
    Ok(TrialReport { trial, axis, seed: instance_seed, instance_digest: instance.digest(), rules })
}

// ---------------------------------------------------------------------------
// Result tables
// ---------------------------------------------------------------------------

/// One long-format metric observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub axis: f64,
    pub rule: String,
    pub trial: usize,
    pub metric: String,
    pub value: f64,
}

/// Per-(axis, rule, metric) mean with a 95% confidence half-width over the
/// converged trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub axis: f64,
    pub rule: String,
    pub metric: String,
    pub mean: f64,
    pub ci95: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub total_runs: usize,
    pub nonconverged_runs: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub spec: ExperimentSpec,
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<AggregateRow>,
    pub diagnostics: Diagnostics,
    pub trials: Vec<TrialReport>,
}

/// Metrics every run contributes to the long table.
fn metric_rows(scenario: Scenario, report: &TrialReport, out: &mut Vec<MetricRow>) {
    for rr in &report.rules {
        let mut push = |metric: &str, value: f64| {
            out.push(MetricRow {
                scenario: scenario.name().to_string(),
                axis: report.axis,
                rule: rr.rule.name().to_string(),
                trial: report.trial,
                metric: metric.to_string(),
                value,
            });
        };
        push("total_utility", rr.total_utility);
        push("cloud_utility", rr.cloud_utility);
        push("accepted_switches", rr.accepted_switches as f64);
        push("attempts", rr.attempts as f64);
        push("converged", if rr.converged { 1.0 } else { 0.0 });
        // Wall time stays in memory only: emitted files must be
        // byte-identical across runs of the same seed.
        if scenario == Scenario::ServerUtilities || scenario == Scenario::SinglePartitionDemo {
            for l in 0..rr.per_edge_utility.len() {
                push(&format!("edge_utility_{l}"), rr.per_edge_utility[l]);
                push(&format!("accuracy_gain_{l}"), rr.per_edge_gain[l]);
                push(&format!("reward_{l}"), rr.rewards[l]);
                push(&format!("agg_count_{l}"), rr.partition.agg_counts()[l] as f64);
            }
        }
    }
}

/// Recompute the aggregate table from the long rows: means and confidence
/// intervals over trials whose run converged.
pub fn aggregate_rows(rows: &[MetricRow]) -> Vec<AggregateRow> {
    use std::collections::BTreeMap;
    let mut converged: BTreeMap<(String, u64, String, usize), bool> = BTreeMap::new();
    for r in rows {
        if r.metric == "converged" {
            converged.insert(
                (r.scenario.clone(), r.axis.to_bits(), r.rule.clone(), r.trial),
                r.value > 0.5,
            );
        }
    }
    let mut groups: BTreeMap<(String, u64, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        if r.metric == "converged" || !r.value.is_finite() {
            continue;
        }
        let ok = converged
            .get(&(r.scenario.clone(), r.axis.to_bits(), r.rule.clone(), r.trial))
            .copied()
            .unwrap_or(true);
        if !ok {
            continue;
        }
        groups
            .entry((r.scenario.clone(), r.axis.to_bits(), r.rule.clone(), r.metric.clone()))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((scenario, axis_bits, rule, metric), values)| {
            let (mean, ci95) = stats::mean_ci95(&values);
            AggregateRow {
                scenario,
                axis: f64::from_bits(axis_bits),
                rule,
                metric,
                mean,
                ci95,
                count: values.len(),
            }
        })
        .collect()
}

/// Run the whole experiment: every axis point, every trial, every rule.
/// Trials execute in parallel on isolated seed streams; assembly is
/// order-independent.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    spec.validate()?;
    let points = spec.axis_points();
    let jobs: Vec<(usize, f64, ParameterRanges, usize)> = points
        .iter()
        .enumerate()
        .flat_map(|(pi, (axis, ranges))| {
            (0..spec.trials).map(move |t| (pi, *axis, ranges.clone(), t))
        })
        .collect();

    let run_all = || -> Result<Vec<TrialReport>> {
        jobs.par_iter()
            .map(|(_, axis, ranges, trial)| run_trial(spec, ranges, *axis, *trial))
            .collect()
    };
    let mut trials = if spec.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(spec.workers)
            .build()
            .map_err(|e| Error::SpecValidation(format!("worker pool: {e}")))?
            .install(run_all)?
    } else {
        run_all()?
    };
    trials.sort_by(|a, b| a.axis.partial_cmp(&b.axis).unwrap().then(a.trial.cmp(&b.trial)));

    let mut rows = Vec::new();
    let mut diagnostics = Diagnostics::default();
    for report in &trials {
        metric_rows(spec.scenario, report, &mut rows);
        for rr in &report.rules {
            diagnostics.total_runs += 1;
            if !rr.converged {
                diagnostics.nonconverged_runs += 1;
            }
        }
    }
    let aggregates = aggregate_rows(&rows);
    Ok(ExperimentResults { spec: spec.clone(), rows, aggregates, diagnostics, trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seeds_give_identical_instances() {
        let ranges = ParameterRanges::default();
        let a = generate_instance(&ranges, 7).unwrap();
        let b = generate_instance(&ranges, 7).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = generate_instance(&ranges, 8).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn sampled_values_stay_in_declared_ranges() {
        let ranges = ParameterRanges::default();
        let draws: u64 = if cfg!(debug_assertions) { 300 } else { 10_000 };
        for seed in 0..draws {
            let inst = generate_instance(&ranges, seed).unwrap();
            assert_eq!(inst.n_devices(), 12);
            assert_eq!(inst.n_edges(), 4);
            for d in &inst.devices {
                assert!(d.cpu_freq >= 1e9 && d.cpu_freq <= 4e9);
                assert!(d.tx_power >= 0.2 && d.tx_power <= 0.5);
                assert!(d.position.iter().all(|&p| (0.0..=1000.0).contains(&p)));
            }
            for l in 0..4 {
                assert!(inst.econ.unit_price[l] >= 5.0 && inst.econ.unit_price[l] <= 15.0);
                assert!(
                    inst.econ.congestion_coef[l] >= 0.05 && inst.econ.congestion_coef[l] <= 0.15
                );
            }
            assert!(inst.config.cloud_interval >= 15.0 && inst.config.cloud_interval <= 25.0);
        }
    }

    #[test]
    fn empty_rule_list_is_rejected() {
        let spec = ExperimentSpec { rules: Vec::new(), ..Default::default() };
        assert!(spec.validate().is_err());
        let json = serde_json::to_string(&spec).unwrap();
        assert!(ExperimentSpec::from_json_str(&json).is_err());
    }

    #[test]
    fn spec_json_round_trips() {
        let spec = ExperimentSpec {
            scenario: Scenario::DeviceSweepLowCost,
            trials: 7,
            seed: 99,
            rules: vec![PreferenceRule::Altruistic, PreferenceRule::BandwidthOnly],
            ..Default::default()
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"device-sweep-low-cost\""));
        assert!(json.contains("\"bandwidth-only\""));
        let back = ExperimentSpec::from_json_str(&json).unwrap();
        assert_eq!(back, spec);
        // Sparse specs fill in defaults.
        let sparse: ExperimentSpec = serde_json::from_str(
            r#"{"scenario":"convergence","trials":3,"seed":1,"rules":["selfish"]}"#,
        )
        .unwrap();
        assert_eq!(sparse.ranges, ParameterRanges::default());
    }

    #[test]
    fn axis_points_follow_the_scenario() {
        let spec = ExperimentSpec { scenario: Scenario::IntervalSweep, ..Default::default() };
        let points = spec.axis_points();
        assert_eq!(points.len(), 3);
        assert_eq!(points[1].0, 20.0);
        assert_eq!(points[1].1.cloud_interval, (20.0, 20.0));

        let spec = ExperimentSpec { scenario: Scenario::DeviceSweepHighCost, ..Default::default() };
        let points = spec.axis_points();
        assert_eq!(points.len(), 7);
        assert_eq!(points[0].1.n_devices, 6);
        assert_eq!(points[0].1.congestion_coef, (0.15, 0.15));
    }

    #[test]
    fn trial_reuses_one_instance_across_rules() {
        let spec = ExperimentSpec {
            scenario: Scenario::Convergence,
            trials: 1,
            seed: 5,
            rules: vec![PreferenceRule::Selfish, PreferenceRule::Altruistic],
            ..Default::default()
        };
        let (axis, ranges) = &spec.axis_points()[0];
        let report = run_trial(&spec, ranges, *axis, 0).unwrap();
        assert_eq!(report.rules.len(), 2);
        // Same digest by construction; both rules saw the same instance.
        let again = run_trial(&spec, ranges, *axis, 0).unwrap();
        assert_eq!(report.instance_digest, again.instance_digest);
        for (a, b) in report.rules.iter().zip(&again.rules) {
            assert_eq!(a.total_utility.to_bits(), b.total_utility.to_bits());
        }
    }

    #[test]
    fn aggregates_exclude_nonconverged_trials() {
        let rows = vec![
            MetricRow {
                scenario: "s".into(),
                axis: 1.0,
                rule: "r".into(),
                trial: 0,
                metric: "total_utility".into(),
                value: 10.0,
            },
            MetricRow {
                scenario: "s".into(),
                axis: 1.0,
                rule: "r".into(),
                trial: 0,
                metric: "converged".into(),
                value: 1.0,
            },
            MetricRow {
                scenario: "s".into(),
                axis: 1.0,
                rule: "r".into(),
                trial: 1,
                metric: "total_utility".into(),
                value: 1e9,
            },
            MetricRow {
                scenario: "s".into(),
                axis: 1.0,
                rule: "r".into(),
                trial: 1,
                metric: "converged".into(),
                value: 0.0,
            },
        ];
        let aggregates = aggregate_rows(&rows);
        let total = aggregates.iter().find(|a| a.metric == "total_utility").unwrap();
        assert_eq!(total.count, 1);
        assert_eq!(total.mean, 10.0);
    }
}
