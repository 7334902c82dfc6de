//! Lower-level coalition formation game.
//!
//! Devices switch between edge-server coalitions under a preference rule;
//! each attempted switch is evaluated against a fully hypothetical post-move
//! configuration (pair bandwidth reallocation, refreshed aggregation counts,
//! equilibrium data). The dynamics certify stability by exhaustive deviation
//! checks and track the exact potential (the summed device utilities).

use serde::{Deserialize, Serialize};

use crate::bandwidth::{self, CoalitionSpec, GpConfig};
use crate::economics;
use crate::error::{Error, Result};
use crate::model::NetworkInstance;
use crate::stackelberg;

/// Strict-improvement margin for every preference predicate. Weak acceptance
/// can oscillate between equal-utility partitions forever.
pub const ACCEPT_TOLERANCE: f64 = 1e-9;

/// Device preference rules, plus the no-switching baseline that fixes
/// associations by location and posted reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreferenceRule {
    Selfish,
    Pareto,
    Altruistic,
    BandwidthOnly,
}

impl PreferenceRule {
    pub const ALL: [PreferenceRule; 4] = [
        PreferenceRule::Selfish,
        PreferenceRule::Pareto,
        PreferenceRule::Altruistic,
        PreferenceRule::BandwidthOnly,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PreferenceRule::Selfish => "selfish",
            PreferenceRule::Pareto => "pareto",
            PreferenceRule::Altruistic => "altruistic",
            PreferenceRule::BandwidthOnly => "bandwidth-only",
        }
    }
}

impl std::str::FromStr for PreferenceRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "selfish" => Ok(PreferenceRule::Selfish),
            "pareto" => Ok(PreferenceRule::Pareto),
            "altruistic" => Ok(PreferenceRule::Altruistic),
            "bandwidth-only" | "bandwidth_only" | "bandwidthonly" => {
                Ok(PreferenceRule::BandwidthOnly)
            }
            other => Err(Error::SpecValidation(format!("unknown preference rule '{other}'"))),
        }
    }
}

impl std::fmt::Display for PreferenceRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------------------
// Partition
// ---------------------------------------------------------------------------

/// Assignment of every device to exactly one coalition, with the per-edge
/// bandwidth shares and aggregation counts that go with it. The assignment
/// vector and the per-edge member lists are kept mutually consistent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoalitionPartition {
    assignment: Vec<usize>,
    coalitions: Vec<Vec<usize>>,
    bandwidth: Vec<f64>,
    /// Aggregation counts; entries for empty coalitions are a placeholder 1.
    agg_counts: Vec<u32>,
}

impl CoalitionPartition {
    pub fn new(assignment: Vec<usize>, n_edges: usize) -> Result<Self> {
        if assignment.iter().any(|&a| a >= n_edges) {
            return Err(Error::InvalidPartition("assignment references unknown edge".into()));
        }
        let mut coalitions = vec![Vec::new(); n_edges];
        for (dev, &a) in assignment.iter().enumerate() {
            coalitions[a].push(dev);
        }
        Ok(Self {
            assignment,
            coalitions,
            bandwidth: vec![0.0; n_edges],
            agg_counts: vec![1; n_edges],
        })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn coalitions(&self) -> &[Vec<usize>] {
        &self.coalitions
    }

    pub fn members(&self, edge: usize) -> &[usize] {
        &self.coalitions[edge]
    }

    pub fn coalition_of(&self, device: usize) -> usize {
        self.assignment[device]
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn agg_counts(&self) -> &[u32] {
        &self.agg_counts
    }

    pub fn n_edges(&self) -> usize {
        self.coalitions.len()
    }

    pub fn set_bandwidth(&mut self, bandwidth: Vec<f64>) {
        assert_eq!(bandwidth.len(), self.coalitions.len());
        self.bandwidth = bandwidth;
    }

    pub fn set_agg_counts(&mut self, agg_counts: Vec<u32>) {
        assert_eq!(agg_counts.len(), self.coalitions.len());
        assert!(agg_counts.iter().all(|&k| k >= 1));
        self.agg_counts = agg_counts;
    }

    /// Move one device and commit the pair's new bandwidth and counts;
    /// everything else stays untouched.
    pub fn apply_switch(
        &mut self,
        device: usize,
        to_edge: usize,
        pair_bandwidth: (f64, f64),
        pair_counts: (u32, u32),
    ) {
        let from_edge = self.assignment[device];
        assert_ne!(from_edge, to_edge, "switch must change the coalition");
        self.coalitions[from_edge].retain(|&d| d != device);
        let insert_at = self.coalitions[to_edge].partition_point(|&d| d < device);
        self.coalitions[to_edge].insert(insert_at, device);
        self.assignment[device] = to_edge;
        self.bandwidth[from_edge] = pair_bandwidth.0;
        self.bandwidth[to_edge] = pair_bandwidth.1;
        self.agg_counts[from_edge] = pair_counts.0;
        self.agg_counts[to_edge] = pair_counts.1;
    }

    /// Disjointness, coverage, bandwidth feasibility and count positivity.
    pub fn validate(&self, instance: &NetworkInstance) -> Result<()> {
        let n = instance.n_devices();
        let l = instance.n_edges();
        if self.assignment.len() != n || self.coalitions.len() != l {
            return Err(Error::InvalidPartition("partition shape mismatch".into()));
        }
        let mut seen = vec![false; n];
        for (edge, members) in self.coalitions.iter().enumerate() {
            for &dev in members {
                if dev >= n || seen[dev] {
                    return Err(Error::InvalidPartition(format!(
                        "device {dev} appears twice or is unknown"
                    )));
                }
                seen[dev] = true;
                if self.assignment[dev] != edge {
                    return Err(Error::InvalidPartition(format!(
                        "device {dev} listed under edge {edge} but assigned to {}",
                        self.assignment[dev]
                    )));
                }
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidPartition("some device is in no coalition".into()));
        }
        let total: f64 = self.bandwidth.iter().sum();
        if self.bandwidth.iter().any(|&b| b < 0.0)
            || total > instance.config.total_bandwidth * (1.0 + 1e-12)
        {
            return Err(Error::InvalidPartition(format!(
                "bandwidth allocation infeasible: sum {total}"
            )));
        }
        if self.agg_counts.iter().any(|&k| k < 1) {
            return Err(Error::InvalidPartition("aggregation counts must be >= 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Switch evaluation
// ---------------------------------------------------------------------------

/// Why a candidate switch was (not) taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchVerdict {
    Accepted,
    /// The rule's predicate did not strictly improve.
    NoGain,
    /// Some member of an affected coalition would strictly lose.
    HarmsOthers,
    /// The mover has a zero data budget at the target for every count.
    TargetInfeasible,
    /// The active rule never switches.
    RuleForbids,
}

/// Outcome of one (hypothetical) switch evaluation. The partition itself is
/// never modified here.
#[derive(Debug, Clone)]
pub struct SwitchEvaluation {
    pub device: usize,
    pub from_edge: usize,
    pub to_edge: usize,
    pub verdict: SwitchVerdict,
    pub mover_before: f64,
    pub mover_after: f64,
    /// Summed device utilities of the two affected coalitions, before/after.
    pub pair_before: f64,
    pub pair_after: f64,
    /// Hypothetical pair allocation: (from, to).
    pub pair_bandwidth: (f64, f64),
    pub pair_counts: (u32, u32),
}

impl SwitchEvaluation {
    pub fn accepted(&self) -> bool {
        self.verdict == SwitchVerdict::Accepted
    }
}

/// Evaluate one candidate switch under `rule`, fully hypothetically: the
/// bandwidth owned by the two affected coalitions is reallocated by the
/// restricted solver, both edges refresh their aggregation counts at the
/// posted rewards, and every member's data is re-derived before utilities
/// are compared.
pub fn evaluate_switch(
    instance: &NetworkInstance,
    partition: &CoalitionPartition,
    rewards: &[f64],
    device: usize,
    to_edge: usize,
    rule: PreferenceRule,
    gp: &GpConfig,
) -> SwitchEvaluation {
    let from_edge = partition.coalition_of(device);
    assert_ne!(from_edge, to_edge, "target must differ from the current coalition");

    let old_from = partition.members(from_edge);
    let old_to = partition.members(to_edge);
    let b_from = partition.bandwidth()[from_edge];
    let b_to = partition.bandwidth()[to_edge];
    let k_from = partition.agg_counts()[from_edge];
    let k_to = partition.agg_counts()[to_edge];

    let before_from = economics::snapshot(instance, from_edge, old_from, b_from, k_from);
    let before_to = economics::snapshot(instance, to_edge, old_to, b_to, k_to);
    let pair_before: f64 = before_from.device_utilities.iter().sum::<f64>()
        + before_to.device_utilities.iter().sum::<f64>();
    let mover_idx = old_from.iter().position(|&d| d == device).expect("mover is a member");
    let mover_before = before_from.device_utilities[mover_idx];

    let reject = |verdict: SwitchVerdict| SwitchEvaluation {
        device,
        from_edge,
        to_edge,
        verdict,
        mover_before,
        mover_after: mover_before,
        pair_before,
        pair_after: pair_before,
        pair_bandwidth: (b_from, b_to),
        pair_counts: (k_from, k_to),
    };

    if rule == PreferenceRule::BandwidthOnly {
        return reject(SwitchVerdict::RuleForbids);
    }

    let new_from: Vec<usize> = old_from.iter().copied().filter(|&d| d != device).collect();
    let mut new_to: Vec<usize> = old_to.to_vec();
    let insert_at = new_to.partition_point(|&d| d < device);
    new_to.insert(insert_at, device);

    // Reallocate the pair's combined bandwidth at the current counts.
    let pair_sum = b_from + b_to;
    let split = bandwidth::solve_pair(
        instance,
        &CoalitionSpec { edge: from_edge, members: &new_from, agg_count: k_from },
        &CoalitionSpec { edge: to_edge, members: &new_to, agg_count: k_to },
        pair_sum,
        gp,
    );

    // The target must admit the mover at some count; the budget is largest
    // at a single aggregation.
    if economics::nash_data_strategy(instance, device, to_edge, new_to.len(), split.second, 1)
        <= 0.0
    {
        return reject(SwitchVerdict::TargetInfeasible);
    }

    // Both affected edges rethink their counts at the posted rewards.
    let k_from_new = stackelberg::best_response_aggregations(
        instance,
        from_edge,
        &new_from,
        split.first,
        rewards[from_edge],
    )
    .unwrap_or(1);
    let k_to_new = stackelberg::best_response_aggregations(
        instance,
        to_edge,
        &new_to,
        split.second,
        rewards[to_edge],
    )
    .unwrap_or(1);

    let after_from = economics::snapshot(instance, from_edge, &new_from, split.first, k_from_new);
    let after_to = economics::snapshot(instance, to_edge, &new_to, split.second, k_to_new);
    let pair_after: f64 = after_from.device_utilities.iter().sum::<f64>()
        + after_to.device_utilities.iter().sum::<f64>();
    let mover_after = after_to.device_utilities[insert_at];

    let verdict = match rule {
        PreferenceRule::Selfish => {
            if mover_after > mover_before + ACCEPT_TOLERANCE {
                SwitchVerdict::Accepted
            } else {
                SwitchVerdict::NoGain
            }
        }
        PreferenceRule::Pareto => {
            if mover_after <= mover_before + ACCEPT_TOLERANCE {
                SwitchVerdict::NoGain
            } else {
                // Remaining members of the abandoned coalition, and every
                // incumbent of the joined one, must not strictly lose.
                let from_ok = new_from.iter().enumerate().all(|(i, &d)| {
                    let before = before_from.device_utilities
                        [old_from.iter().position(|&x| x == d).unwrap()];
                    after_from.device_utilities[i] >= before - ACCEPT_TOLERANCE
                });
                let to_ok = old_to.iter().enumerate().all(|(i, &d)| {
                    let after =
                        after_to.device_utilities[new_to.iter().position(|&x| x == d).unwrap()];
                    after >= before_to.device_utilities[i] - ACCEPT_TOLERANCE
                });
                if from_ok && to_ok {
                    SwitchVerdict::Accepted
                } else {
                    SwitchVerdict::HarmsOthers
                }
            }
        }
        PreferenceRule::Altruistic => {
            if pair_after > pair_before + ACCEPT_TOLERANCE {
                SwitchVerdict::Accepted
            } else {
                SwitchVerdict::NoGain
            }
        }
        PreferenceRule::BandwidthOnly => unreachable!(),
    };

    SwitchEvaluation {
        device,
        from_edge,
        to_edge,
        verdict,
        mover_before,
        mover_after,
        pair_before,
        pair_after,
        pair_bandwidth: (split.first, split.second),
        pair_counts: (k_from_new, k_to_new),
    }
}

/// Redistribute the combined bandwidth of two coalitions, leaving every
/// other coalition untouched. Thin wrapper over the restricted solver.
pub fn reallocate_on_switch(
    instance: &NetworkInstance,
    first: &CoalitionSpec<'_>,
    second: &CoalitionSpec<'_>,
    pair_sum: f64,
    gp: &GpConfig,
) -> (f64, f64) {
    let split = bandwidth::solve_pair(instance, first, second, pair_sum, gp);
    (split.first, split.second)
}

// ---------------------------------------------------------------------------
// Potential
// ---------------------------------------------------------------------------

/// Exact potential of a configuration: the sum of every device's utility
/// over all coalitions.
pub fn potential_value(
    instance: &NetworkInstance,
    coalitions: &[Vec<usize>],
    bandwidth: &[f64],
    agg_counts: &[u32],
) -> f64 {
    coalitions
        .iter()
        .enumerate()
        .map(|(l, members)| {
            economics::snapshot(instance, l, members, bandwidth[l], agg_counts[l])
                .device_utilities
                .iter()
                .sum::<f64>()
        })
        .sum()
}

pub fn partition_potential(instance: &NetworkInstance, partition: &CoalitionPartition) -> f64 {
    potential_value(instance, partition.coalitions(), partition.bandwidth(), partition.agg_counts())
}

/// Residual of the exact-potential identity for one unilateral move: the
/// change of the mover's two-coalition objective minus the change of the
/// global potential. Zero up to rounding for any pair of configurations that
/// differ only in the two affected coalitions.
pub fn potential_identity_residual(
    instance: &NetworkInstance,
    before: &CoalitionPartition,
    after: &CoalitionPartition,
    device: usize,
) -> f64 {
    let from_edge = before.coalition_of(device);
    let to_edge = after.coalition_of(device);
    let pair_sum = |p: &CoalitionPartition| -> f64 {
        let mut edges = vec![from_edge];
        if to_edge != from_edge {
            edges.push(to_edge);
        }
        edges
            .into_iter()
            .map(|l| {
                economics::snapshot(instance, l, p.members(l), p.bandwidth()[l], p.agg_counts()[l])
                    .device_utilities
                    .iter()
                    .sum::<f64>()
            })
            .sum()
    };
    let delta_objective = pair_sum(after) - pair_sum(before);
    let delta_potential =
        partition_potential(instance, after) - partition_potential(instance, before);
    (delta_objective - delta_potential).abs()
}

// ---------------------------------------------------------------------------
// Stability
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StabilityCheck {
    pub stable: bool,
    /// First improving unilateral deviation found, if any.
    pub deviation: Option<(usize, usize)>,
}

/// Exhaustively enumerate every device x alternative-edge deviation with
/// full hypothetical reallocation; stable iff none is accepted.
pub fn is_stable(
    instance: &NetworkInstance,
    partition: &CoalitionPartition,
    rewards: &[f64],
    rule: PreferenceRule,
    gp: &GpConfig,
) -> StabilityCheck {
    if rule == PreferenceRule::BandwidthOnly {
        return StabilityCheck { stable: true, deviation: None };
    }
    for device in 0..instance.n_devices() {
        for to_edge in 0..instance.n_edges() {
            if to_edge == partition.coalition_of(device) {
                continue;
            }
            if evaluate_switch(instance, partition, rewards, device, to_edge, rule, gp).accepted() {
                return StabilityCheck { stable: false, deviation: Some((device, to_edge)) };
            }
        }
    }
    StabilityCheck { stable: true, deviation: None }
}

// ---------------------------------------------------------------------------
// Formation dynamics
// ---------------------------------------------------------------------------

/// One attempted switch, as it lands in the trial log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwitchRecord {
    /// Attempt counter within the run (1-based).
    pub iteration: usize,
    pub device: usize,
    pub from_edge: usize,
    pub to_edge: usize,
    pub rule: PreferenceRule,
    pub accepted: bool,
    pub potential_before: f64,
    pub potential_after: f64,
}

/// Potential value after an accepted switch (plus the initial sample).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PotentialSample {
    /// Attempt index at which the value was recorded; 0 is the initial state.
    pub attempt: usize,
    /// Number of accepted switches so far.
    pub switch_index: usize,
    pub potential: f64,
}

#[derive(Debug, Clone)]
pub struct FormationConfig {
    pub gp: GpConfig,
    /// Cap on switch attempts before the run is declared non-convergent.
    pub max_attempts: usize,
    /// Consecutive rejected attempts per device before certification is
    /// attempted: `stall_factor * n_devices`.
    pub stall_factor: usize,
    /// Re-price only the two switch-affected edges instead of the full
    /// cyclic walk after each accepted switch.
    pub reprice_affected_only: bool,
    /// Record only every k-th rejected attempt in the switch log (accepted
    /// switches are always recorded); 1 keeps everything, 0 keeps none.
    pub log_every_rejection: usize,
    /// Keep the per-iteration trace of the initial global bandwidth solve.
    pub record_gp_trace: bool,
}

impl Default for FormationConfig {
    fn default() -> Self {
        Self {
            gp: GpConfig::default(),
            max_attempts: 10_000,
            stall_factor: 50,
            reprice_affected_only: false,
            log_every_rejection: 1,
            record_gp_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FormationOutcome {
    pub rule: PreferenceRule,
    pub partition: CoalitionPartition,
    /// Posted unit rewards at the end of the run.
    pub rewards: Vec<f64>,
    pub switch_log: Vec<SwitchRecord>,
    pub potential_trajectory: Vec<PotentialSample>,
    pub attempts: usize,
    pub accepted_switches: usize,
    /// True iff an exhaustive stability check certified the final partition
    /// (or the rule admits no switching).
    pub converged: bool,
    /// False if any pricing walk hit its cycle cap during the run.
    pub pricing_converged: bool,
    /// Trace of the initial global bandwidth solve, when requested.
    pub initial_gp_trace: Vec<bandwidth::GpTraceRow>,
}

impl FormationOutcome {
    pub fn total_utility(&self, instance: &NetworkInstance) -> f64 {
        economics::total_utility(
            instance,
            self.partition.coalitions(),
            self.partition.bandwidth(),
            self.partition.agg_counts(),
        )
    }
}

/// Location-and-reward association for the no-switching baseline: among the
/// edges where the device could finish a round on its own, take the highest
/// posted price, breaking ties by distance; fall back to the nearest edge.
pub fn bandwidth_only_assignment(instance: &NetworkInstance) -> Vec<usize> {
    (0..instance.n_devices())
        .map(|dev| {
            let dist2 = |l: usize| {
                let dp = instance.devices[dev].position;
                let ep = instance.edges[l].position;
                (dp[0] - ep[0]).powi(2) + (dp[1] - ep[1]).powi(2)
            };
            let mut best: Option<(usize, f64, f64)> = None; // (edge, price, dist2)
            for l in 0..instance.n_edges() {
                if instance.singleton_budget(dev, l) <= 0.0 {
                    continue;
                }
                let price = instance.econ.unit_price[l];
                let d2 = dist2(l);
                let better = match best {
                    None => true,
                    Some((_, bp, bd)) => price > bp || (price == bp && d2 < bd),
                };
                if better {
                    best = Some((l, price, d2));
                }
            }
            best.map(|(l, _, _)| l).unwrap_or_else(|| {
                (0..instance.n_edges())
                    .min_by(|&a, &b| dist2(a).partial_cmp(&dist2(b)).unwrap())
                    .unwrap()
            })
        })
        .collect()
}

/// Run the full two-level dynamics for one rule on one instance.
///
/// Starts from `initial_assignment` (or a uniformly random one), allocates
/// bandwidth globally, lets the cloud price and the edges respond, then
/// repeats random single-device exploration with pair reallocation and pair
/// count refresh on every accepted switch, re-pricing afterwards. A stall of
/// `stall_factor * n` consecutive rejections triggers an exhaustive
/// stability check; only that check certifies convergence.
pub fn run_formation(
    instance: &NetworkInstance,
    rule: PreferenceRule,
    config: &FormationConfig,
    rng: &mut impl rand::Rng,
    initial_assignment: Option<Vec<usize>>,
) -> Result<FormationOutcome> {
    let n = instance.n_devices();
    let l = instance.n_edges();
    let assignment = match rule {
        PreferenceRule::BandwidthOnly => bandwidth_only_assignment(instance),
        _ => initial_assignment.unwrap_or_else(|| (0..n).map(|_| rng.random_range(0..l)).collect()),
    };
    let mut partition = CoalitionPartition::new(assignment, l)?;
    let mut pricing_converged = true;

    // Initial global allocation at a single aggregation per coalition, then
    // an initial pricing pass fixing rewards and counts.
    let groups: Vec<CoalitionSpec<'_>> = partition
        .coalitions
        .iter()
        .enumerate()
        .map(|(edge, members)| CoalitionSpec { edge, members, agg_count: 1 })
        .collect();
    let gp_out = bandwidth::solve(
        instance,
        &groups,
        instance.config.total_bandwidth,
        &config.gp,
        config.record_gp_trace,
    );
    let initial_gp_trace = gp_out.trace;
    partition.set_bandwidth(gp_out.bandwidth);
    let pricing =
        stackelberg::solve_pricing(instance, &partition.coalitions, &partition.bandwidth)?;
    pricing_converged &= pricing.converged;
    let mut rewards = pricing.rewards;
    partition.set_agg_counts(pricing.schedule.iter().map(|k| k.unwrap_or(1)).collect());

    let mut potential = partition_potential(instance, &partition);
    let mut switch_log = Vec::new();
    let mut trajectory = vec![PotentialSample { attempt: 0, switch_index: 0, potential }];
    let mut attempts = 0;
    let mut accepted_switches = 0;

    if rule == PreferenceRule::BandwidthOnly || l == 1 {
        return Ok(FormationOutcome {
            rule,
            partition,
            rewards,
            switch_log,
            potential_trajectory: trajectory,
            attempts,
            accepted_switches,
            converged: true,
            pricing_converged,
            initial_gp_trace,
        });
    }

    let stall_rounds = config.stall_factor * n;
    let mut stall = 0;
    let mut converged = false;
    while attempts < config.max_attempts {
        attempts += 1;
        let device = rng.random_range(0..n);
        let mut to_edge = rng.random_range(0..l - 1);
        if to_edge >= partition.coalition_of(device) {
            to_edge += 1;
        }
        let eval =
            evaluate_switch(instance, &partition, &rewards, device, to_edge, rule, &config.gp);
        if eval.accepted() {
            partition.apply_switch(device, to_edge, eval.pair_bandwidth, eval.pair_counts);
            let after = partition_potential(instance, &partition);
            switch_log.push(SwitchRecord {
                iteration: attempts,
                device,
                from_edge: eval.from_edge,
                to_edge,
                rule,
                accepted: true,
                potential_before: potential,
                potential_after: after,
            });
            potential = after;
            accepted_switches += 1;
            trajectory.push(PotentialSample {
                attempt: attempts,
                switch_index: accepted_switches,
                potential,
            });
            stall = 0;
            // The cloud re-prices; committed counts elsewhere stay put.
            let outcome = if config.reprice_affected_only {
                stackelberg::reprice_edges(
                    instance,
                    &partition.coalitions,
                    &partition.bandwidth,
                    &rewards,
                    &[eval.from_edge, to_edge],
                )?
            } else {
                stackelberg::solve_pricing(instance, &partition.coalitions, &partition.bandwidth)?
            };
            pricing_converged &= outcome.converged;
            rewards = outcome.rewards;
        } else {
            if config.log_every_rejection > 0 && attempts % config.log_every_rejection == 0 {
                switch_log.push(SwitchRecord {
                    iteration: attempts,
                    device,
                    from_edge: eval.from_edge,
                    to_edge,
                    rule,
                    accepted: false,
                    potential_before: potential,
                    potential_after: potential + (eval.pair_after - eval.pair_before),
                });
            }
            stall += 1;
            if stall >= stall_rounds {
                if is_stable(instance, &partition, &rewards, rule, &config.gp).stable {
                    converged = true;
                    break;
                }
                stall = 0;
            }
        }
    }

    Ok(FormationOutcome {
        rule,
        partition,
        rewards,
        switch_log,
        potential_trajectory: trajectory,
        attempts,
        accepted_switches,
        converged,
        pricing_converged,
        initial_gp_trace,
    })
}
