//! Economic formulas of the lower-level game.
//!
//! Model improvement, coalition revenue, congestion cost, coalition and
//! per-device utilities, and the deadline-saturating equilibrium data
//! strategy. Everything here is a pure function of the instance and a
//! coalition configuration (members, bandwidth, aggregation count); training
//! data amounts are always derived, never stored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{edge_aggregation_period, NetworkInstance, MBIT};

/// Per-edge economic parameters plus the global improvement coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomicParams {
    /// Reward per unit of model improvement offered by each edge server.
    pub unit_price: Vec<f64>,
    /// Fixed participation reward per device and round, per edge.
    pub fixed_reward: Vec<f64>,
    /// Congestion coefficient per edge (cost per squared Mbit/s of total
    /// coalition rate).
    pub congestion_coef: Vec<f64>,
    /// Model-improvement coefficient.
    pub improvement_coef: f64,
}

impl EconomicParams {
    /// Identical parameters for every edge; convenient for tests.
    pub fn uniform(
        n_edges: usize,
        unit_price: f64,
        fixed_reward: f64,
        alpha: f64,
        xi: f64,
    ) -> Self {
        Self {
            unit_price: vec![unit_price; n_edges],
            fixed_reward: vec![fixed_reward; n_edges],
            congestion_coef: vec![alpha; n_edges],
            improvement_coef: xi,
        }
    }

    pub fn validate(&self, n_edges: usize) -> Result<()> {
        if self.unit_price.len() != n_edges
            || self.fixed_reward.len() != n_edges
            || self.congestion_coef.len() != n_edges
        {
            return Err(Error::InvalidInstance("economic parameter rows != edge count".into()));
        }
        if self.unit_price.iter().any(|&p| !(p > 0.0))
            || self.fixed_reward.iter().any(|&x| !(x >= 0.0))
            || self.congestion_coef.iter().any(|&a| !(a > 0.0))
            || !(self.improvement_coef > 0.0)
        {
            return Err(Error::InvalidInstance(
                "need unit_price > 0, fixed_reward >= 0, congestion_coef > 0, improvement_coef > 0"
                    .into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Formula primitives
// ---------------------------------------------------------------------------

/// Model improvement after `k` edge aggregations over `total_data` units.
pub fn model_improvement(k: u32, total_data: f64, xi: f64) -> f64 {
    assert!(total_data >= 0.0, "total data must be >= 0");
    xi * (f64::from(k) * total_data).sqrt()
}

/// Training revenue of a coalition: improvement payment plus fixed rewards.
pub fn coalition_revenue(
    size: usize,
    k: u32,
    total_data: f64,
    unit_price: f64,
    xi: f64,
    fixed_reward: f64,
) -> f64 {
    unit_price * model_improvement(k, total_data, xi) + size as f64 * fixed_reward
}

/// Congestion cost borne by each member: quadratic in the coalition's total
/// uplink rate, normalized to Mbit/s.
pub fn congestion_cost(rates: &[f64], alpha: f64) -> f64 {
    let total: f64 = rates.iter().sum();
    let scaled = total / MBIT;
    alpha * scaled * scaled
}

/// Equilibrium per-round training data for one device: it saturates the
/// deadline, clamped at zero when the upload alone already exceeds the
/// per-round period (the device sits idle but keeps its bandwidth share).
pub fn nash_data_strategy(
    instance: &NetworkInstance,
    device: usize,
    edge: usize,
    coalition_size: usize,
    bandwidth: f64,
    k: u32,
) -> f64 {
    assert!(k >= 1);
    let rate = member_rate(instance, device, edge, coalition_size, bandwidth);
    if rate <= 0.0 {
        return 0.0;
    }
    let period = edge_aggregation_period(instance.config.cloud_interval, k);
    let budget = period - instance.config.model_size / rate;
    (budget * instance.devices[device].work_rate()).max(0.0)
}

/// Uplink rate of one member under the equal split.
pub fn member_rate(
    instance: &NetworkInstance,
    device: usize,
    edge: usize,
    coalition_size: usize,
    bandwidth: f64,
) -> f64 {
    assert!(coalition_size >= 1);
    bandwidth / coalition_size as f64 * instance.spectral_efficiency(device, edge)
}

// ---------------------------------------------------------------------------
// Coalition evaluation
// ---------------------------------------------------------------------------

/// Fully evaluated coalition configuration: rates, equilibrium data amounts
/// and every utility figure derived from them.
#[derive(Debug, Clone)]
pub struct CoalitionSnapshot {
    pub edge: usize,
    pub members: Vec<usize>,
    pub bandwidth: f64,
    pub agg_count: u32,
    /// Per-member uplink rates, bits/s.
    pub rates: Vec<f64>,
    /// Per-member equilibrium training data, units per round.
    pub data: Vec<f64>,
    pub total_data: f64,
    pub revenue: f64,
    /// Congestion cost paid by each member.
    pub congestion: f64,
    /// Coalition utility: revenue minus the members' combined congestion.
    pub utility: f64,
    pub device_utilities: Vec<f64>,
}

/// Evaluate a coalition at a (bandwidth, aggregation count) configuration.
/// An empty member list yields an all-zero snapshot.
pub fn snapshot(
    instance: &NetworkInstance,
    edge: usize,
    members: &[usize],
    bandwidth: f64,
    k: u32,
) -> CoalitionSnapshot {
    let size = members.len();
    if size == 0 {
        return CoalitionSnapshot {
            edge,
            members: Vec::new(),
            bandwidth,
            agg_count: k,
            rates: Vec::new(),
            data: Vec::new(),
            total_data: 0.0,
            revenue: 0.0,
            congestion: 0.0,
            utility: 0.0,
            device_utilities: Vec::new(),
        };
    }
    let rates: Vec<f64> =
        members.iter().map(|&n| member_rate(instance, n, edge, size, bandwidth)).collect();
    let data: Vec<f64> = members
        .iter()
        .map(|&n| nash_data_strategy(instance, n, edge, size, bandwidth, k))
        .collect();
    let total_data: f64 = data.iter().sum();
    let rho = instance.econ.unit_price[edge];
    let x = instance.econ.fixed_reward[edge];
    let alpha = instance.econ.congestion_coef[edge];
    let xi = instance.econ.improvement_coef;
    let revenue = coalition_revenue(size, k, total_data, rho, xi, x);
    let congestion = congestion_cost(&rates, alpha);
    let utility = revenue - size as f64 * congestion;
    let improvement_payment = rho * model_improvement(k, total_data, xi);
    let device_utilities: Vec<f64> = data
        .iter()
        .map(|&d| {
            let share = if total_data > 0.0 { d / total_data } else { 0.0 };
            improvement_payment * share + x - congestion
        })
        .collect();
    CoalitionSnapshot {
        edge,
        members: members.to_vec(),
        bandwidth,
        agg_count: k,
        rates,
        data,
        total_data,
        revenue,
        congestion,
        utility,
        device_utilities,
    }
}

/// Utility of all devices in one coalition.
pub fn coalition_utility(
    instance: &NetworkInstance,
    edge: usize,
    members: &[usize],
    bandwidth: f64,
    k: u32,
) -> f64 {
    snapshot(instance, edge, members, bandwidth, k).utility
}

/// Utility of a single member: its data-proportional share of the
/// improvement payment, plus the fixed reward, minus its congestion cost.
pub fn device_utility(
    instance: &NetworkInstance,
    device: usize,
    edge: usize,
    members: &[usize],
    bandwidth: f64,
    k: u32,
) -> f64 {
    let snap = snapshot(instance, edge, members, bandwidth, k);
    let idx =
        snap.members.iter().position(|&n| n == device).expect("device must be a coalition member");
    snap.device_utilities[idx]
}

/// Total utility over all coalitions of a partition-shaped configuration.
pub fn total_utility(
    instance: &NetworkInstance,
    coalitions: &[Vec<usize>],
    bandwidth: &[f64],
    agg_counts: &[u32],
) -> f64 {
    coalitions
        .iter()
        .enumerate()
        .filter(|(_, members)| !members.is_empty())
        .map(|(l, members)| coalition_utility(instance, l, members, bandwidth[l], agg_counts[l]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{local_training_time, upload_time};
    use crate::testkit::{random_instance, TestDims};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn model_improvement_examples() {
        assert_eq!(model_improvement(4, 25.0, 1.0), 10.0);
        assert_eq!(model_improvement(1, 0.0, 1.0), 0.0);
        assert_eq!(model_improvement(7, 63.0, 2.0), 42.0);
    }

    #[test]
    fn revenue_examples() {
        assert_eq!(coalition_revenue(2, 4, 25.0, 1.0, 1.0, 3.0), 16.0);
        assert_eq!(coalition_revenue(1, 1, 0.0, 5.0, 1.0, 2.0), 2.0);
        assert_eq!(coalition_revenue(3, 9, 4.0, 2.0, 1.0, 0.0), 12.0);
    }

    #[test]
    fn congestion_examples() {
        assert!((congestion_cost(&[2e6], 0.1) - 0.4).abs() < 1e-12);
        assert_eq!(congestion_cost(&[], 0.1), 0.0);
        assert!((congestion_cost(&[1e6, 2e6], 0.05) - 0.45).abs() < 1e-12);
    }

    #[test]
    fn revenue_monotone_in_data_and_rounds() {
        let base = coalition_revenue(3, 4, 10.0, 2.0, 1.0, 1.0);
        assert!(coalition_revenue(3, 4, 11.0, 2.0, 1.0, 1.0) >= base);
        assert!(coalition_revenue(3, 5, 10.0, 2.0, 1.0, 1.0) >= base);
    }

    #[test]
    fn improvement_is_concave_in_data() {
        // Second differences on a grid must be <= 0.
        let h = 0.5;
        for i in 1..200 {
            let d = i as f64 * h;
            let second = model_improvement(3, d + h, 1.5) - 2.0 * model_improvement(3, d, 1.5)
                + model_improvement(3, d - h, 1.5);
            assert!(second <= 1e-12, "second difference {second} at {d}");
        }
    }

    #[test]
    fn nash_data_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inst = random_instance(&mut rng, TestDims { n_devices: 4, n_edges: 2 });
        // Clamped case: starve the coalition of bandwidth so upload alone
        // exceeds the period.
        let d = nash_data_strategy(&inst, 0, 0, 4, 1e3, 8);
        assert_eq!(d, 0.0);
        // Zero bandwidth -> zero rate -> zero data.
        assert_eq!(nash_data_strategy(&inst, 0, 0, 1, 0.0, 1), 0.0);
    }

    #[test]
    fn nash_data_saturates_the_deadline() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..50 {
            let inst = random_instance(&mut rng, TestDims { n_devices: 6, n_edges: 3 });
            let members = vec![0, 1, 2];
            let k = 1 + trial % 4;
            let bw = inst.config.total_bandwidth / 3.0;
            for &n in &members {
                let data = nash_data_strategy(&inst, n, 0, members.len(), bw, k);
                if data > 0.0 {
                    let rate = member_rate(&inst, n, 0, members.len(), bw);
                    let total = local_training_time(data, &inst.devices[n])
                        + upload_time(inst.config.model_size, rate).unwrap();
                    let period = edge_aggregation_period(inst.config.cloud_interval, k);
                    assert!(
                        (total - period).abs() <= 1e-9 * period.max(1.0),
                        "slack {} at device {n}",
                        total - period
                    );
                }
            }
        }
    }

    #[test]
    fn shares_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let inst = random_instance(&mut rng, TestDims { n_devices: 6, n_edges: 2 });
        let snap = snapshot(&inst, 0, &[0, 1, 2, 3], inst.config.total_bandwidth / 2.0, 2);
        if snap.total_data > 0.0 {
            let share_sum: f64 = snap.data.iter().map(|d| d / snap.total_data).sum();
            assert!((share_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_member_device_utility_equals_coalition_utility() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let inst = random_instance(&mut rng, TestDims { n_devices: 4, n_edges: 2 });
        let u_dev = device_utility(&inst, 2, 1, &[2], 2e6, 3);
        let u_coal = coalition_utility(&inst, 1, &[2], 2e6, 3);
        assert!((u_dev - u_coal).abs() <= 1e-12 * u_coal.abs().max(1.0));
    }

    #[test]
    fn empty_data_coalition_is_pure_cost_when_unrewarded() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut inst = random_instance(&mut rng, TestDims { n_devices: 4, n_edges: 2 });
        inst.econ.fixed_reward = vec![0.0, 0.0];
        // Tiny bandwidth: everyone idle, revenue zero, congestion remains.
        let snap = snapshot(&inst, 0, &[0, 1], 5e2, 1);
        assert_eq!(snap.total_data, 0.0);
        let expected = -2.0 * congestion_cost(&snap.rates, inst.econ.congestion_coef[0]);
        assert!((snap.utility - expected).abs() < 1e-12);
    }

    #[test]
    fn utility_composes_revenue_and_congestion() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, TestDims { n_devices: 6, n_edges: 2 });
            let snap = snapshot(&inst, 0, &[0, 1, 2], 2.5e6, 3);
            let composed = snap.revenue - 3.0 * snap.congestion;
            assert!((snap.utility - composed).abs() <= 1e-12 * composed.abs().max(1.0));
        }
    }

    #[test]
    fn total_utility_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let inst = random_instance(&mut rng, TestDims { n_devices: 6, n_edges: 2 });
        let coalitions = vec![vec![0, 1, 2], vec![3, 4, 5]];
        let bw = vec![2e6, 3e6];
        let ks = vec![2, 3];
        let total = total_utility(&inst, &coalitions, &bw, &ks);
        let a = coalition_utility(&inst, 0, &coalitions[0], bw[0], ks[0]);
        let b = coalition_utility(&inst, 1, &coalitions[1], bw[1], ks[1]);
        assert!((total - (a + b)).abs() <= 1e-9 * total.abs().max(1.0));
    }

    proptest! {
        // Independent oracle: summing per-device utilities reproduces the
        // coalition utility on random configurations.
        #[test]
        fn device_utilities_decompose_coalition_utility(
            seed in 0u64..500,
            size in 1usize..6,
            k in 1u32..8,
            frac in 0.05f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(&mut rng, TestDims { n_devices: 6, n_edges: 3 });
            let members: Vec<usize> = (0..size).collect();
            let bw = frac * inst.config.total_bandwidth;
            let snap = snapshot(&inst, 1, &members, bw, k);
            let summed: f64 = members
                .iter()
                .map(|&n| device_utility(&inst, n, 1, &members, bw, k))
                .sum();
            prop_assert!(
                (summed - snap.utility).abs() <= 1e-9 * snap.utility.abs().max(1.0),
                "sum {} vs coalition {}", summed, snap.utility
            );
        }
    }
}
