//! Upper-level pricing game between the cloud and the edge servers.
//!
//! The cloud posts a per-edge unit reward for accuracy improvement; each edge
//! server answers with its per-interval aggregation count. The follower
//! problem is solved exactly through a change of variable that makes the
//! edge utility concave, and the leader runs a cyclic price walk over the
//! per-edge table of prices that make each integer count a best response.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkInstance;

/// Leader-side parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackelbergParams {
    /// Valuation of accuracy loss.
    pub loss_valuation: f64,
    /// Accuracy loss with no training data at all; gains are measured
    /// against this ceiling.
    pub max_loss: f64,
    /// Scale of the cloud's revenue function.
    pub h_beta: f64,
    pub h_a: f64,
    pub h_b: f64,
    /// Price step of the cyclic walk, as a fraction of each edge's
    /// tabulated price range.
    pub price_step_frac: f64,
    /// Full-cycle cap before the walk is declared non-convergent.
    pub cycle_cap: usize,
}

impl Default for StackelbergParams {
    fn default() -> Self {
        Self {
            loss_valuation: 1.0,
            max_loss: 3.0,
            h_beta: 2.0,
            h_a: 1.0,
            h_b: 1.0,
            price_step_frac: 0.02,
            cycle_cap: 1000,
        }
    }
}

impl StackelbergParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss_valuation > 0.0
            && self.max_loss > 0.0
            && self.h_beta > 0.0
            && self.h_a > 0.0
            && self.h_b >= 0.0
            && self.price_step_frac > 0.0
            && self.cycle_cap >= 1)
        {
            return Err(Error::InvalidConfig(
                "need loss_valuation, max_loss, h_beta, h_a, price_step_frac > 0 and h_b >= 0"
                    .into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Follower side
// ---------------------------------------------------------------------------

/// Per-edge auxiliary constants at a fixed coalition and bandwidth.
///
/// `a` and `f` aggregate compute and upload coefficients over the *effective*
/// members: devices that can finish at least one round within the cloud
/// interval. Idle members contribute no data at any count but still occupy a
/// bandwidth share, so the rate split uses the full coalition size.
#[derive(Debug, Clone, Copy)]
pub struct Auxiliary {
    pub a: f64,
    pub f: f64,
    pub bandwidth: f64,
    /// Largest aggregation count at which every effective member still has a
    /// nonnegative data budget.
    pub k_feasible: u32,
    pub n_effective: usize,
}

/// Build the auxiliary constants, or `None` when the coalition is empty,
/// starved of bandwidth, or has no member able to complete a round.
pub fn auxiliary(
    instance: &NetworkInstance,
    edge: usize,
    members: &[usize],
    bandwidth: f64,
) -> Option<Auxiliary> {
    if members.is_empty() || bandwidth <= 0.0 {
        return None;
    }
    let size = members.len() as f64;
    let t = instance.config.cloud_interval;
    let s = instance.config.model_size;
    let mut a = 0.0;
    let mut upload_coef = 0.0; // sum of work_rate / spectral_efficiency
    let mut k_feasible = u32::MAX;
    let mut n_effective = 0;
    for &n in members {
        let eff = instance.spectral_efficiency(n, edge);
        let rate = bandwidth / size * eff;
        let k_dev = (t * rate / s).floor();
        if k_dev < 1.0 {
            continue; // idle at every count
        }
        let work = instance.devices[n].work_rate();
        a += t * work;
        upload_coef += work / eff;
        n_effective += 1;
        k_feasible = k_feasible.min(k_dev.min(f64::from(u32::MAX)) as u32);
    }
    if n_effective == 0 {
        return None;
    }
    Some(Auxiliary { a, f: s * size * upload_coef, bandwidth, k_feasible, n_effective })
}

impl Auxiliary {
    /// Substituted variable: the square root of count-weighted total data.
    pub fn z_of(&self, k: u32) -> f64 {
        (self.a - f64::from(k) * self.f / self.bandwidth).max(0.0).sqrt()
    }

    /// Inverse map back to a (continuous) aggregation count.
    pub fn k_of(&self, z: f64) -> f64 {
        self.bandwidth * (self.a - z * z) / self.f
    }
}

/// Accuracy gain at the substituted variable: the no-data loss ceiling minus
/// the two loss terms. Tends to negative infinity as the data vanishes.
pub fn accuracy_gain_at(max_loss: f64, lambda: f64, z: f64, k: u32) -> f64 {
    max_loss - lambda / z - lambda / f64::from(k)
}

/// Accuracy gain of a coalition at aggregation count `k`.
pub fn accuracy_gain(
    instance: &NetworkInstance,
    edge: usize,
    members: &[usize],
    bandwidth: f64,
    k: u32,
) -> Result<f64> {
    let aux = auxiliary(instance, edge, members, bandwidth)
        .ok_or_else(|| Error::Infeasible(format!("edge {edge}: no effective members")))?;
    if k < 1 || k > aux.k_feasible {
        return Err(Error::Infeasible(format!(
            "edge {edge}: count {k} outside feasible range [1, {}]",
            aux.k_feasible
        )));
    }
    let p = &instance.pricing;
    Ok(accuracy_gain_at(p.max_loss, p.loss_valuation, aux.z_of(k), k))
}

/// Edge-server utility: reward for the accuracy gain, minus fixed payouts to
/// members, minus the improvement payment to the coalition.
pub fn edge_utility(
    instance: &NetworkInstance,
    edge: usize,
    members: &[usize],
    bandwidth: f64,
    k: u32,
    chi: f64,
) -> Result<f64> {
    let aux = auxiliary(instance, edge, members, bandwidth)
        .ok_or_else(|| Error::Infeasible(format!("edge {edge}: no effective members")))?;
    if k < 1 || k > aux.k_feasible {
        return Err(Error::Infeasible(format!(
            "edge {edge}: count {k} outside feasible range [1, {}]",
            aux.k_feasible
        )));
    }
    Ok(edge_utility_at(instance, edge, members.len(), &aux, k, chi))
}

fn edge_utility_at(
    instance: &NetworkInstance,
    edge: usize,
    size: usize,
    aux: &Auxiliary,
    k: u32,
    chi: f64,
) -> f64 {
    let p = &instance.pricing;
    let z = aux.z_of(k);
    let gain = accuracy_gain_at(p.max_loss, p.loss_valuation, z, k);
    // chi = 0 pays nothing even when the gain diverges.
    let reward = if chi == 0.0 { 0.0 } else { chi * gain };
    let rho = instance.econ.unit_price[edge];
    let xi = instance.econ.improvement_coef;
    let x = instance.econ.fixed_reward[edge];
    reward - size as f64 * x - rho * xi * z
}

/// Edge utility derivatives in the substituted variable, at fixed auxiliary
/// constants and price.
#[derive(Debug, Clone, Copy)]
pub struct ZSpace {
    pub a: f64,
    pub f: f64,
    pub bandwidth: f64,
    pub chi: f64,
    pub rho: f64,
    pub xi: f64,
    pub lambda: f64,
}

impl ZSpace {
    pub fn from_aux(aux: &Auxiliary, instance: &NetworkInstance, edge: usize, chi: f64) -> Self {
        Self {
            a: aux.a,
            f: aux.f,
            bandwidth: aux.bandwidth,
            chi,
            rho: instance.econ.unit_price[edge],
            xi: instance.econ.improvement_coef,
            lambda: instance.pricing.loss_valuation,
        }
    }

    /// d(utility)/dz. Strictly decreasing in `z` on the feasible interval.
    pub fn first_derivative(&self, z: f64) -> f64 {
        let rem = self.a - z * z;
        self.chi * self.lambda / (z * z)
            - self.xi * self.rho
            - 2.0 * self.f * self.chi * z * self.lambda / (self.bandwidth * rem * rem)
    }

    /// d2(utility)/dz2; nonpositive for any nonnegative price, which is what
    /// makes the follower problem unimodal in the count.
    pub fn second_derivative(&self, z: f64) -> f64 {
        let rem = self.a - z * z;
        -2.0 * self.chi * self.lambda / (z * z * z)
            - 2.0 * self.f * self.chi * self.lambda / (self.bandwidth * rem * rem)
            - 8.0 * self.f * self.chi * z * z * self.lambda / (self.bandwidth * rem * rem * rem)
    }

    /// Price that makes `z` a stationary point, when a positive one exists.
    pub fn stationary_price(&self, z: f64) -> Option<f64> {
        let rem = self.a - z * z;
        let lhs =
            self.lambda / (z * z) - 2.0 * self.f * z * self.lambda / (self.bandwidth * rem * rem);
        if lhs > 0.0 && lhs.is_finite() {
            Some(self.xi * self.rho / lhs)
        } else {
            None
        }
    }
}

/// Bisect the strictly decreasing first derivative for its interior zero.
/// `None` when the derivative does not change sign on `[z_lo, z_hi]`.
pub fn continuous_root(zspace: &ZSpace, z_lo: f64, z_hi: f64) -> Option<f64> {
    let lo_ok = z_lo > 0.0 && zspace.first_derivative(z_lo) > 0.0;
    let hi_ok = zspace.first_derivative(z_hi) < 0.0;
    if !(lo_ok || z_lo == 0.0) || !hi_ok {
        return None;
    }
    let mut lo = if z_lo > 0.0 { z_lo } else { 1e-12 * z_hi };
    let mut hi = z_hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if zspace.first_derivative(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 2.0 * f64::EPSILON * z_hi {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Follower best response: the aggregation count maximizing the edge utility
/// at unit reward `chi`. `None` when the coalition cannot produce data.
pub fn best_response_aggregations(
    instance: &NetworkInstance,
    edge: usize,
    members: &[usize],
    bandwidth: f64,
    chi: f64,
) -> Option<u32> {
    let aux = auxiliary(instance, edge, members, bandwidth)?;
    Some(best_response_from_aux(instance, edge, members.len(), &aux, chi).0)
}

fn best_response_from_aux(
    instance: &NetworkInstance,
    edge: usize,
    size: usize,
    aux: &Auxiliary,
    chi: f64,
) -> (u32, f64) {
    let k_max = aux.k_feasible;
    if chi == 0.0 || k_max == 1 {
        // No reward: the only count-dependent term is the improvement
        // payment, smallest at the largest feasible count.
        let k = k_max;
        return (k, edge_utility_at(instance, edge, size, aux, k, chi));
    }
    let zspace = ZSpace::from_aux(aux, instance, edge, chi);
    let z_lo = aux.z_of(k_max);
    let z_hi = aux.z_of(1);
    let k_cont = if z_lo > 0.0 && zspace.first_derivative(z_lo) <= 0.0 {
        f64::from(k_max)
    } else if zspace.first_derivative(z_hi) >= 0.0 {
        1.0
    } else {
        match continuous_root(&zspace, z_lo, z_hi) {
            Some(z) => aux.k_of(z),
            None => f64::from(k_max),
        }
    };
    // The utility is not symmetric around the continuous optimum, so compare
    // both integer neighbors instead of rounding.
    let lo = (k_cont.floor().max(1.0) as u32).min(k_max);
    let hi = (k_cont.ceil().max(1.0) as u32).min(k_max);
    let u_lo = edge_utility_at(instance, edge, size, aux, lo, chi);
    let u_hi = edge_utility_at(instance, edge, size, aux, hi, chi);
    if u_hi > u_lo {
        (hi, u_hi)
    } else {
        (lo, u_lo)
    }
}

// ---------------------------------------------------------------------------
// Leader side
// ---------------------------------------------------------------------------

/// Cloud revenue for an aggregate gain `total_gain` over `n_edges` servers.
pub fn h_value(params: &StackelbergParams, total_gain: f64, n_edges: usize) -> Result<f64> {
    let arg = params.h_a * total_gain / n_edges as f64 + params.h_b;
    if arg < 0.0 {
        return Err(Error::PricingDomain(format!(
            "revenue function undefined: a*gain/L + b = {arg}"
        )));
    }
    Ok(params.h_beta * arg.sqrt())
}

/// Cloud utility: revenue over the aggregate gain minus the per-edge
/// payments. Edges with no schedule entry contribute neither.
pub fn cloud_utility(
    instance: &NetworkInstance,
    coalitions: &[Vec<usize>],
    bandwidth: &[f64],
    rewards: &[f64],
    schedule: &[Option<u32>],
) -> Result<f64> {
    let mut total_gain = 0.0;
    let mut payments = 0.0;
    for (l, members) in coalitions.iter().enumerate() {
        let Some(k) = schedule[l] else { continue };
        if members.is_empty() {
            continue;
        }
        let gain = accuracy_gain(instance, l, members, bandwidth[l], k)?;
        total_gain += gain;
        if rewards[l] != 0.0 {
            payments += rewards[l] * gain;
        }
    }
    Ok(h_value(&instance.pricing, total_gain, instance.n_edges())? - payments)
}

/// Prices at which each integer count in the feasible range is the
/// follower's stationary point; ascending in price. Counts whose stationary
/// price would be nonpositive are skipped (no reward induces them).
pub fn candidate_prices(
    instance: &NetworkInstance,
    edge: usize,
    members: &[usize],
    bandwidth: f64,
) -> Vec<(u32, f64)> {
    let Some(aux) = auxiliary(instance, edge, members, bandwidth) else {
        return Vec::new();
    };
    let zspace = ZSpace::from_aux(&aux, instance, edge, 1.0);
    let mut table = Vec::new();
    for k in 1..=aux.k_feasible {
        let z = aux.z_of(k);
        if z <= 0.0 {
            continue;
        }
        if let Some(chi) = zspace.stationary_price(z) {
            table.push((k, chi));
        }
    }
    table.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    table
}

/// Outcome of the cyclic price walk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PricingOutcome {
    /// Unit reward per edge; zero for edges excluded from the game.
    pub rewards: Vec<f64>,
    /// Follower best responses at the returned rewards; `None` for edges
    /// without a populated, data-producing coalition.
    pub schedule: Vec<Option<u32>>,
    pub cloud_utility: f64,
    pub converged: bool,
    pub cycles: usize,
    /// Cloud utility after each accepted move, for monotonicity checks.
    pub utility_trace: Vec<f64>,
}

struct EdgeGameState {
    aux: Auxiliary,
    table: Vec<(u32, f64)>,
    chi_min: f64,
    chi_max: f64,
    step: f64,
    chi: f64,
    k: u32,
    gain: f64,
}

/// Cyclic price updates: for each edge in turn, perturb its price by the
/// step, snap to the bracketing pair of tabulated prices, and move to
/// whichever endpoint improves the cloud utility, holding the other edges
/// fixed. Stops when a full cycle changes nothing.
pub fn solve_pricing(
    instance: &NetworkInstance,
    coalitions: &[Vec<usize>],
    bandwidth: &[f64],
) -> Result<PricingOutcome> {
    run_price_walk(instance, coalitions, bandwidth, None, None)
}

/// Restricted walk touching only `movable` edges, warm-started from the
/// currently posted rewards; the fast path after a switch.
pub fn reprice_edges(
    instance: &NetworkInstance,
    coalitions: &[Vec<usize>],
    bandwidth: &[f64],
    current_rewards: &[f64],
    movable: &[usize],
) -> Result<PricingOutcome> {
    run_price_walk(instance, coalitions, bandwidth, Some(current_rewards), Some(movable))
}

fn run_price_walk(
    instance: &NetworkInstance,
    coalitions: &[Vec<usize>],
    bandwidth: &[f64],
    warm_rewards: Option<&[f64]>,
    movable: Option<&[usize]>,
) -> Result<PricingOutcome> {
    let l_total = instance.n_edges();
    let params = instance.pricing.clone();
    let mut rewards = vec![0.0; l_total];
    let mut schedule: Vec<Option<u32>> = vec![None; l_total];
    let mut states: Vec<Option<EdgeGameState>> = Vec::with_capacity(l_total);
    // Gains of edges that take no part in the price walk (reward pinned at 0).
    let mut base_gain = 0.0;
    for l in 0..l_total {
        let members = &coalitions[l];
        let table = candidate_prices(instance, l, members, bandwidth[l]);
        if table.is_empty() {
            if let Some(aux) = auxiliary(instance, l, members, bandwidth[l]) {
                let (k, _) = best_response_from_aux(instance, l, members.len(), &aux, 0.0);
                schedule[l] = Some(k);
                base_gain +=
                    accuracy_gain_at(params.max_loss, params.loss_valuation, aux.z_of(k), k);
            }
            states.push(None);
            continue;
        }
        let aux = auxiliary(instance, l, members, bandwidth[l]).expect("table implies aux");
        let chi_min = table.first().unwrap().1;
        let chi_max = table.last().unwrap().1;
        let chi = match warm_rewards {
            Some(current) if current[l] > 0.0 => current[l].clamp(chi_min, chi_max),
            _ => 0.5 * (chi_min + chi_max),
        };
        let (k, _) = best_response_from_aux(instance, l, members.len(), &aux, chi);
        let gain = accuracy_gain_at(params.max_loss, params.loss_valuation, aux.z_of(k), k);
        rewards[l] = chi;
        schedule[l] = Some(k);
        states.push(Some(EdgeGameState {
            aux,
            step: params.price_step_frac * (chi_max - chi_min),
            table,
            chi_min,
            chi_max,
            chi,
            k,
            gain,
        }));
    }

    let cloud_value = |states: &[Option<EdgeGameState>]| -> Result<f64> {
        let gain = base_gain + states.iter().flatten().map(|s| s.gain).sum::<f64>();
        let pay: f64 = states.iter().flatten().map(|s| s.chi * s.gain).sum();
        Ok(h_value(&params, gain, l_total)? - pay)
    };

    // A badly starved coalition can push the aggregate gain below the
    // revenue function's domain at the starting prices; rank such states
    // below everything so any valid move is taken.
    let mut current = cloud_value(&states).unwrap_or(f64::NEG_INFINITY);
    let mut trace = vec![current];
    let mut converged = false;
    let mut cycles = 0;
    while cycles < params.cycle_cap {
        cycles += 1;
        let mut changed = false;
        for l in 0..l_total {
            if movable.is_some_and(|m| !m.contains(&l)) {
                continue;
            }
            let Some(state) = states[l].as_ref() else { continue };
            if state.table.len() < 2 || state.step <= 0.0 {
                continue;
            }
            let sum_gain: f64 = base_gain + states.iter().flatten().map(|s| s.gain).sum::<f64>();
            let sum_pay: f64 = states.iter().flatten().map(|s| s.chi * s.gain).sum();
            let mut accepted: Option<(f64, f64, u32, f64)> = None; // (utility, chi, k, gain)
            for dir in [1.0, -1.0] {
                let state = states[l].as_ref().unwrap();
                let probe = (state.chi + dir * state.step).clamp(state.chi_min, state.chi_max);
                let idx = state.table.partition_point(|&(_, c)| c < probe);
                let lo = idx.saturating_sub(1);
                let hi = idx.min(state.table.len() - 1);
                let mut best: Option<(f64, f64, u32, f64)> = None;
                for bracket_idx in [lo, hi] {
                    let cand_chi = state.table[bracket_idx].1;
                    let (k, _) = best_response_from_aux(
                        instance,
                        l,
                        coalitions[l].len(),
                        &state.aux,
                        cand_chi,
                    );
                    let gain = accuracy_gain_at(
                        params.max_loss,
                        params.loss_valuation,
                        state.aux.z_of(k),
                        k,
                    );
                    let new_gain = sum_gain - state.gain + gain;
                    let new_pay = sum_pay - state.chi * state.gain + cand_chi * gain;
                    let Ok(h) = h_value(&params, new_gain, l_total) else { continue };
                    let u = h - new_pay;
                    if best.is_none_or(|b| u > b.0) {
                        best = Some((u, cand_chi, k, gain));
                    }
                }
                if let Some(cand) = best {
                    if cand.0 > current {
                        accepted = Some(cand);
                        break;
                    }
                }
            }
            if let Some((u, chi, k, gain)) = accepted {
                let st = states[l].as_mut().unwrap();
                st.chi = chi;
                st.k = k;
                st.gain = gain;
                rewards[l] = chi;
                schedule[l] = Some(k);
                current = u;
                trace.push(u);
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }

    Ok(PricingOutcome {
        rewards,
        schedule,
        cloud_utility: current,
        converged,
        cycles,
        utility_trace: trace,
    })
}

/// After a device moves between two coalitions, only those two edges rethink
/// their aggregation counts; everyone else keeps theirs.
pub fn update_pair_aggregations(
    instance: &NetworkInstance,
    coalitions: &[Vec<usize>],
    bandwidth: &[f64],
    rewards: &[f64],
    schedule: &mut [Option<u32>],
    from_edge: usize,
    to_edge: usize,
) {
    for edge in [from_edge, to_edge] {
        schedule[edge] = best_response_aggregations(
            instance,
            edge,
            &coalitions[edge],
            bandwidth[edge],
            rewards[edge],
        );
    }
}
