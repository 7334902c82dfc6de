//! Gradient-projection bandwidth allocation under a fixed partition.
//!
//! Maximizes the summed coalition utility, with every member's training data
//! pinned at its deadline-saturating equilibrium level (clamped at zero), over
//! the feasible set `{B >= 0, sum B <= total}`. Also solves the restricted
//! two-coalition subproblem used when a device switches coalitions.

use crate::model::{NetworkInstance, MBIT};

/// Solver knobs.
#[derive(Debug, Clone)]
pub struct GpConfig {
    pub max_iters: usize,
    /// Relative objective-change stopping tolerance.
    pub tolerance: f64,
    /// Backtracking floor for the step size.
    pub step_floor: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self { max_iters: 500, tolerance: 1e-6, step_floor: 1e-8 }
    }
}

/// One coalition of the allocation problem.
#[derive(Debug, Clone, Copy)]
pub struct CoalitionSpec<'a> {
    pub edge: usize,
    pub members: &'a [usize],
    pub agg_count: u32,
}

#[derive(Debug, Clone)]
pub struct GpTraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
    /// `max(0, sum B - total)`; zero for every accepted iterate.
    pub feasibility_residual: f64,
}

#[derive(Debug, Clone)]
pub struct GpOutcome {
    pub bandwidth: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<GpTraceRow>,
}

// ---------------------------------------------------------------------------
// Objective and gradient
// ---------------------------------------------------------------------------

/// One coalition's contribution to the allocation objective at bandwidth `b`:
/// improvement revenue at equilibrium data (clamped per device), plus fixed
/// rewards, minus the members' combined congestion cost.
pub fn coalition_objective(instance: &NetworkInstance, group: &CoalitionSpec<'_>, b: f64) -> f64 {
    let m = group.members.len();
    if m == 0 {
        return 0.0;
    }
    let t = instance.config.cloud_interval;
    let s = instance.config.model_size;
    let period = t / f64::from(group.agg_count);
    let mf = m as f64;
    let mut data_sum = 0.0;
    let mut eff_sum = 0.0;
    for &n in group.members {
        let eff = instance.spectral_efficiency(n, group.edge);
        eff_sum += eff;
        let budget = period - s * mf / (b * eff);
        if budget > 0.0 {
            data_sum += budget * instance.devices[n].work_rate();
        }
    }
    let econ = &instance.econ;
    let revenue = econ.unit_price[group.edge]
        * econ.improvement_coef
        * (f64::from(group.agg_count) * data_sum).sqrt()
        + mf * econ.fixed_reward[group.edge];
    let rate_total = b / mf * eff_sum / MBIT;
    revenue - mf * econ.congestion_coef[group.edge] * rate_total * rate_total
}

/// Allocation objective over all coalitions.
pub fn objective_value(
    instance: &NetworkInstance,
    groups: &[CoalitionSpec<'_>],
    bandwidth: &[f64],
) -> f64 {
    groups.iter().zip(bandwidth).map(|(g, &b)| coalition_objective(instance, g, b)).sum()
}

/// Analytic partial derivatives of the objective; component `l` depends only
/// on coalition `l`. Devices clamped at zero data contribute a one-sided
/// (zero) derivative to the revenue term.
pub fn gradient(
    instance: &NetworkInstance,
    groups: &[CoalitionSpec<'_>],
    bandwidth: &[f64],
) -> Vec<f64> {
    groups.iter().zip(bandwidth).map(|(g, &b)| coalition_gradient(instance, g, b)).collect()
}

fn coalition_gradient(instance: &NetworkInstance, group: &CoalitionSpec<'_>, b: f64) -> f64 {
    let m = group.members.len();
    if m == 0 || b <= 0.0 {
        return 0.0;
    }
    let t = instance.config.cloud_interval;
    let s = instance.config.model_size;
    let k = f64::from(group.agg_count);
    let period = t / k;
    let mf = m as f64;
    let mut data_sum = 0.0;
    let mut data_slope = 0.0; // d(data_sum)/db over the active set
    let mut eff_sum = 0.0;
    for &n in group.members {
        let eff = instance.spectral_efficiency(n, group.edge);
        eff_sum += eff;
        let budget = period - s * mf / (b * eff);
        if budget > 0.0 {
            let work = instance.devices[n].work_rate();
            data_sum += budget * work;
            data_slope += s * mf * work / (b * b * eff);
        }
    }
    let econ = &instance.econ;
    let revenue_slope = if data_sum > 0.0 {
        econ.unit_price[group.edge] * econ.improvement_coef * k * data_slope
            / (2.0 * (k * data_sum).sqrt())
    } else {
        0.0
    };
    let rate_total = b / mf * eff_sum / MBIT;
    let congestion_slope = 2.0 * econ.congestion_coef[group.edge] * rate_total * eff_sum / MBIT;
    revenue_slope - congestion_slope
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

/// Euclidean projection onto `{B >= 0, sum B <= total}`. When the
/// nonnegative clip already fits the budget it is returned as is; otherwise
/// the point is projected onto the simplex face by sort-and-threshold.
pub fn project_feasible(raw: &[f64], total: f64) -> Vec<f64> {
    let clipped: Vec<f64> = raw.iter().map(|&v| v.max(0.0)).collect();
    let sum: f64 = clipped.iter().sum();
    if sum <= total {
        return clipped;
    }
    let mut sorted = raw.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - total) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    let mut out: Vec<f64> = raw.iter().map(|&v| (v - tau).max(0.0)).collect();
    let out_sum: f64 = out.iter().sum();
    if out_sum > total {
        // Threshold arithmetic can land a rounding error above the budget.
        let scale = total / out_sum;
        for v in &mut out {
            *v *= scale;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

/// The data budget vanishes below a per-coalition bandwidth kink, so the
/// objective has a spurious local maximum at zero. A coarse per-coalition
/// scan (the objective is separable) picks the right basin before the
/// gradient iterations refine it.
fn coarse_start(instance: &NetworkInstance, groups: &[CoalitionSpec<'_>], total: f64) -> Vec<f64> {
    const SCAN: usize = 64;
    let mut start = Vec::with_capacity(groups.len());
    for g in groups {
        let mut best = (0.0, coalition_objective(instance, g, 0.0));
        for i in 1..=SCAN {
            let b = total * i as f64 / SCAN as f64;
            let v = coalition_objective(instance, g, b);
            if v > best.1 {
                best = (b, v);
            }
        }
        start.push(best.0);
    }
    project_feasible(&start, total)
}

/// Projected gradient ascent with backtracking over all coalitions.
///
/// Empty coalitions are pinned at zero and the budget is split over the
/// populated ones. The gradient is normalized to unit max-norm and scaled by
/// the budget so the step size is independent of the bandwidth unit; each
/// accepted iterate strictly improves the objective and is re-projected as
/// its final construction step, so feasibility holds exactly.
pub fn solve(
    instance: &NetworkInstance,
    groups: &[CoalitionSpec<'_>],
    total: f64,
    config: &GpConfig,
    record_trace: bool,
) -> GpOutcome {
    let active: Vec<usize> = (0..groups.len()).filter(|&i| !groups[i].members.is_empty()).collect();
    let expand = |reduced: &[f64]| -> Vec<f64> {
        let mut full = vec![0.0; groups.len()];
        for (slot, &idx) in active.iter().enumerate() {
            full[idx] = reduced[slot];
        }
        full
    };
    if active.is_empty() {
        return GpOutcome {
            bandwidth: vec![0.0; groups.len()],
            objective: 0.0,
            converged: true,
            iterations: 0,
            trace: Vec::new(),
        };
    }
    let reduced_groups: Vec<CoalitionSpec<'_>> = active.iter().map(|&i| groups[i]).collect();
    let mut b = vec![total / active.len() as f64; active.len()];
    let mut current = objective_value(instance, &reduced_groups, &b);
    let scanned = coarse_start(instance, &reduced_groups, total);
    let scanned_value = objective_value(instance, &reduced_groups, &scanned);
    if scanned_value > current {
        b = scanned;
        current = scanned_value;
    }
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=config.max_iters {
        iterations = iter;
        let grad = gradient(instance, &reduced_groups, &b);
        let norm = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        if norm == 0.0 {
            converged = true;
            break;
        }
        let target: Vec<f64> = {
            let stepped: Vec<f64> =
                b.iter().zip(&grad).map(|(&bi, &gi)| bi + total * gi / norm).collect();
            project_feasible(&stepped, total)
        };
        let direction: Vec<f64> = target.iter().zip(&b).map(|(&t, &bi)| t - bi).collect();
        let dir_norm = direction.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
        if dir_norm <= 1e-15 * total {
            converged = true;
            break;
        }
        let mut gamma = 1.0;
        let mut accepted = None;
        while gamma >= config.step_floor {
            let stepped: Vec<f64> =
                b.iter().zip(&direction).map(|(&bi, &di)| bi + gamma * di).collect();
            let candidate = project_feasible(&stepped, total);
            let value = objective_value(instance, &reduced_groups, &candidate);
            if value > current {
                accepted = Some((candidate, value));
                break;
            }
            gamma *= 0.5;
        }
        let Some((candidate, value)) = accepted else {
            converged = true;
            break;
        };
        let delta = value - current;
        b = candidate;
        current = value;
        if record_trace {
            let residual = (b.iter().sum::<f64>() - total).max(0.0);
            trace.push(GpTraceRow {
                iteration: iter,
                objective: current,
                step: gamma,
                feasibility_residual: residual,
            });
        }
        if delta <= config.tolerance * current.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    GpOutcome { bandwidth: expand(&b), objective: current, converged, iterations, trace }
}

#[derive(Debug, Clone, Copy)]
pub struct PairSplit {
    pub first: f64,
    pub second: f64,
    pub objective: f64,
    pub converged: bool,
}

/// Restricted solve over two coalitions with a fixed combined budget: the
/// feasible set is the segment `{(t, sum - t) : t in [0, sum]}`. An empty
/// coalition receives zero and the other the whole sum.
pub fn solve_pair(
    instance: &NetworkInstance,
    first: &CoalitionSpec<'_>,
    second: &CoalitionSpec<'_>,
    pair_sum: f64,
    config: &GpConfig,
) -> PairSplit {
    match (first.members.is_empty(), second.members.is_empty()) {
        (true, true) => {
            return PairSplit { first: 0.0, second: 0.0, objective: 0.0, converged: true }
        }
        (true, false) => {
            let obj = coalition_objective(instance, second, pair_sum);
            return PairSplit { first: 0.0, second: pair_sum, objective: obj, converged: true };
        }
        (false, true) => {
            let obj = coalition_objective(instance, first, pair_sum);
            return PairSplit { first: pair_sum, second: 0.0, objective: obj, converged: true };
        }
        (false, false) => {}
    }
    let value = |t: f64| {
        coalition_objective(instance, first, t)
            + coalition_objective(instance, second, pair_sum - t)
    };
    let mut t = 0.5 * pair_sum;
    let mut current = value(t);
    // Coarse scan of the segment first; the clamp kinks leave local maxima
    // the gradient cannot climb out of.
    const SCAN: usize = 64;
    for i in 0..=SCAN {
        let cand = pair_sum * i as f64 / SCAN as f64;
        let v = value(cand);
        if v > current {
            t = cand;
            current = v;
        }
    }
    let mut converged = false;
    for _ in 1..=config.max_iters {
        let slope = coalition_gradient_pair(instance, first, second, t, pair_sum);
        if slope == 0.0 {
            converged = true;
            break;
        }
        let target = (t + pair_sum * slope.signum()).clamp(0.0, pair_sum);
        let direction = target - t;
        if direction.abs() <= 1e-15 * pair_sum {
            converged = true;
            break;
        }
        let mut gamma = 1.0;
        let mut accepted = None;
        while gamma >= config.step_floor {
            let cand = (t + gamma * direction).clamp(0.0, pair_sum);
            let v = value(cand);
            if v > current {
                accepted = Some((cand, v));
                break;
            }
            gamma *= 0.5;
        }
        let Some((cand, v)) = accepted else {
            converged = true;
            break;
        };
        let delta = v - current;
        t = cand;
        current = v;
        if delta <= config.tolerance * current.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    PairSplit { first: t, second: pair_sum - t, objective: current, converged }
}

fn coalition_gradient_pair(
    instance: &NetworkInstance,
    first: &CoalitionSpec<'_>,
    second: &CoalitionSpec<'_>,
    t: f64,
    pair_sum: f64,
) -> f64 {
    coalition_gradient(instance, first, t) - coalition_gradient(instance, second, pair_sum - t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economics::coalition_utility;
    use crate::testkit::{random_instance, symmetric_instance, TestDims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn groups_of<'a>(coalitions: &'a [Vec<usize>], ks: &[u32]) -> Vec<CoalitionSpec<'a>> {
        coalitions
            .iter()
            .enumerate()
            .map(|(l, members)| CoalitionSpec { edge: l, members, agg_count: ks[l] })
            .collect()
    }

    #[test]
    fn objective_matches_coalition_utility_for_single_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, TestDims { n_devices: 5, n_edges: 2 });
            let members = vec![0, 1, 2, 3, 4];
            let k = rng.random_range(1u32..5);
            let b = inst.config.total_bandwidth;
            let group = CoalitionSpec { edge: 0, members: &members, agg_count: k };
            let g = coalition_objective(&inst, &group, b);
            let u = coalition_utility(&inst, 0, &members, b, k);
            assert!((g - u).abs() <= 1e-9 * u.abs().max(1.0), "objective {g} vs utility {u}");
        }
    }

    #[test]
    fn zero_bandwidth_leaves_only_fixed_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inst = random_instance(&mut rng, TestDims { n_devices: 6, n_edges: 3 });
        let coalitions = vec![vec![0, 1], vec![2, 3], vec![4, 5]];
        let groups = groups_of(&coalitions, &[2, 1, 3]);
        let g = objective_value(&inst, &groups, &[0.0, 0.0, 0.0]);
        let expected: f64 = (0..3).map(|l| 2.0 * inst.econ.fixed_reward[l]).sum();
        assert!((g - expected).abs() < 1e-12);
    }

    #[test]
    fn symmetric_split_dominates_the_sweep() {
        let inst = symmetric_instance(6, 2, 12.0);
        let coalitions = vec![vec![0, 1, 2], vec![3, 4, 5]];
        let groups = groups_of(&coalitions, &[2, 2]);
        let total = inst.config.total_bandwidth;
        let mid = objective_value(&inst, &groups, &[total / 2.0, total / 2.0]);
        let mut worst_gap = 0.0f64;
        for i in 0..=100 {
            let t = total * i as f64 / 100.0;
            let v = objective_value(&inst, &groups, &[total - t, t]);
            worst_gap = worst_gap.max(v - mid);
        }
        assert!(
            worst_gap <= 1e-9 * mid.abs().max(1.0),
            "asymmetric split beat the middle by {worst_gap}"
        );
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let inst = random_instance(&mut rng, TestDims { n_devices: 8, n_edges: 3 });
            let coalitions = vec![vec![0, 1, 2], vec![3, 4], vec![5, 6, 7]];
            let groups = groups_of(&coalitions, &[2, 3, 1]);
            let total = inst.config.total_bandwidth;
            // Interior point: comfortably inside the positive-budget region.
            let mut b = vec![total / 3.0; 3];
            for v in &mut b {
                *v *= rng.random_range(0.8..1.2);
            }
            if groups.iter().zip(&b).any(|(g, &bi)| {
                g.members.iter().any(|&n| {
                    crate::economics::nash_data_strategy(
                        &inst,
                        n,
                        g.edge,
                        g.members.len(),
                        bi,
                        g.agg_count,
                    ) <= 0.0
                })
            }) {
                continue; // stay off the clamp kinks
            }
            let analytic = gradient(&inst, &groups, &b);
            let h = 1e-3 * total * 1e-3; // small relative to the interior scale
            for l in 0..3 {
                let mut up = b.clone();
                up[l] += h;
                let mut dn = b.clone();
                dn[l] -= h;
                let fd = (objective_value(&inst, &groups, &up)
                    - objective_value(&inst, &groups, &dn))
                    / (2.0 * h);
                let rel = (analytic[l] - fd).abs() / (1.0 + analytic[l].abs());
                assert!(rel <= 1e-4, "component {l}: analytic {} vs fd {fd}", analytic[l]);
            }
        }
    }

    #[test]
    fn gradient_is_symmetric_on_symmetric_instances() {
        let inst = symmetric_instance(6, 2, 10.0);
        let coalitions = vec![vec![0, 1, 2], vec![3, 4, 5]];
        let groups = groups_of(&coalitions, &[2, 2]);
        let total = inst.config.total_bandwidth;
        let g = gradient(&inst, &groups, &[total / 2.0, total / 2.0]);
        assert!((g[0] - g[1]).abs() <= 1e-9 * g[0].abs().max(1e-12));
    }

    #[test]
    fn more_congestion_lowers_the_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut inst = random_instance(&mut rng, TestDims { n_devices: 4, n_edges: 2 });
        let coalitions = vec![vec![0, 1], vec![2, 3]];
        let groups = groups_of(&coalitions, &[2, 2]);
        let b = vec![2e6, 2e6];
        let before = gradient(&inst, &groups, &b)[0];
        inst.econ.congestion_coef[0] *= 2.0;
        let after = gradient(&inst, &groups, &b)[0];
        assert!(after < before);
    }

    #[test]
    fn projection_identity_and_examples() {
        let p = project_feasible(&[1.0, 2.0], 4.0);
        assert_eq!(p, vec![1.0, 2.0]);
        let p = project_feasible(&[3.0, 3.0], 4.0);
        assert!((p[0] - 2.0).abs() < 1e-12 && (p[1] - 2.0).abs() < 1e-12);
        let p = project_feasible(&[5.0, 1.0, -1.0], 4.0);
        assert!((p[0] - 4.0).abs() < 1e-12 && p[1] == 0.0 && p[2] == 0.0);
    }

    #[test]
    fn projection_minimizes_distance_on_a_grid() {
        // Dense grid over the 2-simplex confirms the sort-threshold result.
        let raw = [5.0, 1.0, -1.0];
        let total = 4.0;
        let proj = project_feasible(&raw, total);
        let dist = |x: &[f64]| -> f64 { raw.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum() };
        let best = dist(&proj);
        let steps = 200;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let x = [
                    total * i as f64 / steps as f64,
                    total * j as f64 / steps as f64,
                    total * (steps - i - j) as f64 / steps as f64,
                ];
                assert!(dist(&x) >= best - 1e-9, "grid point {x:?} beats projection");
            }
        }
    }

    #[test]
    fn identical_coalitions_get_an_equal_split() {
        let inst = symmetric_instance(8, 2, 15.0);
        let coalitions = vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]];
        let groups = groups_of(&coalitions, &[2, 2]);
        let total = inst.config.total_bandwidth;
        let out = solve(&inst, &groups, total, &GpConfig::default(), false);
        assert!(
            (out.bandwidth[0] - out.bandwidth[1]).abs() <= 1e-3 * total,
            "split {:?}",
            out.bandwidth
        );
    }

    #[test]
    fn solver_matches_grid_search_on_two_coalitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let inst = random_instance(&mut rng, TestDims { n_devices: 7, n_edges: 2 });
            let split = rng.random_range(2usize..6);
            let coalitions = vec![(0..split).collect::<Vec<_>>(), (split..7).collect::<Vec<_>>()];
            let ks = [rng.random_range(1u32..4), rng.random_range(1u32..4)];
            let groups = groups_of(&coalitions, &ks);
            let total = inst.config.total_bandwidth;
            let out = solve(&inst, &groups, total, &GpConfig::default(), true);
            // Grid over the simplex face plus the separable interior optimum.
            let mut best = f64::NEG_INFINITY;
            let steps = 1000;
            for i in 0..=steps {
                let t = total * i as f64 / steps as f64;
                best = best.max(objective_value(&inst, &groups, &[t, total - t]));
                best = best.max(objective_value(&inst, &groups, &[t, 0.0]));
                best = best.max(objective_value(&inst, &groups, &[0.0, t]));
            }
            assert!(
                out.objective >= best - 0.005 * best.abs().max(1.0),
                "solver {} vs grid {best}",
                out.objective
            );
            for pair in out.trace.windows(2) {
                assert!(pair[1].objective >= pair[0].objective, "objective decreased");
            }
            for row in &out.trace {
                assert_eq!(row.feasibility_residual, 0.0);
            }
        }
    }

    #[test]
    fn pair_solve_conserves_the_sum_and_handles_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let inst = random_instance(&mut rng, TestDims { n_devices: 6, n_edges: 2 });
        let a = vec![0, 1, 2];
        let b = vec![3, 4, 5];
        let sum = 3.3e6;
        let ga = CoalitionSpec { edge: 0, members: &a, agg_count: 2 };
        let gb = CoalitionSpec { edge: 1, members: &b, agg_count: 2 };
        let split = solve_pair(&inst, &ga, &gb, sum, &GpConfig::default());
        assert!((split.first + split.second - sum).abs() <= f64::EPSILON * sum);
        assert!(split.first >= 0.0 && split.second >= 0.0);
        let empty: Vec<usize> = Vec::new();
        let ge = CoalitionSpec { edge: 0, members: &empty, agg_count: 1 };
        let split = solve_pair(&inst, &ge, &gb, sum, &GpConfig::default());
        assert_eq!((split.first, split.second), (0.0, sum));
    }

    #[test]
    fn symmetric_pair_splits_equally() {
        let inst = symmetric_instance(6, 2, 12.0);
        let a = vec![0, 1, 2];
        let b = vec![3, 4, 5];
        let ga = CoalitionSpec { edge: 0, members: &a, agg_count: 2 };
        let gb = CoalitionSpec { edge: 1, members: &b, agg_count: 2 };
        let sum = 4e6;
        let split = solve_pair(&inst, &ga, &gb, sum, &GpConfig::default());
        assert!(
            (split.first - split.second).abs() <= 1e-3 * sum,
            "split {:?} not symmetric",
            (split.first, split.second)
        );
    }

    #[test]
    fn pair_solve_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let inst = random_instance(&mut rng, TestDims { n_devices: 6, n_edges: 2 });
            let split_at = rng.random_range(1usize..5);
            let a: Vec<usize> = (0..split_at).collect();
            let b: Vec<usize> = (split_at..6).collect();
            let sum = rng.random_range(0.4..1.0) * inst.config.total_bandwidth;
            let ga = CoalitionSpec { edge: 0, members: &a, agg_count: rng.random_range(1u32..4) };
            let gb = CoalitionSpec { edge: 1, members: &b, agg_count: rng.random_range(1u32..4) };
            let out = solve_pair(&inst, &ga, &gb, sum, &GpConfig::default());
            let mut best = f64::NEG_INFINITY;
            for i in 0..=1000 {
                let t = sum * i as f64 / 1000.0;
                let v =
                    coalition_objective(&inst, &ga, t) + coalition_objective(&inst, &gb, sum - t);
                best = best.max(v);
            }
            assert!(
                out.objective >= best - 0.005 * best.abs().max(1.0),
                "pair solve {} vs grid {best}",
                out.objective
            );
        }
    }

    proptest::proptest! {
        // Projection output is always feasible and fixed by re-projection.
        #[test]
        fn projection_is_feasible_and_idempotent(
            raw in proptest::collection::vec(-10.0f64..10.0, 1..6),
            total in 0.5f64..8.0,
        ) {
            let p = project_feasible(&raw, total);
            proptest::prop_assert!(p.iter().all(|&v| v >= 0.0));
            proptest::prop_assert!(p.iter().sum::<f64>() <= total * (1.0 + 1e-12));
            let again = project_feasible(&p, total);
            for (a, b) in p.iter().zip(&again) {
                proptest::prop_assert!((a - b).abs() <= 1e-12 * total);
            }
        }
    }

    #[test]
    fn concavity_holds_where_no_device_is_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let inst = random_instance(&mut rng, TestDims { n_devices: 6, n_edges: 2 });
        let coalitions = vec![vec![0, 1, 2], vec![3, 4, 5]];
        let groups = groups_of(&coalitions, &[2, 2]);
        let total = inst.config.total_bandwidth;
        let unclamped = |b: &[f64]| {
            groups.iter().zip(b).all(|(g, &bi)| {
                g.members.iter().all(|&n| {
                    crate::economics::nash_data_strategy(
                        &inst,
                        n,
                        g.edge,
                        g.members.len(),
                        bi,
                        g.agg_count,
                    ) > 0.0
                })
            })
        };
        let mut checked = 0;
        let mut clamped_violations = 0;
        let mut clamped_segments = 0;
        while checked < 50 {
            let a = [rng.random_range(0.1..0.5) * total, rng.random_range(0.1..0.5) * total];
            let b = [rng.random_range(0.1..0.5) * total, rng.random_range(0.1..0.5) * total];
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let va = objective_value(&inst, &groups, &a);
            let vb = objective_value(&inst, &groups, &b);
            let vm = objective_value(&inst, &groups, &mid);
            let slack = vm - 0.5 * (va + vb);
            if unclamped(&a) && unclamped(&b) && unclamped(&mid) {
                checked += 1;
                assert!(
                    slack >= -1e-9 * vm.abs().max(1.0),
                    "midpoint below the chord by {slack} on an unclamped segment"
                );
            } else {
                clamped_segments += 1;
                if slack < -1e-9 * vm.abs().max(1.0) {
                    clamped_violations += 1;
                }
            }
        }
        // Clamp kinks may genuinely break concavity; report rather than assert.
        if clamped_segments > 0 {
            println!(
                "concavity on clamped segments: {clamped_violations}/{clamped_segments} violations"
            );
        }
    }
}
