//! Result emission: tidy CSVs, replayable state JSON and a digest manifest.
//!
//! Floats are written with the shortest round-trip formatting, so re-parsing
//! a CSV reproduces the in-memory values exactly and byte-identical inputs
//! yield byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coalition::{CoalitionPartition, PreferenceRule};
use crate::error::{Error, Result};
use crate::experiment::{ExperimentResults, ExperimentSpec, Scenario};
use crate::model::NetworkInstance;

/// Replayable snapshot of one rule's final state within a trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialState {
    pub instance_digest: String,
    pub rule: PreferenceRule,
    pub assignment: Vec<usize>,
    pub bandwidth: Vec<f64>,
    pub agg_counts: Vec<u32>,
    pub rewards: Vec<f64>,
    pub total_utility: f64,
    pub per_edge_utility: Vec<f64>,
    /// Accuracy gain per edge; NaN (serialized as null) for coalitions
    /// outside the pricing game.
    pub per_edge_gain: Vec<f64>,
    pub cloud_utility: f64,
    pub converged: bool,
}

impl TrialState {
    pub fn partition(&self, n_edges: usize) -> Result<CoalitionPartition> {
        let mut p = CoalitionPartition::new(self.assignment.clone(), n_edges)?;
        p.set_bandwidth(self.bandwidth.clone());
        p.set_agg_counts(self.agg_counts.clone());
        Ok(p)
    }
}

/// Files written plus their digests; the last artifact of every run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ExperimentSpec,
    pub seed: u64,
    pub version: String,
    pub files: BTreeMap<String, String>,
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips; keeps NaN spelled out.
    format!("{v}")
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let path = dir.join(name);
    let write = || -> std::io::Result<()> {
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::Io(e));
    }
    Ok(path)
}

fn digest_hex(bytes: &[u8]) -> String {
    let mut hex = String::with_capacity(64);
    for byte in Sha256::digest(bytes) {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

fn metrics_csv(results: &ExperimentResults) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scenario", "axis", "rule", "trial", "metric", "value"])?;
    let mut rows = results.rows.clone();
    rows.sort_by(|a, b| {
        a.axis
            .partial_cmp(&b.axis)
            .unwrap()
            .then(a.rule.cmp(&b.rule))
            .then(a.trial.cmp(&b.trial))
            .then(a.metric.cmp(&b.metric))
    });
    for r in &rows {
        w.write_record([
            r.scenario.as_str(),
            &fmt_f64(r.axis),
            r.rule.as_str(),
            &r.trial.to_string(),
            r.metric.as_str(),
            &fmt_f64(r.value),
        ])?;
    }
    Ok(w.into_inner().expect("vec writer"))
}

fn aggregates_csv(results: &ExperimentResults) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scenario", "axis", "rule", "metric", "mean", "ci95", "count"])?;
    for a in &results.aggregates {
        w.write_record([
            a.scenario.as_str(),
            &fmt_f64(a.axis),
            a.rule.as_str(),
            a.metric.as_str(),
            &fmt_f64(a.mean),
            &fmt_f64(a.ci95),
            &a.count.to_string(),
        ])?;
    }
    Ok(w.into_inner().expect("vec writer"))
}

fn switches_csv(results: &ExperimentResults) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "trial",
        "rule",
        "iteration",
        "device",
        "from",
        "to",
        "accepted",
        "psi_before",
        "psi_after",
    ])?;
    for report in &results.trials {
        for rr in &report.rules {
            for s in &rr.switch_log {
                w.write_record([
                    report.trial.to_string(),
                    rr.rule.name().to_string(),
                    s.iteration.to_string(),
                    s.device.to_string(),
                    s.from_edge.to_string(),
                    s.to_edge.to_string(),
                    (s.accepted as u8).to_string(),
                    fmt_f64(s.potential_before),
                    fmt_f64(s.potential_after),
                ])?;
            }
        }
    }
    Ok(w.into_inner().expect("vec writer"))
}

fn potential_csv(results: &ExperimentResults) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "rule", "attempt", "switch_index", "psi"])?;
    for report in &results.trials {
        for rr in &report.rules {
            for p in &rr.potential_trajectory {
                w.write_record([
                    report.trial.to_string(),
                    rr.rule.name().to_string(),
                    p.attempt.to_string(),
                    p.switch_index.to_string(),
                    fmt_f64(p.potential),
                ])?;
            }
        }
    }
    Ok(w.into_inner().expect("vec writer"))
}

fn trials_csv(results: &ExperimentResults) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "axis", "seed", "instance_digest", "rule", "converged"])?;
    for report in &results.trials {
        for rr in &report.rules {
            w.write_record([
                report.trial.to_string(),
                fmt_f64(report.axis),
                report.seed.to_string(),
                report.instance_digest.clone(),
                rr.rule.name().to_string(),
                (rr.converged as u8).to_string(),
            ])?;
        }
    }
    Ok(w.into_inner().expect("vec writer"))
}

fn gp_trace_csv(results: &ExperimentResults) -> Result<Option<Vec<u8>>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "rule", "iteration", "objective", "step", "feasibility_residual"])?;
    let mut any = false;
    for report in &results.trials {
        for rr in &report.rules {
            for row in &rr.initial_gp_trace {
                any = true;
                w.write_record([
                    report.trial.to_string(),
                    rr.rule.name().to_string(),
                    row.iteration.to_string(),
                    fmt_f64(row.objective),
                    fmt_f64(row.step),
                    fmt_f64(row.feasibility_residual),
                ])?;
            }
        }
    }
    Ok(any.then(|| w.into_inner().expect("vec writer")))
}

/// Write every table of an experiment into `dir` and close with a manifest
/// recording the digest of each file. Files are written atomically.
pub fn write_outputs(results: &ExperimentResults, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let scenario = results.spec.scenario;
    let prefix = scenario.name();
    let mut files = BTreeMap::new();
    let mut emit = |name: String, bytes: Vec<u8>| -> Result<()> {
        files.insert(name.clone(), digest_hex(&bytes));
        write_atomic(dir, &name, &bytes)?;
        Ok(())
    };

    emit(format!("{prefix}_metrics.csv"), metrics_csv(results)?)?;
    emit(format!("{prefix}_aggregates.csv"), aggregates_csv(results)?)?;
    emit(format!("{prefix}_trials.csv"), trials_csv(results)?)?;
    if matches!(scenario, Scenario::Convergence | Scenario::SinglePartitionDemo) {
        emit(format!("{prefix}_switches.csv"), switches_csv(results)?)?;
        emit(format!("{prefix}_potential.csv"), potential_csv(results)?)?;
    }
    if let Some(bytes) = gp_trace_csv(results)? {
        emit(format!("{prefix}_gp_trace.csv"), bytes)?;
    }
    emit("diagnostics.json".to_string(), serde_json::to_vec_pretty(&results.diagnostics)?)?;

    let manifest = Manifest {
        spec: results.spec.clone(),
        seed: results.spec.seed,
        version: format!("hflsim {}", env!("CARGO_PKG_VERSION")),
        files,
    };
    write_atomic(dir, "manifest.json", &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Serialize one rule's final state next to its instance for replay.
pub fn write_trial_state(
    dir: &Path,
    label: &str,
    instance: &NetworkInstance,
    state: &TrialState,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(dir, &format!("{label}_instance.json"), instance.to_json_string()?.as_bytes())?;
    write_atomic(
        dir,
        &format!("{label}_state_{}.json", state.rule.name()),
        &serde_json::to_vec_pretty(state)?,
    )?;
    Ok(())
}
