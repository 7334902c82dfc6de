//! Problem instance and physical-layer formulas.
//!
//! Holds the immutable network description (devices, edge servers, channel
//! gains, system constants) plus the latency/rate primitives everything else
//! is built from. All quantities are SI internally: Hz, bits, seconds, watts.

use serde::{Deserialize, Serialize};

use crate::economics::EconomicParams;
use crate::error::{Error, Result};
use crate::stackelberg::StackelbergParams;

/// Rate normalization used by congestion costs: rates are expressed in
/// Mbit/s before squaring so Table-scale congestion coefficients produce
/// costs commensurate with revenues.
pub const MBIT: f64 = 1e6;

/// Path-loss exponent for distance-based channel gains.
pub const PATH_LOSS_EXPONENT: f64 = 3.5;

/// Reference transmit power (midpoint of the sampled range) used when
/// mapping path-loss gains into a target SNR window.
pub const REFERENCE_TX_POWER: f64 = 0.35;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Global system constants shared by every entity in a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Total wireless bandwidth shared by all coalitions, Hz.
    pub total_bandwidth: f64,
    /// Fixed time interval between two global (cloud) aggregations, seconds.
    pub cloud_interval: f64,
    /// Size of one local model update, bits.
    pub model_size: f64,
    /// Additive white Gaussian noise power, watts.
    pub noise_power: f64,
    /// Seed the instance was generated from; kept for replay.
    pub rng_seed: u64,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_bandwidth > 0.0
            && self.cloud_interval > 0.0
            && self.model_size > 0.0
            && self.noise_power > 0.0)
        {
            return Err(Error::InvalidConfig(
                "total_bandwidth, cloud_interval, model_size and noise_power must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One participating device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: usize,
    /// CPU frequency, cycles per second.
    pub cpu_freq: f64,
    /// CPU cycles needed to train one unit of data.
    pub cycles_per_unit: f64,
    /// Uplink transmit power, watts.
    pub tx_power: f64,
    /// Position in the deployment region, meters.
    pub position: [f64; 2],
}

impl Device {
    /// Data units this device can train per second of compute time.
    pub fn work_rate(&self) -> f64 {
        self.cpu_freq / self.cycles_per_unit
    }
}

/// One edge server (base station). Economic parameters for edge `l` live in
/// row `l` of [`EconomicParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeServer {
    pub id: usize,
    pub position: [f64; 2],
}

/// Dense N x L matrix of dimensionless channel gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMatrix {
    n_devices: usize,
    n_edges: usize,
    /// Row-major, `gains[n * n_edges + l]`.
    gains: Vec<f64>,
}

impl ChannelMatrix {
    pub fn new(n_devices: usize, n_edges: usize, gains: Vec<f64>) -> Result<Self> {
        if gains.len() != n_devices * n_edges {
            return Err(Error::InvalidInstance(format!(
                "channel matrix has {} entries, expected {}",
                gains.len(),
                n_devices * n_edges
            )));
        }
        if gains.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::InvalidInstance("channel gains must be > 0".into()));
        }
        Ok(Self { n_devices, n_edges, gains })
    }

    pub fn gain(&self, device: usize, edge: usize) -> f64 {
        self.gains[device * self.n_edges + edge]
    }

    pub fn n_devices(&self) -> usize {
        self.n_devices
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Distance-based gains: pure path loss `d^-3.5`, scaled so the SNR seen
    /// at reference transmit power spans `[snr_lo, snr_hi]` across the region
    /// (hitting `snr_hi` at the reference distance and `snr_lo` at
    /// `region_diagonal`). Gains stay fixed for the lifetime of a trial.
    pub fn from_path_loss(
        devices: &[Device],
        edges: &[EdgeServer],
        noise_power: f64,
        snr_lo: f64,
        snr_hi: f64,
        region_diagonal: f64,
    ) -> Result<Self> {
        if !(snr_hi >= snr_lo && snr_lo > 0.0) {
            return Err(Error::InvalidConfig("need 0 < snr_lo <= snr_hi".into()));
        }
        let d_ref = region_diagonal / (snr_hi / snr_lo).powf(1.0 / PATH_LOSS_EXPONENT);
        let mut gains = Vec::with_capacity(devices.len() * edges.len());
        for dev in devices {
            for edge in edges {
                let dx = dev.position[0] - edge.position[0];
                let dy = dev.position[1] - edge.position[1];
                let d = (dx * dx + dy * dy).sqrt().max(d_ref);
                let snr_at_ref_power = snr_hi * (d / d_ref).powf(-PATH_LOSS_EXPONENT);
                gains.push(snr_at_ref_power * noise_power / REFERENCE_TX_POWER);
            }
        }
        Self::new(devices.len(), edges.len(), gains)
    }
}

/// The immutable problem instance: everything a trial needs to be replayed
/// bit-for-bit given the same seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkInstance {
    pub config: SystemConfig,
    pub devices: Vec<Device>,
    pub edges: Vec<EdgeServer>,
    pub channel: ChannelMatrix,
    pub econ: EconomicParams,
    pub pricing: StackelbergParams,
    /// Cached spectral efficiency log2(1 + SNR) per (device, edge);
    /// rebuilt after deserialization, never serialized.
    #[serde(skip)]
    eff: Vec<f64>,
}

impl NetworkInstance {
    pub fn new(
        config: SystemConfig,
        devices: Vec<Device>,
        edges: Vec<EdgeServer>,
        channel: ChannelMatrix,
        econ: EconomicParams,
        pricing: StackelbergParams,
    ) -> Result<Self> {
        let mut inst = Self { config, devices, edges, channel, econ, pricing, eff: Vec::new() };
        inst.validate()?;
        inst.rebuild_cache();
        Ok(inst)
    }

    pub fn n_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Received SNR term `P_n h_{n,l} / noise`.
    pub fn snr(&self, device: usize, edge: usize) -> f64 {
        self.devices[device].tx_power * self.channel.gain(device, edge) / self.config.noise_power
    }

    /// Spectral efficiency log2(1 + SNR), bits per second per Hz.
    pub fn spectral_efficiency(&self, device: usize, edge: usize) -> f64 {
        self.eff[device * self.edges.len() + edge]
    }

    fn rebuild_cache(&mut self) {
        let l = self.edges.len();
        self.eff =
            (0..self.devices.len() * l).map(|i| (1.0 + self.snr(i / l, i % l)).log2()).collect();
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let (n, l) = (self.devices.len(), self.edges.len());
        if l < 1 || n < l {
            return Err(Error::InvalidInstance(format!(
                "need n_devices >= n_edges >= 1, got {n} devices, {l} edges"
            )));
        }
        for (i, d) in self.devices.iter().enumerate() {
            if d.id != i {
                return Err(Error::InvalidInstance(format!("device {i} has id {}", d.id)));
            }
            if !(d.cpu_freq > 0.0 && d.cycles_per_unit > 0.0 && d.tx_power > 0.0) {
                return Err(Error::InvalidInstance(format!("device {i} has a nonpositive field")));
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.id != i {
                return Err(Error::InvalidInstance(format!("edge {i} has id {}", e.id)));
            }
        }
        if self.channel.n_devices() != n || self.channel.n_edges() != l {
            return Err(Error::InvalidInstance("channel matrix shape mismatch".into()));
        }
        self.econ.validate(l)?;
        self.pricing.validate()?;
        for dev in 0..n {
            if !(0..l).any(|e| self.singleton_budget(dev, e) > 0.0) {
                return Err(Error::InvalidInstance(format!(
                    "device {dev} has no edge with a positive data budget at k = 1 \
                     under an equal bandwidth split"
                )));
            }
        }
        Ok(())
    }

    /// Per-round data budget (units) of `device` alone at edge `edge` with an
    /// equal share of the total bandwidth and a single edge aggregation.
    /// Positive means the device can meet the deadline there.
    pub fn singleton_budget(&self, device: usize, edge: usize) -> f64 {
        let share = self.config.total_bandwidth / self.edges.len() as f64;
        let rate = share * (1.0 + self.snr(device, edge)).log2();
        if rate <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (self.config.cloud_interval - self.config.model_size / rate)
            * self.devices[device].work_rate()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let mut inst: Self = serde_json::from_str(s)?;
        inst.validate()?;
        inst.rebuild_cache();
        Ok(inst)
    }

    /// SHA-256 of the canonical JSON encoding; stable across runs.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("instance serializes");
        let mut hex = String::with_capacity(64);
        for byte in Sha256::digest(json.as_bytes()) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

// ---------------------------------------------------------------------------
// Physical-layer operations
// ---------------------------------------------------------------------------

/// Per-round deadline: the execution time of one edge aggregation when `k`
/// of them fit in one cloud interval.
pub fn edge_aggregation_period(cloud_interval: f64, k: u32) -> f64 {
    assert!(k >= 1, "aggregation count must be >= 1");
    assert!(cloud_interval > 0.0, "cloud interval must be > 0");
    cloud_interval / f64::from(k)
}

/// Time for a device to train `data_units` of data locally.
pub fn local_training_time(data_units: f64, device: &Device) -> f64 {
    assert!(data_units >= 0.0, "data amount must be >= 0");
    data_units * device.cycles_per_unit / device.cpu_freq
}

/// Uplink rate of a device inside a coalition: the coalition bandwidth is
/// split equally among its members (idle members included).
pub fn uplink_rate(
    device: &Device,
    edge: &EdgeServer,
    coalition_size: usize,
    coalition_bandwidth: f64,
    channel: &ChannelMatrix,
    noise_power: f64,
) -> f64 {
    assert!(coalition_size >= 1, "coalition size must be >= 1");
    assert!(coalition_bandwidth >= 0.0, "bandwidth must be >= 0");
    let snr = device.tx_power * channel.gain(device.id, edge.id) / noise_power;
    coalition_bandwidth / coalition_size as f64 * (1.0 + snr).log2()
}

/// Time to upload one local model at `rate`; `None` when the rate is zero
/// and no deadline can ever be met.
pub fn upload_time(model_size: f64, rate: f64) -> Option<f64> {
    if rate > 0.0 {
        Some(model_size / rate)
    } else {
        None
    }
}
