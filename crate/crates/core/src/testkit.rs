//! Small random-instance builder shared by unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::economics::EconomicParams;
use crate::model::{ChannelMatrix, Device, EdgeServer, NetworkInstance, SystemConfig};
use crate::stackelberg::StackelbergParams;

#[derive(Debug, Clone, Copy)]
pub struct TestDims {
    pub n_devices: usize,
    pub n_edges: usize,
}

/// Fully symmetric instance: identical devices, identical edges, one common
/// SNR everywhere. Useful for symmetry assertions.
pub fn symmetric_instance(n_devices: usize, n_edges: usize, snr: f64) -> NetworkInstance {
    let noise = 1e-7;
    let power = 0.35;
    let devices: Vec<Device> = (0..n_devices)
        .map(|id| Device {
            id,
            cpu_freq: 3e9,
            cycles_per_unit: 3e9,
            tx_power: power,
            position: [0.0, 0.0],
        })
        .collect();
    let edges: Vec<EdgeServer> =
        (0..n_edges).map(|id| EdgeServer { id, position: [0.0, 0.0] }).collect();
    let gains = vec![snr * noise / power; n_devices * n_edges];
    let channel = ChannelMatrix::new(n_devices, n_edges, gains).unwrap();
    NetworkInstance::new(
        SystemConfig {
            total_bandwidth: 5e6,
            cloud_interval: 20.0,
            model_size: 3e6,
            noise_power: noise,
            rng_seed: 0,
        },
        devices,
        edges,
        channel,
        EconomicParams::uniform(n_edges, 10.0, 1.0, 0.1, 1.0),
        StackelbergParams::default(),
    )
    .unwrap()
}

/// Instance with table-scale constants and randomized placement, prices and
/// device capabilities. Retries placement until every device is feasible
/// somewhere, which is almost always immediate at these scales.
pub fn random_instance(rng: &mut ChaCha8Rng, dims: TestDims) -> NetworkInstance {
    let region = 1000.0;
    for _ in 0..100 {
        let devices: Vec<Device> = (0..dims.n_devices)
            .map(|id| Device {
                id,
                cpu_freq: rng.random_range(1e9..4e9),
                cycles_per_unit: 3e9,
                tx_power: rng.random_range(0.2..0.5),
                position: [rng.random_range(0.0..region), rng.random_range(0.0..region)],
            })
            .collect();
        let edges: Vec<EdgeServer> = (0..dims.n_edges)
            .map(|id| EdgeServer {
                id,
                position: [rng.random_range(0.0..region), rng.random_range(0.0..region)],
            })
            .collect();
        let noise = 1e-7;
        let channel =
            ChannelMatrix::from_path_loss(&devices, &edges, noise, 5.0, 80.0, 2f64.sqrt() * region)
                .unwrap();
        let econ = EconomicParams {
            unit_price: (0..dims.n_edges).map(|_| rng.random_range(5.0..15.0)).collect(),
            fixed_reward: vec![1.0; dims.n_edges],
            congestion_coef: (0..dims.n_edges).map(|_| rng.random_range(0.05..0.15)).collect(),
            improvement_coef: 1.0,
        };
        let config = SystemConfig {
            total_bandwidth: 5e6,
            cloud_interval: rng.random_range(15.0..25.0),
            model_size: 3e6,
            noise_power: noise,
            rng_seed: 0,
        };
        if let Ok(inst) = NetworkInstance::new(
            config,
            devices,
            edges,
            channel,
            econ,
            StackelbergParams::default(),
        ) {
            return inst;
        }
    }
    panic!("could not build a feasible test instance in 100 attempts");
}
