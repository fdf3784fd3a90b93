//! Randomised small networks for engine/oracle equivalence checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{run_dense_oracle, run_sample, EngineConfig, EngineError};
use crate::model::{output_geometry, Geometry, LayerKind, LayerSpec, NetworkModel, Padding, SpikePlane, SpikeTrain};
use crate::neuron::NeuronMode;
use crate::queueing::EncodingScheme;

#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub seed: u64,
    pub net: NetworkModel,
    pub input: SpikeTrain,
    pub cfg: EngineConfig,
}

/// Builds a network of 1 to 3 layers on maps of at most `max_size` square,
/// with at most 8 channels and `T <= 4`, plus a random input and engine setup.
pub fn random_instance(seed: u64, max_size: usize, mode: NeuronMode) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = [1usize, 3, 3, 3, 5][rng.gen_range(0..5)];
    let max_size = max_size.max(k + 1);
    let input = Geometry::new(
        rng.gen_range(k..=max_size),
        rng.gen_range(k..=max_size),
        rng.gen_range(1..=3),
    );
    let timesteps = rng.gen_range(1..=4);
    let weight_bits = 8;
    let depth = rng.gen_range(1..=3);

    let mut layers = Vec::new();
    let mut geom = input;
    for i in 0..depth {
        let last = i + 1 == depth;
        let choice = rng.gen_range(0..10);
        let layer = if last && choice < 3 {
            let out = rng.gen_range(1..=8);
            let fan_in = geom.neurons();
            LayerSpec {
                kind: LayerKind::Dense {
                    threshold: rng.gen_range(1..=12),
                },
                input: geom,
                out_channels: out,
                weights: (0..out * fan_in).map(|_| rng.gen_range(-6..=10)).collect(),
                bias: (0..out).map(|_| rng.gen_range(-3..=3)).collect(),
            }
        } else if !last && choice < 3 && geom.width >= 2 && geom.height >= 2 {
            let window = rng.gen_range(2..=3.min(geom.width).min(geom.height));
            LayerSpec {
                kind: LayerKind::MaxPool { window },
                input: geom,
                out_channels: geom.channels,
                weights: Vec::new(),
                bias: Vec::new(),
            }
        } else {
            let out = rng.gen_range(1..=8);
            let padding = if geom.width < k || geom.height < k || rng.gen_bool(0.5) {
                Padding::Same
            } else {
                Padding::Valid
            };
            LayerSpec {
                kind: LayerKind::Conv {
                    kernel: k,
                    padding,
                    threshold: rng.gen_range(1..=20),
                },
                input: geom,
                out_channels: out,
                weights: (0..out * geom.channels * k * k)
                    .map(|_| rng.gen_range(-8..=15))
                    .collect(),
                bias: (0..out).map(|_| rng.gen_range(-4..=4)).collect(),
            }
        };
        geom = output_geometry(&layer, i).expect("generator keeps maps non-empty");
        layers.push(layer);
    }
    let net = NetworkModel {
        name: format!("random-{seed}"),
        input,
        timesteps,
        weight_bits,
        num_classes: geom.neurons(),
        layers,
    };
    net.validate().expect("generator produces valid networks");

    let density = rng.gen_range(0.05..0.6);
    let mut planes: SpikeTrain = (0..timesteps).map(|_| SpikePlane::new(input)).collect();
    for c in 0..input.channels {
        for y in 0..input.height {
            for x in 0..input.width {
                if mode == NeuronMode::MTtfsSingleSpike {
                    if rng.gen_bool(density) {
                        planes[rng.gen_range(0..timesteps)].set(x, y, c, true);
                    }
                } else {
                    for plane in planes.iter_mut() {
                        if rng.gen_bool(density) {
                            plane.set(x, y, c, true);
                        }
                    }
                }
            }
        }
    }

    let cfg = EngineConfig {
        parallel: rng.gen_range(1..=16),
        mode,
        encoding: if rng.gen_bool(0.5) {
            EncodingScheme::Compressed
        } else {
            EncodingScheme::Plain
        },
        acc_bits: rng.gen_range(6..=16),
        record_planes: true,
        ..EngineConfig::default()
    };
    RandomInstance {
        seed,
        net,
        input: planes,
        cfg,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seed: u64,
    pub mode: NeuronMode,
    pub architecture: String,
    pub spikes: u64,
    /// First difference found, if any.
    pub mismatch: Option<String>,
}

impl Comparison {
    pub fn equivalent(&self) -> bool {
        self.mismatch.is_none()
    }
}

/// Runs the engine and the dense oracle on one instance and diffs them.
pub fn compare_instance(inst: &RandomInstance) -> Result<Comparison, EngineError> {
    let cfg = EngineConfig {
        record_planes: true,
        ..inst.cfg.clone()
    };
    let engine = run_sample(&inst.net, &inst.input, &cfg)?;
    let oracle = run_dense_oracle(&inst.net, &inst.input, inst.net.timesteps, cfg.mode, cfg.accumulator()?)?;
    let mut mismatch = None;
    'outer: for (l, (e, o)) in engine.planes.iter().zip(&oracle.planes).enumerate() {
        for (t, (pe, po)) in e.iter().zip(o).enumerate() {
            if pe != po {
                mismatch = Some(format!(
                    "layer {l} t {t}: engine {} spikes, oracle {}",
                    pe.count(),
                    po.count()
                ));
                break 'outer;
            }
        }
    }
    if mismatch.is_none() && engine.output_potentials != oracle.output_potentials {
        mismatch = Some("output potentials differ".into());
    }
    if mismatch.is_none() && engine.predicted != oracle.predicted {
        mismatch = Some(format!(
            "engine predicts {}, oracle {}",
            engine.predicted, oracle.predicted
        ));
    }
    Ok(Comparison {
        seed: inst.seed,
        mode: cfg.mode,
        architecture: inst.net.architecture(),
        spikes: engine.total_spikes,
        mismatch,
    })
}

/// Compares `count` instances, alternating reset and single-spike modes.
pub fn compare_many(first_seed: u64, count: usize, max_size: usize) -> Result<Vec<Comparison>, EngineError> {
    (0..count as u64)
        .map(|i| {
            let mode = if i % 2 == 0 {
                NeuronMode::IfReset
            } else {
                NeuronMode::MTtfsSingleSpike
            };
            compare_instance(&random_instance(first_seed + i, max_size, mode))
        })
        .collect()
}
