//! FPGA memory cost model: BRAM aspect ratios, half-BRAM granularity and
//! the BRAM/LUTRAM mapping of queues, membrane memories and weight ROMs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineConfig;
use crate::model::{LayerKind, NetworkModel};
use crate::neuron::NeuronMode;
use crate::queueing::{window_count, EventEncoding};

#[derive(Debug, Error, PartialEq)]
pub enum ResourceError {
    #[error("word width {0} outside [1, 36]")]
    WidthOutOfRange(u32),
    #[error("parallelism must be >= 1")]
    ZeroParallelism,
    #[error("invalid design: {0}")]
    Invalid(String),
}

/// Words of width `w` that fit into one BRAM primitive.
///
/// Widths between the 8- and 18-bit brackets follow the 9-bit (4096 words)
/// and 18-bit (2048 words) aspect ratios, so 9 maps to 4096 and 10 to 2048.
pub fn bram_words(w: u32) -> Result<u64, ResourceError> {
    Ok(match w {
        1 => 32768,
        2 => 16384,
        3..=4 => 8192,
        5..=9 => 4096,
        10..=18 => 2048,
        19..=36 => 1024,
        _ => return Err(ResourceError::WidthOutOfRange(w)),
    })
}

/// Rounds up to the next multiple of one half.
pub fn half_bram_ceil(n: f64) -> f64 {
    (2.0 * n).ceil() / 2.0
}

/// Half BRAMs needed for `depth` words of width `w`.
fn halves(depth: u64, w: u32) -> Result<u64, ResourceError> {
    Ok((2 * depth).div_ceil(bram_words(w)?))
}

/// BRAMs for `parallel` cores with `queues` memories of `depth` words each.
pub fn bram_count(queues: usize, parallel: usize, depth: usize, w: u32) -> Result<f64, ResourceError> {
    if parallel == 0 {
        return Err(ResourceError::ZeroParallelism);
    }
    Ok((parallel * queues) as f64 * halves(depth as u64, w)? as f64 / 2.0)
}

/// Membrane memories hold values before and after computation, so twice the count.
pub fn membrane_bram_count(queues: usize, parallel: usize, depth: usize, w: u32) -> Result<f64, ResourceError> {
    Ok(2.0 * bram_count(queues, parallel, depth, w)?)
}

/// BRAM allowance for the weight ROMs: 2.5 per core.
pub fn weight_rom_brams(parallel: usize) -> Result<f64, ResourceError> {
    if parallel == 0 {
        return Err(ResourceError::ZeroParallelism);
    }
    Ok(2.5 * parallel as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Aeq,
    Membrane,
    WeightRom,
}

impl Structure {
    pub fn name(&self) -> &'static str {
        match self {
            Structure::Aeq => "aeq",
            Structure::Membrane => "membrane",
            Structure::WeightRom => "weight_rom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tech {
    Bram,
    Lutram,
}

impl Tech {
    pub fn name(&self) -> &'static str {
        match self {
            Tech::Bram => "bram",
            Tech::Lutram => "lutram",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryPolicy {
    #[default]
    AllBram,
    AllLutram,
    /// LUTRAM for memories that would fill less than the occupancy threshold of their BRAMs.
    Auto,
}

/// Sizes of the memories one accelerator instance needs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryDesign {
    pub parallel: usize,
    /// Interlaced memories per core (`K^2`).
    pub queues: usize,
    pub aeq_depth: usize,
    pub aeq_bits: u32,
    pub membrane_depth: usize,
    pub membrane_bits: u32,
    pub weight_bits: u32,
    pub params: usize,
}

impl MemoryDesign {
    /// Derives the design from a network and engine configuration.
    ///
    /// * AEQ width is the widest resolved event word over all feature maps.
    /// * AEQ depth is the configured depth, else an even share per core of the
    ///   largest number of spikes one queue position can see in a layer.
    /// * Membrane depth is the largest window grid of any conv/dense output map.
    pub fn from_model(net: &NetworkModel, cfg: &EngineConfig) -> Result<Self, ResourceError> {
        if cfg.parallel == 0 {
            return Err(ResourceError::ZeroParallelism);
        }
        let k = net
            .interlace_factor()
            .map_err(|e| ResourceError::Invalid(e.to_string()))?;
        let mut maps = vec![net.input];
        maps.extend(net.output_geometries());
        let aeq_bits = maps
            .iter()
            .map(|g| {
                EventEncoding::for_map(g.width, g.height, k, cfg.encoding)
                    .word_bits()
                    .max(1)
            })
            .max()
            .unwrap_or(1);
        let spikes_per_neuron = match cfg.mode {
            NeuronMode::MTtfsSingleSpike => 1,
            _ => net.timesteps,
        };
        let aeq_depth = cfg.aeq_depth.unwrap_or_else(|| {
            maps.iter()
                .map(|g| window_count(g.width, k) * window_count(g.height, k) * g.channels * spikes_per_neuron)
                .max()
                .unwrap_or(1)
                .div_ceil(cfg.parallel)
        });
        let membrane_depth = net
            .layers
            .iter()
            .filter(|l| !matches!(l.kind, LayerKind::MaxPool { .. }))
            .map(|l| {
                let g = l.output_geometry().expect("validated model");
                window_count(g.width, k) * window_count(g.height, k)
            })
            .max()
            .unwrap_or(1);
        Ok(MemoryDesign {
            parallel: cfg.parallel,
            queues: k * k,
            aeq_depth,
            aeq_bits,
            membrane_depth,
            membrane_bits: cfg.acc_bits,
            weight_bits: net.weight_bits,
            params: net.param_count(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub policy: MemoryPolicy,
    pub occupancy_threshold: f64,
    /// Forces the technology of the queues regardless of policy.
    pub aeq_tech: Option<Tech>,
    /// Forces the technology of the membrane memories regardless of policy.
    pub membrane_tech: Option<Tech>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            policy: MemoryPolicy::AllBram,
            occupancy_threshold: 0.25,
            aeq_tech: None,
            membrane_tech: None,
        }
    }
}

impl PlanOptions {
    pub fn with_policy(policy: MemoryPolicy) -> Self {
        PlanOptions {
            policy,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub structure: Structure,
    pub tech: Tech,
    /// Multiple of 0.5; zero for LUTRAM entries.
    pub brams: f64,
    pub lutram_bits: u64,
    pub depth: usize,
    pub width: u32,
    pub replication: usize,
    /// Fraction of the allocated BRAM words actually used.
    pub occupancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryPlan {
    pub design: MemoryDesign,
    pub options: PlanOptions,
    pub entries: Vec<PlanEntry>,
}

impl MemoryPlan {
    pub fn entry(&self, s: Structure) -> &PlanEntry {
        self.entries
            .iter()
            .find(|e| e.structure == s)
            .expect("every structure is planned")
    }

    pub fn total_brams(&self) -> f64 {
        self.entries.iter().map(|e| e.brams).sum()
    }

    /// Total without the weight ROM allowance, which synthesis may optimise away.
    pub fn total_brams_without_rom(&self) -> f64 {
        self.total_brams() - self.entry(Structure::WeightRom).brams
    }

    pub fn bram_halves(&self) -> u64 {
        (self.total_brams() * 2.0).round() as u64
    }

    pub fn lutram_bits(&self) -> u64 {
        self.entries.iter().map(|e| e.lutram_bits).sum()
    }

    /// Whether the queues can hold `peak` events each.
    pub fn holds_queue_peak(&self, peak: usize) -> bool {
        let aeq = self.entry(Structure::Aeq);
        aeq.depth > 0 && aeq.depth >= peak
    }
}

fn choose(forced: Option<Tech>, opts: &PlanOptions, occupancy: f64) -> Tech {
    forced.unwrap_or(match opts.policy {
        MemoryPolicy::AllBram => Tech::Bram,
        MemoryPolicy::AllLutram => Tech::Lutram,
        MemoryPolicy::Auto if occupancy < opts.occupancy_threshold => Tech::Lutram,
        MemoryPolicy::Auto => Tech::Bram,
    })
}

fn rw_entry(
    structure: Structure,
    forced: Option<Tech>,
    opts: &PlanOptions,
    d: &MemoryDesign,
    depth: usize,
    width: u32,
    copies: usize,
) -> Result<PlanEntry, ResourceError> {
    let words = bram_words(width)?;
    let half = halves(depth as u64, width)?;
    let occupancy = depth as f64 / (half as f64 * words as f64 / 2.0);
    let replication = d.parallel * d.queues * copies;
    let tech = choose(forced, opts, depth as f64 / words as f64);
    let (brams, lutram_bits) = match tech {
        Tech::Bram => (replication as f64 * half as f64 / 2.0, 0),
        Tech::Lutram => (0.0, (replication * depth) as u64 * width as u64),
    };
    Ok(PlanEntry {
        structure,
        tech,
        brams,
        lutram_bits,
        depth,
        width,
        replication,
        occupancy,
    })
}

pub fn plan_design(d: &MemoryDesign, opts: &PlanOptions) -> Result<MemoryPlan, ResourceError> {
    if d.parallel == 0 {
        return Err(ResourceError::ZeroParallelism);
    }
    if !(0.0..=1.0).contains(&opts.occupancy_threshold) {
        return Err(ResourceError::Invalid(format!(
            "occupancy threshold {} outside [0, 1]",
            opts.occupancy_threshold
        )));
    }
    let aeq = rw_entry(Structure::Aeq, opts.aeq_tech, opts, d, d.aeq_depth, d.aeq_bits, 1)?;
    let membrane = rw_entry(
        Structure::Membrane,
        opts.membrane_tech,
        opts,
        d,
        d.membrane_depth,
        d.membrane_bits,
        2,
    )?;
    let rom = match opts.policy {
        MemoryPolicy::AllLutram => PlanEntry {
            structure: Structure::WeightRom,
            tech: Tech::Lutram,
            brams: 0.0,
            lutram_bits: (d.parallel * d.params) as u64 * d.weight_bits as u64,
            depth: d.params,
            width: d.weight_bits,
            replication: d.parallel,
            occupancy: 1.0,
        },
        _ => PlanEntry {
            structure: Structure::WeightRom,
            tech: Tech::Bram,
            brams: weight_rom_brams(d.parallel)?,
            lutram_bits: 0,
            depth: d.params,
            width: d.weight_bits,
            replication: d.parallel,
            occupancy: 1.0,
        },
    };
    Ok(MemoryPlan {
        design: *d,
        options: *opts,
        entries: vec![aeq, membrane, rom],
    })
}

pub fn plan_memories(net: &NetworkModel, cfg: &EngineConfig, opts: &PlanOptions) -> Result<MemoryPlan, ResourceError> {
    plan_design(&MemoryDesign::from_model(net, cfg)?, opts)
}
