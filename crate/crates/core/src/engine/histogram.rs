//! Per-sample latency distribution and per-class spike statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ImageSet;
use crate::model::NetworkModel;
use crate::neuron::encode_input;

use super::{run_sample, EngineConfig, EngineError, RunResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub label: u8,
    pub cycles: u64,
    pub spikes: u64,
    pub events: u64,
    pub predicted: usize,
}

impl SampleRecord {
    pub fn from_run(sample_id: usize, label: u8, r: &RunResult) -> Self {
        SampleRecord {
            sample_id,
            label,
            cycles: r.cycles,
            spikes: r.total_spikes,
            events: r.events_processed,
            predicted: r.predicted,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub min: u64,
    pub max: u64,
    pub bin_width: u64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Splits `[min, max]` into at most `bins` equal-width bins.
    pub fn new(values: &[u64], bins: usize) -> Self {
        let (Some(&min), Some(&max)) = (values.iter().min(), values.iter().max()) else {
            return Histogram {
                min: 0,
                max: 0,
                bin_width: 1,
                counts: Vec::new(),
            };
        };
        let bin_width = (max - min + 1).div_ceil(bins.max(1) as u64);
        let n = ((max - min) / bin_width + 1) as usize;
        let mut counts = vec![0; n];
        for &v in values {
            counts[((v - min) / bin_width) as usize] += 1;
        }
        Histogram {
            min,
            max,
            bin_width,
            counts,
        }
    }

    pub fn bin_start(&self, i: usize) -> u64 {
        self.min + i as u64 * self.bin_width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: usize,
    pub samples: usize,
    pub mean_spikes: f64,
    pub mean_cycles: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub records: Vec<SampleRecord>,
    pub histogram: Histogram,
    pub per_class: Vec<ClassStats>,
}

impl LatencyReport {
    pub fn accuracy(&self) -> f64 {
        let correct = self.records.iter().filter(|r| r.predicted == r.label as usize).count();
        correct as f64 / self.records.len().max(1) as f64
    }
}

/// Simulates the given samples (in parallel) and summarises their latency.
/// Records come back ordered by position in `indices`.
pub fn latency_histogram(
    net: &NetworkModel,
    data: &ImageSet,
    indices: &[usize],
    cfg: &EngineConfig,
    bins: usize,
) -> Result<LatencyReport, EngineError> {
    let runs = run_samples(net, data, indices, cfg)?;
    let records: Vec<SampleRecord> = runs.iter().map(|(rec, _)| *rec).collect();
    Ok(summarise(records, bins))
}

/// Runs every selected sample and returns its record with the full result.
pub fn run_samples(
    net: &NetworkModel,
    data: &ImageSet,
    indices: &[usize],
    cfg: &EngineConfig,
) -> Result<Vec<(SampleRecord, RunResult)>, EngineError> {
    let acc = cfg.accumulator()?;
    if data.geometry != net.input {
        return Err(EngineError::GeometryMismatch {
            expected: net.input,
            found: data.geometry,
        });
    }
    indices
        .par_iter()
        .map(|&i| {
            let input = encode_input(data.image(i), data.geometry, cfg.input, net.timesteps, cfg.mode, acc);
            let r = run_sample(net, &input, cfg)?;
            Ok((SampleRecord::from_run(i, data.label(i), &r), r))
        })
        .collect()
}

pub fn summarise(records: Vec<SampleRecord>, bins: usize) -> LatencyReport {
    let cycles: Vec<u64> = records.iter().map(|r| r.cycles).collect();
    let histogram = Histogram::new(&cycles, bins);
    let classes = records.iter().map(|r| r.label as usize + 1).max().unwrap_or(0);
    let mut sums = vec![(0usize, 0u64, 0u64); classes];
    for r in &records {
        let s = &mut sums[r.label as usize];
        s.0 += 1;
        s.1 += r.spikes;
        s.2 += r.cycles;
    }
    let per_class = sums
        .into_iter()
        .enumerate()
        .filter(|(_, s)| s.0 > 0)
        .map(|(class, (n, spikes, cycles))| ClassStats {
            class,
            samples: n,
            mean_spikes: spikes as f64 / n as f64,
            mean_cycles: cycles as f64 / n as f64,
        })
        .collect();
    LatencyReport {
        records,
        histogram,
        per_class,
    }
}
