//! Event-driven accelerator simulation.
//!
//! Execution order is layer by layer; within a layer, output channel by
//! output channel; within a channel, timestep by timestep. Each such pass
//! drains the input segments `(c_in, t)` of every input channel, scatters
//! the kernel weights into the interlaced membrane memory and then
//! thresholds the map. Thresholding of a pass overlaps the compute phase of
//! the next one, so it adds no cycles.
//!
//! A layer at timestep `t` consumes the spikes its predecessor emitted at
//! the same `t`.

pub mod histogram;
pub mod membrane;
pub mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Geometry, LayerKind, LayerSpec, ModelError, NetworkModel, Padding, SpikePlane, SpikeTrain};
use crate::neuron::{Accumulator, InputEncoding, NeuronMode};
use crate::queueing::{from_address_event, to_address_event, AeqBank, EncodingScheme, EventEncoding, QueueError};

use membrane::MembraneBank;

pub use histogram::{latency_histogram, ClassStats, Histogram, LatencyReport, SampleRecord};
pub use oracle::{run_dense_oracle, OracleResult};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("input geometry {found} does not match network input {expected}")]
    GeometryMismatch { expected: Geometry, found: Geometry },
    #[error("expected {expected} input timesteps, got {found}")]
    TimestepMismatch { expected: usize, found: usize },
    #[error("double-buffer hazard at ({x}, {y}): pass {read_pass} read a word already written by pass {written_by}")]
    BufferHazard {
        x: usize,
        y: usize,
        read_pass: u64,
        written_by: u64,
    },
    #[error("invalid engine configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Number of spike-processing cores P.
    pub parallel: usize,
    /// Capacity of each physical queue; `None` leaves queues unbounded.
    pub aeq_depth: Option<usize>,
    pub mode: NeuronMode,
    pub encoding: EncodingScheme,
    /// Fixed cycles per drained segment; `None` means `K^2 + 4`.
    pub pipeline_fill: Option<u64>,
    pub clock_mhz: f64,
    pub acc_bits: u32,
    pub input: InputEncoding,
    /// Keep every layer's spike planes in the result.
    pub record_planes: bool,
    /// Keep per-segment queue occupancies in the result.
    pub record_queue_trace: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            parallel: 1,
            aeq_depth: None,
            mode: NeuronMode::MTtfsSingleSpike,
            encoding: EncodingScheme::Plain,
            pipeline_fill: None,
            clock_mhz: 100.0,
            acc_bits: 16,
            input: InputEncoding::default(),
            record_planes: false,
            record_queue_trace: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(1..=16).contains(&self.parallel) {
            return Err(EngineError::Config(format!(
                "parallelism {} outside [1, 16]",
                self.parallel
            )));
        }
        if self.aeq_depth == Some(0) {
            return Err(EngineError::Config("AEQ depth must be >= 1".into()));
        }
        if !(self.clock_mhz > 0.0 && self.clock_mhz.is_finite()) {
            return Err(EngineError::Config(format!("clock {} MHz", self.clock_mhz)));
        }
        self.accumulator()?;
        Ok(())
    }

    pub fn accumulator(&self) -> Result<Accumulator, EngineError> {
        Accumulator::new(self.acc_bits)
            .ok_or_else(|| EngineError::Config(format!("accumulator width {} outside [2, 32]", self.acc_bits)))
    }

    pub fn fill_cycles(&self, k: usize) -> u64 {
        self.pipeline_fill.unwrap_or((k * k) as u64 + 4)
    }
}

/// Cycles to drain one segment: the busiest core plus the pipeline fill.
pub fn segment_cycles(core_loads: &[usize], fill: u64) -> u64 {
    core_loads.iter().copied().max().unwrap_or(0) as u64 + fill
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentCycles {
    pub layer: usize,
    /// Output channel (or feature) of the pass that drained the segment.
    pub pass_channel: usize,
    pub in_channel: usize,
    pub timestep: usize,
    pub events: usize,
    pub cycles: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuePeak {
    /// Bank index: 0 holds the encoded input, `l + 1` the output of layer `l`.
    pub layer: usize,
    pub channel: usize,
    pub timestep: usize,
    pub queue: usize,
    pub max_occupancy: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub cycles: u64,
    /// Index 0 counts input spikes, index `l + 1` the spikes of layer `l`.
    pub spike_counts: Vec<u64>,
    pub total_spikes: u64,
    /// Events drained from queues, counting re-reads by every pass.
    pub events_processed: u64,
    pub predicted: usize,
    /// Final potentials (plus bias) of the output layer, flattened.
    pub output_potentials: Vec<i64>,
    pub segments: Vec<SegmentCycles>,
    /// Highest fill of any physical queue over the whole run.
    pub peak_queue_fill: usize,
    pub queue_trace: Vec<QueuePeak>,
    /// Resolved word format of each bank, indexed like [`QueuePeak::layer`].
    pub encodings: Vec<EventEncoding>,
    /// Spike planes of every layer (only with `record_planes`).
    #[serde(skip)]
    pub planes: Vec<SpikeTrain>,
}

/// Argmax with ties going to the lowest index.
pub fn classify(potentials: &[i64]) -> usize {
    let mut best = 0;
    for (i, &v) in potentials.iter().enumerate() {
        if v > potentials[best] {
            best = i;
        }
    }
    best
}

struct Run<'a> {
    cfg: &'a EngineConfig,
    k: usize,
    fill: u64,
    timesteps: usize,
    acc: Accumulator,
    result: RunResult,
}

pub fn run_sample(net: &NetworkModel, input: &[SpikePlane], cfg: &EngineConfig) -> Result<RunResult, EngineError> {
    cfg.validate()?;
    let k = net.interlace_factor()?;
    check_input(net, input)?;
    let mut run = Run {
        cfg,
        k,
        fill: cfg.fill_cycles(k),
        timesteps: net.timesteps,
        acc: cfg.accumulator()?,
        result: RunResult {
            cycles: 0,
            spike_counts: vec![0; net.layers.len() + 1],
            total_spikes: 0,
            events_processed: 0,
            predicted: 0,
            output_potentials: Vec::new(),
            segments: Vec::new(),
            peak_queue_fill: 0,
            queue_trace: Vec::new(),
            encodings: Vec::new(),
            planes: Vec::new(),
        },
    };

    let mut bank = run.new_bank(net.input);
    for (t, plane) in input.iter().enumerate() {
        for (x, y, c) in plane.spikes() {
            bank.enqueue(&to_address_event(x, y, k, plane.width, plane.height, c, t)?)?;
        }
    }
    run.result.spike_counts[0] = bank.total_events() as u64;

    let last = net.layers.len() - 1;
    for (l, layer) in net.layers.iter().enumerate() {
        run.finish_bank(&bank, l, layer.input);
        let out_geom = layer.output_geometry()?;
        let mut out = run.new_bank(out_geom);
        let mut planes: SpikeTrain = if cfg.record_planes {
            (0..run.timesteps).map(|_| SpikePlane::new(out_geom)).collect()
        } else {
            Vec::new()
        };
        let potentials = match layer.kind {
            LayerKind::MaxPool { window } => {
                run.pool_layer(l, layer, window, &mut bank, &mut out, &mut planes, out_geom)?
            }
            _ => run.neuron_layer(l, layer, &mut bank, &mut out, &mut planes, out_geom, l == last)?,
        };
        run.result.spike_counts[l + 1] = out.total_events() as u64;
        if l == last {
            run.result.output_potentials = potentials;
            run.finish_bank(&out, l + 1, out_geom);
        }
        if cfg.record_planes {
            run.result.planes.push(planes);
        }
        bank = out;
    }
    let r = &mut run.result;
    r.total_spikes = r.spike_counts.iter().sum();
    r.predicted = classify(&r.output_potentials);
    Ok(run.result)
}

pub(crate) fn check_input(net: &NetworkModel, input: &[SpikePlane]) -> Result<(), EngineError> {
    if input.len() != net.timesteps {
        return Err(EngineError::TimestepMismatch {
            expected: net.timesteps,
            found: input.len(),
        });
    }
    if let Some(p) = input.iter().find(|p| p.geometry() != net.input) {
        return Err(EngineError::GeometryMismatch {
            expected: net.input,
            found: p.geometry(),
        });
    }
    Ok(())
}

impl Run<'_> {
    fn new_bank(&self, geom: Geometry) -> AeqBank {
        let enc = EventEncoding::for_map(geom.width, geom.height, self.k, self.cfg.encoding);
        AeqBank::new(
            self.cfg.parallel,
            self.k,
            geom.channels,
            self.timesteps,
            self.cfg.aeq_depth,
            enc,
        )
    }

    fn finish_bank(&mut self, bank: &AeqBank, index: usize, geom: Geometry) {
        let r = &mut self.result;
        r.encodings.push(*bank.encoding());
        r.peak_queue_fill = r.peak_queue_fill.max(bank.peak_fill());
        if self.cfg.record_queue_trace {
            for channel in 0..geom.channels {
                for timestep in 0..self.timesteps {
                    for (queue, &occ) in bank.queue_occupancy(channel, timestep).iter().enumerate() {
                        r.queue_trace.push(QueuePeak {
                            layer: index,
                            channel,
                            timestep,
                            queue,
                            max_occupancy: occ,
                        });
                    }
                }
            }
        }
    }

    /// Rewinds a segment, books its cycles and hands every event to `visit`.
    fn drain(
        &mut self,
        bank: &mut AeqBank,
        layer: usize,
        pass_channel: usize,
        in_channel: usize,
        t: usize,
        mut visit: impl FnMut(usize, usize),
    ) -> Result<(), EngineError> {
        bank.rewind(in_channel, t)?;
        let loads = bank.core_loads(in_channel, t);
        let events: usize = loads.iter().sum();
        let cycles = segment_cycles(&loads, self.fill);
        self.result.cycles += cycles;
        self.result.events_processed += events as u64;
        self.result.segments.push(SegmentCycles {
            layer,
            pass_channel,
            in_channel,
            timestep: t,
            events,
            cycles,
        });
        for core in 0..bank.cores() {
            for queue in 0..bank.queues_per_core() {
                while bank.pending(core, queue, in_channel, t) > 0 {
                    let ev = bank.dequeue(core, queue, in_channel, t)?;
                    let (x, y) = from_address_event(&ev, self.k);
                    visit(x, y);
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn neuron_layer(
        &mut self,
        l: usize,
        layer: &LayerSpec,
        bank: &mut AeqBank,
        out: &mut AeqBank,
        planes: &mut SpikeTrain,
        out_geom: Geometry,
        is_last: bool,
    ) -> Result<Vec<i64>, EngineError> {
        let v_t = layer.kind.threshold().expect("neuron layer has a threshold");
        let (ow, oh) = (out_geom.width, out_geom.height);
        let mut mem = MembraneBank::new(ow, oh, self.k, self.acc);
        let mut potentials = if is_last {
            vec![0; out_geom.neurons()]
        } else {
            Vec::new()
        };
        let mut pending: Option<(usize, usize, u64)> = None;
        let mut pass = 0u64;
        for co in 0..layer.out_channels {
            for t in 0..self.timesteps {
                for ci in 0..layer.in_channels() {
                    match layer.kind {
                        LayerKind::Conv { kernel, padding, .. } => {
                            let pad = if padding == Padding::Same { kernel / 2 } else { 0 };
                            let mem = &mut mem;
                            self.drain(bank, l, co, ci, t, |x, y| {
                                for ky in 0..kernel {
                                    let Some(oy) = (y + pad).checked_sub(ky).filter(|&v| v < oh) else {
                                        continue;
                                    };
                                    for kx in 0..kernel {
                                        let Some(ox) = (x + pad).checked_sub(kx).filter(|&v| v < ow) else {
                                            continue;
                                        };
                                        mem.accumulate(pass, ox, oy, layer.conv_weight(co, ci, ky, kx));
                                    }
                                }
                            })?;
                        }
                        LayerKind::Dense { .. } => {
                            let mem = &mut mem;
                            self.drain(bank, l, co, ci, t, |x, y| {
                                mem.accumulate(pass, 0, 0, layer.dense_weight(co, x, y, ci));
                            })?;
                        }
                        LayerKind::MaxPool { .. } => unreachable!(),
                    }
                }
                // the previous map is thresholded while this one was computed
                if let Some(prev) = pending.take() {
                    self.threshold_map(layer, v_t, prev, &mut mem, out, planes, out_geom, &mut potentials)?;
                }
                pending = Some((co, t, pass));
                pass += 1;
            }
        }
        if let Some(prev) = pending {
            self.threshold_map(layer, v_t, prev, &mut mem, out, planes, out_geom, &mut potentials)?;
        }
        Ok(potentials)
    }

    #[allow(clippy::too_many_arguments)]
    fn threshold_map(
        &mut self,
        layer: &LayerSpec,
        v_t: i32,
        (co, t, pass): (usize, usize, u64),
        mem: &mut MembraneBank,
        out: &mut AeqBank,
        planes: &mut SpikeTrain,
        g: Geometry,
        potentials: &mut [i64],
    ) -> Result<(), EngineError> {
        if t == 0 {
            mem.reset_states();
        }
        let bias = layer.bias_for(co);
        for y in 0..g.height {
            for x in 0..g.width {
                if mem.threshold_neuron(pass, x, y, v_t, bias, self.cfg.mode)? {
                    out.enqueue(&to_address_event(x, y, self.k, g.width, g.height, co, t)?)?;
                    if let Some(p) = planes.get_mut(t) {
                        p.set(x, y, co, true);
                    }
                }
                if !potentials.is_empty() && t + 1 == self.timesteps {
                    potentials[(y * g.width + x) * g.channels + co] = mem.potential(x, y) as i64 + bias as i64;
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn pool_layer(
        &mut self,
        l: usize,
        layer: &LayerSpec,
        window: usize,
        bank: &mut AeqBank,
        out: &mut AeqBank,
        planes: &mut SpikeTrain,
        g: Geometry,
    ) -> Result<Vec<i64>, EngineError> {
        let (ow, oh) = (g.width, g.height);
        let latch = self.cfg.mode == NeuronMode::MTtfsSingleSpike;
        // pooled outputs have no membrane; their spike counts stand in for potentials
        let mut counts = vec![0i64; g.neurons()];
        for c in 0..layer.in_channels() {
            let mut fired_before = vec![false; ow * oh];
            for t in 0..self.timesteps {
                let mut hit = vec![false; ow * oh];
                self.drain(bank, l, c, c, t, |x, y| {
                    let (ox, oy) = (x / window, y / window);
                    if ox < ow && oy < oh {
                        hit[oy * ow + ox] = true;
                    }
                })?;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let i = oy * ow + ox;
                        if !hit[i] || (latch && fired_before[i]) {
                            continue;
                        }
                        fired_before[i] = true;
                        counts[i * g.channels + c] += 1;
                        out.enqueue(&to_address_event(ox, oy, self.k, ow, oh, c, t)?)?;
                        if let Some(p) = planes.get_mut(t) {
                            p.set(ox, oy, c, true);
                        }
                    }
                }
            }
        }
        Ok(counts)
    }
}
