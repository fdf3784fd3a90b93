//! Interlaced, double-buffered membrane memory.
//!
//! Output neuron `(x, y)` lives in memory `(y mod K) * K + (x mod K)` at
//! address `(y / K) * grid_w + x / K`. Any `K x K` block of neighbours
//! therefore touches each memory at most once and all `K^2` updates of one
//! event can be issued in the same cycle.
//!
//! Every word holds the stored neuron state plus two accumulation buffers.
//! Compute pass `p` writes buffer `p % 2` and tags the word with `p`;
//! thresholding of pass `p` reads the same buffer while pass `p + 1` is
//! already writing the other one.

use crate::neuron::{integrate, threshold, Accumulator, NeuronMode, NeuronState};

use super::EngineError;

#[derive(Clone, Copy, Debug, Default)]
struct Word {
    state: NeuronState,
    delta: [i64; 2],
    /// Pass that last wrote each buffer, offset by one (0 = never written).
    tag: [u64; 2],
}

#[derive(Clone, Debug)]
pub struct MembraneBank {
    k: usize,
    width: usize,
    height: usize,
    grid_w: usize,
    depth: usize,
    acc: Accumulator,
    memories: Vec<Vec<Word>>,
}

/// Memory index and address of output neuron `(x, y)`.
#[inline]
pub fn locate(x: usize, y: usize, k: usize, grid_w: usize) -> (usize, usize) {
    ((y % k) * k + x % k, (y / k) * grid_w + x / k)
}

/// Memories touched by the `K x K` block with top-left corner `(x0, y0)`.
pub fn placement_memories(x0: usize, y0: usize, k: usize, grid_w: usize) -> Vec<usize> {
    let mut mems = Vec::with_capacity(k * k);
    for dy in 0..k {
        for dx in 0..k {
            mems.push(locate(x0 + dx, y0 + dy, k, grid_w).0);
        }
    }
    mems
}

impl MembraneBank {
    /// Bank for one `width x height` output channel.
    pub fn new(width: usize, height: usize, k: usize, acc: Accumulator) -> Self {
        let grid_w = width.div_ceil(k);
        let depth = grid_w * height.div_ceil(k);
        MembraneBank {
            k,
            width,
            height,
            grid_w,
            depth,
            acc,
            memories: vec![vec![Word::default(); depth]; k * k],
        }
    }

    pub fn memories(&self) -> usize {
        self.k * self.k
    }

    /// Words per memory.
    pub fn depth(&self) -> usize {
        self.depth
    }

    #[inline]
    fn word(&mut self, x: usize, y: usize) -> &mut Word {
        debug_assert!(x < self.width && y < self.height);
        let (m, a) = locate(x, y, self.k, self.grid_w);
        &mut self.memories[m][a]
    }

    /// Adds `weight` to the compute buffer of pass `pass`.
    #[inline]
    pub fn accumulate(&mut self, pass: u64, x: usize, y: usize, weight: i32) {
        let b = (pass % 2) as usize;
        let w = self.word(x, y);
        if w.tag[b] != pass + 1 {
            w.tag[b] = pass + 1;
            w.delta[b] = 0;
        }
        w.delta[b] += weight as i64;
    }

    /// Reads the contribution accumulated by pass `pass`.
    pub fn read_delta(&mut self, pass: u64, x: usize, y: usize) -> Result<i64, EngineError> {
        let b = (pass % 2) as usize;
        let w = self.word(x, y);
        match w.tag[b] {
            t if t == pass + 1 => Ok(w.delta[b]),
            t if t < pass + 1 => Ok(0),
            t => Err(EngineError::BufferHazard {
                x,
                y,
                read_pass: pass,
                written_by: t - 1,
            }),
        }
    }

    /// Clears the stored neuron states (not the accumulation buffers).
    pub fn reset_states(&mut self) {
        for mem in &mut self.memories {
            for w in mem.iter_mut() {
                w.state = NeuronState::default();
            }
        }
    }

    /// Integrates the delta of `pass` into neuron `(x, y)` and thresholds it.
    pub fn threshold_neuron(
        &mut self,
        pass: u64,
        x: usize,
        y: usize,
        v_t: i32,
        bias: i32,
        mode: NeuronMode,
    ) -> Result<bool, EngineError> {
        let delta = self.read_delta(pass, x, y)?;
        let acc = self.acc;
        let w = self.word(x, y);
        let (next, spike) = threshold(integrate(w.state, delta, acc), v_t, bias, mode);
        w.state = next;
        Ok(spike)
    }

    pub fn potential(&mut self, x: usize, y: usize) -> i32 {
        self.word(x, y).state.v_m
    }
}
