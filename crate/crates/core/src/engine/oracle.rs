//! Brute-force reference: every neuron of every layer is evaluated at every
//! timestep by direct summation, timestep-major and without queues.

use crate::model::{LayerKind, LayerSpec, NetworkModel, Padding, SpikePlane, SpikeTrain};
use crate::neuron::{integrate, threshold, Accumulator, NeuronMode, NeuronState};

use super::{check_input, classify, EngineError};

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    /// `planes[l][t]` holds the output spikes of layer `l` at step `t`.
    pub planes: Vec<SpikeTrain>,
    pub output_potentials: Vec<i64>,
    pub predicted: usize,
}

pub fn run_dense_oracle(
    net: &NetworkModel,
    input: &[SpikePlane],
    timesteps: usize,
    mode: NeuronMode,
    acc: Accumulator,
) -> Result<OracleResult, EngineError> {
    if timesteps != net.timesteps {
        return Err(EngineError::TimestepMismatch {
            expected: net.timesteps,
            found: timesteps,
        });
    }
    check_input(net, input)?;
    let geoms = net.output_geometries();
    let mut states: Vec<Vec<NeuronState>> = geoms
        .iter()
        .map(|g| vec![NeuronState::default(); g.neurons()])
        .collect();
    let mut planes: Vec<SpikeTrain> = geoms.iter().map(|_| Vec::with_capacity(timesteps)).collect();

    for t in 0..timesteps {
        for (l, layer) in net.layers.iter().enumerate() {
            let inp = if l == 0 { &input[t] } else { &planes[l - 1][t] };
            let g = geoms[l];
            let mut out = SpikePlane::new(g);
            for c in 0..g.channels {
                for y in 0..g.height {
                    for x in 0..g.width {
                        let i = (y * g.width + x) * g.channels + c;
                        let s = &mut states[l][i];
                        let spike = match layer.kind {
                            LayerKind::MaxPool { window } => {
                                let any = (0..window)
                                    .flat_map(|dy| (0..window).map(move |dx| (dx, dy)))
                                    .any(|(dx, dy)| inp.get(x * window + dx, y * window + dy, c));
                                let spike = any && !(mode == NeuronMode::MTtfsSingleSpike && s.has_spiked);
                                if spike {
                                    s.has_spiked = true;
                                    s.v_m += 1;
                                }
                                spike
                            }
                            _ => {
                                let sum = weighted_input(layer, inp, x, y, c);
                                let v_t = layer.kind.threshold().expect("neuron layer");
                                let (next, spike) = threshold(integrate(*s, sum, acc), v_t, layer.bias_for(c), mode);
                                *s = next;
                                spike
                            }
                        };
                        if spike {
                            out.set(x, y, c, true);
                        }
                    }
                }
            }
            planes[l].push(out);
        }
    }

    let last = net.layers.len() - 1;
    let g = geoms[last];
    let layer = &net.layers[last];
    let output_potentials: Vec<i64> = states[last]
        .iter()
        .enumerate()
        .map(|(i, s)| match layer.kind {
            LayerKind::MaxPool { .. } => s.v_m as i64,
            _ => s.v_m as i64 + layer.bias_for(i % g.channels) as i64,
        })
        .collect();
    let predicted = classify(&output_potentials);
    Ok(OracleResult {
        planes,
        output_potentials,
        predicted,
    })
}

/// Sum of the weights of all presynaptic neurons of `(x, y, c)` that spiked.
fn weighted_input(layer: &LayerSpec, inp: &SpikePlane, x: usize, y: usize, c: usize) -> i64 {
    let mut sum = 0i64;
    match layer.kind {
        LayerKind::Conv { kernel, padding, .. } => {
            let pad = if padding == Padding::Same { kernel / 2 } else { 0 };
            for ci in 0..inp.channels {
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let (ix, iy) = ((x + kx).wrapping_sub(pad), (y + ky).wrapping_sub(pad));
                        if ix < inp.width && iy < inp.height && inp.get(ix, iy, ci) {
                            sum += layer.conv_weight(c, ci, ky, kx) as i64;
                        }
                    }
                }
            }
        }
        LayerKind::Dense { .. } => {
            for ci in 0..inp.channels {
                for iy in 0..inp.height {
                    for ix in 0..inp.width {
                        if inp.get(ix, iy, ci) {
                            sum += layer.dense_weight(c, ix, iy, ci) as i64;
                        }
                    }
                }
            }
        }
        LayerKind::MaxPool { .. } => unreachable!(),
    }
    sum
}
