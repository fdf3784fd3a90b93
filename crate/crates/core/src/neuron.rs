//! Integrate-and-fire dynamics and input spike encoding.

use serde::{Deserialize, Serialize};

use crate::model::{Geometry, SpikePlane, SpikeTrain};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeuronMode {
    /// Fire when above threshold and reset the membrane to zero.
    IfReset,
    /// Fire at most once per sample, never reset.
    #[default]
    MTtfsSingleSpike,
    /// Fire on every step above threshold, never reset.
    MTtfsContinuous,
}

impl NeuronMode {
    pub const ALL: [NeuronMode; 3] = [
        NeuronMode::IfReset,
        NeuronMode::MTtfsSingleSpike,
        NeuronMode::MTtfsContinuous,
    ];
}

/// Saturating signed accumulator of a fixed bit width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accumulator {
    bits: u32,
}

impl Default for Accumulator {
    fn default() -> Self {
        Accumulator { bits: 16 }
    }
}

impl Accumulator {
    /// `bits` must lie in `[2, 32]`.
    pub fn new(bits: u32) -> Option<Self> {
        (2..=32).contains(&bits).then_some(Accumulator { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn min(&self) -> i64 {
        -(1i64 << (self.bits - 1))
    }

    pub fn max(&self) -> i64 {
        (1i64 << (self.bits - 1)) - 1
    }

    #[inline]
    pub fn saturate(&self, v: i64) -> i32 {
        v.clamp(self.min(), self.max()) as i32
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NeuronState {
    pub v_m: i32,
    pub has_spiked: bool,
}

/// Adds the sum of the weights of all presynaptic neurons that spiked.
#[inline]
pub fn integrate(state: NeuronState, weighted_sum: i64, acc: Accumulator) -> NeuronState {
    NeuronState {
        v_m: acc.saturate(state.v_m as i64 + weighted_sum),
        has_spiked: state.has_spiked,
    }
}

/// Compares `v_m + bias` strictly against `v_t`. The bias is not stored.
#[inline]
pub fn threshold(state: NeuronState, v_t: i32, bias: i32, mode: NeuronMode) -> (NeuronState, bool) {
    let above = state.v_m as i64 + bias as i64 > v_t as i64;
    match mode {
        NeuronMode::IfReset if above => (
            NeuronState {
                v_m: 0,
                has_spiked: true,
            },
            true,
        ),
        NeuronMode::MTtfsSingleSpike if above && !state.has_spiked => (
            NeuronState {
                has_spiked: true,
                ..state
            },
            true,
        ),
        NeuronMode::MTtfsContinuous if above => (
            NeuronState {
                has_spiked: true,
                ..state
            },
            true,
        ),
        _ => (state, false),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputScheme {
    /// One spike at t = 0 wherever `pixel > v_t_in`.
    #[default]
    ThresholdOnce,
    /// Each pixel drives an input neuron with a constant current.
    ConstantCurrent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEncoding {
    pub scheme: InputScheme,
    pub v_t_in: i32,
}

impl Default for InputEncoding {
    fn default() -> Self {
        InputEncoding {
            scheme: InputScheme::ThresholdOnce,
            v_t_in: 127,
        }
    }
}

/// Turns an 8-bit image (`pixels[(c * H + y) * W + x]`) into `timesteps` spike planes.
pub fn encode_input(
    pixels: &[u8],
    geom: Geometry,
    enc: InputEncoding,
    timesteps: usize,
    mode: NeuronMode,
    acc: Accumulator,
) -> SpikeTrain {
    assert_eq!(pixels.len(), geom.neurons(), "image size does not match geometry");
    let mut planes: SpikeTrain = (0..timesteps).map(|_| SpikePlane::new(geom)).collect();
    if timesteps == 0 {
        return planes;
    }
    let (w, h) = (geom.width, geom.height);
    let coord = |i: usize| (i % w, (i / w) % h, i / (w * h));
    match enc.scheme {
        InputScheme::ThresholdOnce => {
            for (i, &p) in pixels.iter().enumerate() {
                if p as i32 > enc.v_t_in {
                    let (x, y, c) = coord(i);
                    planes[0].set(x, y, c, true);
                }
            }
        }
        InputScheme::ConstantCurrent => {
            for (i, &p) in pixels.iter().enumerate() {
                let (x, y, c) = coord(i);
                let mut state = NeuronState::default();
                for plane in planes.iter_mut() {
                    state = integrate(state, p as i64, acc);
                    let (next, spike) = threshold(state, enc.v_t_in, 0, mode);
                    state = next;
                    if spike {
                        plane.set(x, y, c, true);
                    }
                }
            }
        }
    }
    planes
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ACC: Accumulator = Accumulator { bits: 16 };

    #[test]
    fn integrate_examples() {
        let s = integrate(NeuronState::default(), 5, ACC);
        assert_eq!(s.v_m, 5);
        let s = integrate(
            NeuronState {
                v_m: 3,
                has_spiked: true,
            },
            0,
            ACC,
        );
        assert_eq!(
            s,
            NeuronState {
                v_m: 3,
                has_spiked: true
            }
        );
        let top = NeuronState {
            v_m: 32767,
            has_spiked: false,
        };
        assert_eq!(integrate(top, 1, ACC).v_m, 32767);
    }

    #[test]
    fn threshold_examples() {
        let s = NeuronState {
            v_m: 8,
            has_spiked: false,
        };
        assert_eq!(
            threshold(s, 5, 0, NeuronMode::IfReset),
            (
                NeuronState {
                    v_m: 0,
                    has_spiked: true
                },
                true
            )
        );

        let latched = NeuronState {
            v_m: 8,
            has_spiked: true,
        };
        assert_eq!(threshold(latched, 5, 0, NeuronMode::MTtfsSingleSpike), (latched, false));

        for mode in NeuronMode::ALL {
            let at = NeuronState {
                v_m: 5,
                has_spiked: false,
            };
            assert!(!threshold(at, 5, 0, mode).1, "{mode:?} fired at v_m == v_t");
        }
        // bias takes part in the comparison but is not stored
        let (after, spike) = threshold(
            NeuronState {
                v_m: 4,
                has_spiked: false,
            },
            5,
            2,
            NeuronMode::MTtfsContinuous,
        );
        assert!(spike);
        assert_eq!(after.v_m, 4);
    }

    #[test]
    fn input_encoding_examples() {
        let g = Geometry::new(4, 3, 1);
        for scheme in [InputScheme::ThresholdOnce, InputScheme::ConstantCurrent] {
            let enc = InputEncoding { scheme, v_t_in: 127 };
            let planes = encode_input(&[0; 12], g, enc, 4, NeuronMode::MTtfsSingleSpike, ACC);
            assert!(planes.iter().all(|p| p.count() == 0));
        }
        let mut img = [0u8; 12];
        img[6] = 200;
        let enc = InputEncoding {
            scheme: InputScheme::ThresholdOnce,
            v_t_in: 128,
        };
        let planes = encode_input(&img, g, enc, 4, NeuronMode::MTtfsSingleSpike, ACC);
        assert_eq!(planes[0].spikes().collect::<Vec<_>>(), vec![(2, 1, 0)]);
        assert_eq!(planes[1..].iter().map(SpikePlane::count).sum::<usize>(), 0);
    }

    proptest! {
        #[test]
        fn saturation_matches_wide_addition(v in -40000i64..40000, sum in -100000i64..100000, bits in 2u32..=32) {
            let acc = Accumulator::new(bits).unwrap();
            let start = NeuronState { v_m: acc.saturate(v), has_spiked: false };
            let wide = start.v_m as i128 + sum as i128;
            let expected = wide.clamp(acc.min() as i128, acc.max() as i128) as i32;
            prop_assert_eq!(integrate(start, sum, acc).v_m, expected);
        }

        #[test]
        fn constant_current_first_spike(p in 0u8..=255, v_t_in in 0i32..600) {
            let g = Geometry::new(1, 1, 1);
            let enc = InputEncoding { scheme: InputScheme::ConstantCurrent, v_t_in };
            let planes = encode_input(&[p], g, enc, 4, NeuronMode::MTtfsSingleSpike, ACC);
            let first = (0..4).find(|&t| (t as i32 + 1) * p as i32 > v_t_in);
            for (t, plane) in planes.iter().enumerate() {
                prop_assert_eq!(plane.get(0, 0, 0), Some(t) == first);
            }
        }

        #[test]
        fn binary_inputs_integrate_to_dot_product(
            pairs in prop::collection::vec((-128i32..128, any::<bool>()), 0..64)
        ) {
            let selected: i64 = pairs.iter().filter(|(_, x)| *x).map(|(w, _)| *w as i64).sum();
            let dot: i64 = pairs.iter().map(|(w, x)| *w as i64 * *x as i64).sum();
            let acc = Accumulator::new(32).unwrap();
            prop_assert_eq!(integrate(NeuronState::default(), selected, acc).v_m as i64, dot);
        }

        #[test]
        fn extra_excitatory_spike_never_delays_first_spike(
            weights in prop::collection::vec(0i32..20, 1..8),
            times in prop::collection::vec(0usize..4, 1..8),
            extra_w in 0i32..20,
            extra_t in 0usize..4,
            v_t in 1i32..60,
        ) {
            let first_spike = |inputs: &[(i32, usize)]| {
                let mut s = NeuronState::default();
                for t in 0..4 {
                    let sum: i64 = inputs.iter().filter(|(_, ti)| *ti == t).map(|(w, _)| *w as i64).sum();
                    s = integrate(s, sum, ACC);
                    let (next, spike) = threshold(s, v_t, 0, NeuronMode::MTtfsSingleSpike);
                    s = next;
                    if spike {
                        return Some(t);
                    }
                }
                None
            };
            let base: Vec<(i32, usize)> = weights.iter().copied().zip(times.iter().copied()).collect();
            let mut more = base.clone();
            more.push((extra_w, extra_t));
            match (first_spike(&base), first_spike(&more)) {
                (Some(a), Some(b)) => prop_assert!(b <= a),
                (Some(_), None) => prop_assert!(false, "extra spike suppressed firing"),
                _ => {}
            }
        }

        #[test]
        fn single_spike_mode_latches(sums in prop::collection::vec(-50i64..50, 1..12), v_t in 1i32..40) {
            let mut s = NeuronState::default();
            let mut spikes = 0;
            for sum in sums {
                s = integrate(s, sum, ACC);
                let (next, spike) = threshold(s, v_t, 0, NeuronMode::MTtfsSingleSpike);
                prop_assert!(!(s.has_spiked && !next.has_spiked));
                prop_assert_eq!(next.v_m, s.v_m);
                s = next;
                spikes += spike as u32;
            }
            prop_assert!(spikes <= 1);
        }
    }
}
