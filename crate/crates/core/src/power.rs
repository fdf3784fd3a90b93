//! Linear dynamic-power model, calibration and energy accounting.
//!
//! Each power category is an affine function of the design's resources and
//! activity:
//!
//! ```text
//! P_cat = offset + per_core * P + per_bram_half * halves
//!         + per_lutram_kbit * kbit + per_kevent_per_s * kev/s
//! ```
//!
//! Coefficients come from named profiles fitted by non-negative least squares
//! to published vector-less estimates. They are calibrated-model estimates,
//! not measurements.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::RunResult;
use crate::resources::MemoryPlan;

pub const BUILTIN_PROFILES: &str = include_str!("../../../profiles/power.json");

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("unknown power profile `{0}`")]
    UnknownProfile(String),
    #[error("malformed power profile file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CategoryCoefficients {
    pub offset: f64,
    pub per_core: f64,
    pub per_bram_half: f64,
    pub per_lutram_kbit: f64,
    pub per_kevent_per_s: f64,
}

impl CategoryCoefficients {
    pub fn eval(&self, x: &PowerInputs) -> f64 {
        self.offset
            + self.per_core * x.cores
            + self.per_bram_half * x.bram_halves
            + self.per_lutram_kbit * x.lutram_kbit
            + self.per_kevent_per_s * x.kevents_per_s
    }

    fn values(&self) -> [f64; 5] {
        [
            self.offset,
            self.per_core,
            self.per_bram_half,
            self.per_lutram_kbit,
            self.per_kevent_per_s,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerCoefficients {
    pub clock_mhz: f64,
    #[serde(default)]
    pub description: String,
    pub signals: CategoryCoefficients,
    pub brams: CategoryCoefficients,
    pub logic: CategoryCoefficients,
    pub clocks: CategoryCoefficients,
}

impl PowerCoefficients {
    pub fn validate(&self) -> Result<(), PowerError> {
        let all = [self.signals, self.brams, self.logic, self.clocks];
        if all
            .iter()
            .flat_map(|c| c.values())
            .any(|v| !(v >= 0.0 && v.is_finite()))
        {
            return Err(PowerError::Invalid("power coefficients must be finite and >= 0".into()));
        }
        if self.clock_mhz.is_nan() || self.clock_mhz <= 0.0 {
            return Err(PowerError::Invalid("profile clock must be > 0".into()));
        }
        Ok(())
    }

    pub fn estimate(&self, x: &PowerInputs) -> PowerBreakdown {
        PowerBreakdown {
            signals: self.signals.eval(x),
            brams: self.brams.eval(x),
            logic: self.logic.eval(x),
            clocks: self.clocks.eval(x),
        }
    }
}

/// Named coefficient sets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerProfiles {
    pub profiles: BTreeMap<String, PowerCoefficients>,
}

impl PowerProfiles {
    pub fn parse(json: &str) -> Result<Self, PowerError> {
        let p: PowerProfiles = serde_json::from_str(json)?;
        p.profiles.values().try_for_each(PowerCoefficients::validate)?;
        Ok(p)
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_PROFILES).expect("shipped power profiles are valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PowerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PowerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn get(&self, name: &str) -> Result<&PowerCoefficients, PowerError> {
        self.profiles
            .get(name)
            .ok_or_else(|| PowerError::UnknownProfile(name.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("profiles serialise");
        s.push('\n');
        s
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerInputs {
    pub cores: f64,
    pub bram_halves: f64,
    pub lutram_kbit: f64,
    pub kevents_per_s: f64,
}

impl PowerInputs {
    /// Resources from a memory plan, activity from a simulated run.
    pub fn new(plan: &MemoryPlan, clock_mhz: f64, activity: Option<&RunResult>) -> Self {
        let kevents_per_s = activity
            .filter(|r| r.cycles > 0)
            .map(|r| r.events_processed as f64 / (r.cycles as f64 / (clock_mhz * 1e6)) / 1e3)
            .unwrap_or(0.0);
        PowerInputs {
            cores: plan.design.parallel as f64,
            bram_halves: plan.bram_halves() as f64,
            lutram_kbit: plan.lutram_bits() as f64 / 1000.0,
            kevents_per_s,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerBreakdown {
    pub signals: f64,
    pub brams: f64,
    pub logic: f64,
    pub clocks: f64,
}

impl PowerBreakdown {
    pub fn total(&self) -> f64 {
        self.signals + self.brams + self.logic + self.clocks
    }
}

pub fn estimate_power(
    plan: &MemoryPlan,
    clock_mhz: f64,
    activity: Option<&RunResult>,
    coeffs: &PowerCoefficients,
) -> PowerBreakdown {
    coeffs.estimate(&PowerInputs::new(plan, clock_mhz, activity))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub power_w: f64,
    pub breakdown: Option<PowerBreakdown>,
    pub latency_s: f64,
    pub energy_j: f64,
    pub fps: f64,
    pub fps_per_watt: f64,
}

pub fn energy_and_fpsw(power_w: f64, cycles: u64, clock_mhz: f64) -> Result<EnergyReport, PowerError> {
    if power_w.is_nan() || power_w <= 0.0 || cycles == 0 || clock_mhz.is_nan() || clock_mhz <= 0.0 {
        return Err(PowerError::Invalid(format!(
            "energy needs power > 0, cycles >= 1 and clock > 0 (got {power_w} W, {cycles} cycles, {clock_mhz} MHz)"
        )));
    }
    let latency_s = cycles as f64 / (clock_mhz * 1e6);
    let fps = 1.0 / latency_s;
    Ok(EnergyReport {
        power_w,
        breakdown: None,
        latency_s,
        energy_j: power_w * latency_s,
        fps,
        fps_per_watt: fps / power_w,
    })
}

pub fn energy_report(breakdown: PowerBreakdown, cycles: u64, clock_mhz: f64) -> Result<EnergyReport, PowerError> {
    let mut r = energy_and_fpsw(breakdown.total(), cycles, clock_mhz)?;
    r.breakdown = Some(breakdown);
    Ok(r)
}

/// Published per-design power figures used for calibration.
pub mod reference {
    use crate::queueing::EncodingScheme;
    use crate::resources::{MemoryDesign, MemoryPlan, PlanOptions, Tech};

    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct PowerRow {
        pub name: &'static str,
        pub brams: f64,
        pub signals: f64,
        pub bram_w: f64,
        pub logic: f64,
        pub clocks: f64,
        pub total: f64,
    }

    const fn row(name: &'static str, brams: f64, s: f64, b: f64, l: f64, c: f64, total: f64) -> PowerRow {
        PowerRow {
            name,
            brams,
            signals: s,
            bram_w: b,
            logic: l,
            clocks: c,
            total,
        }
    }

    /// MNIST designs on the PYNQ-Z1 at 100 MHz.
    pub const PYNQ_MNIST: [PowerRow; 8] = [
        row("CNN-4", 14.5, 0.039, 0.012, 0.036, 0.035, 0.122),
        row("CNN-5", 11.0, 0.035, 0.012, 0.028, 0.032, 0.107),
        row("SNN-BRAM-4", 76.0, 0.041, 0.185, 0.027, 0.030, 0.283),
        row("SNN-LUTRAM-4", 40.0, 0.068, 0.099, 0.041, 0.034, 0.242),
        row("SNN-COMPR-4", 22.0, 0.068, 0.056, 0.043, 0.033, 0.200),
        row("SNN-BRAM-8", 116.0, 0.089, 0.277, 0.059, 0.055, 0.480),
        row("SNN-LUTRAM-8", 44.0, 0.146, 0.106, 0.091, 0.062, 0.405),
        row("SNN-COMPR-8", 44.0, 0.146, 0.106, 0.091, 0.062, 0.405),
    ];

    /// SNN designs on the ZCU102 at 200 MHz (SVHN and CIFAR-10 networks).
    pub const ZCU102_SNN: [(PowerRow, usize); 8] = [
        (row("SNN-SVHN-2", 82.0, 0.056, 0.096, 0.047, 0.031, 0.230), 2),
        (row("SNN-SVHN-4", 82.0, 0.100, 0.103, 0.087, 0.054, 0.344), 4),
        (row("SNN-SVHN-8", 100.0, 0.204, 0.163, 0.181, 0.104, 0.652), 8),
        (row("SNN-SVHN-16", 136.0, 0.404, 0.282, 0.358, 0.198, 1.242), 16),
        (row("SNN-CIFAR-2", 146.0, 0.057, 0.135, 0.046, 0.036, 0.274), 2),
        (row("SNN-CIFAR-4", 146.0, 0.103, 0.142, 0.088, 0.058, 0.391), 4),
        (row("SNN-CIFAR-8", 164.0, 0.203, 0.202, 0.181, 0.109, 0.695), 8),
        (row("SNN-CIFAR-16", 200.0, 0.399, 0.320, 0.356, 0.205, 1.280), 16),
    ];

    pub fn pynq_row(name: &str) -> Option<&'static PowerRow> {
        PYNQ_MNIST.iter().find(|r| r.name == name)
    }

    /// The MNIST accelerator variants: all-BRAM, LUTRAM membranes, and
    /// LUTRAM membranes with compressed queue words.
    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum Variant {
        Bram,
        Lutram,
        Compressed,
    }

    /// `(name, P, variant)` of the six MNIST SNN designs.
    pub const MNIST_DESIGNS: [(&str, usize, Variant); 6] = [
        ("SNN-BRAM-4", 4, Variant::Bram),
        ("SNN-LUTRAM-4", 4, Variant::Lutram),
        ("SNN-COMPR-4", 4, Variant::Compressed),
        ("SNN-BRAM-8", 8, Variant::Bram),
        ("SNN-LUTRAM-8", 8, Variant::Lutram),
        ("SNN-COMPR-8", 8, Variant::Compressed),
    ];

    /// Queue depth of the published MNIST designs for a given P.
    pub fn mnist_aeq_depth(parallel: usize) -> usize {
        match parallel {
            1 => 6100,
            2..=4 => 2048,
            _ => 750,
        }
    }

    pub fn mnist_design(parallel: usize, variant: Variant) -> (MemoryDesign, PlanOptions) {
        let scheme = match variant {
            Variant::Compressed => EncodingScheme::Compressed,
            _ => EncodingScheme::Plain,
        };
        // 28x28 maps, K = 3: four bits per window coordinate
        let aeq_bits = match scheme {
            EncodingScheme::Plain => 10,
            EncodingScheme::Compressed => 8,
        };
        let design = MemoryDesign {
            parallel,
            queues: 9,
            aeq_depth: mnist_aeq_depth(parallel),
            aeq_bits,
            membrane_depth: 256,
            membrane_bits: if parallel == 1 { 16 } else { 8 },
            weight_bits: 8,
            params: 20_568,
        };
        let opts = PlanOptions {
            aeq_tech: Some(Tech::Bram),
            membrane_tech: Some(if variant == Variant::Bram {
                Tech::Bram
            } else {
                Tech::Lutram
            }),
            ..PlanOptions::default()
        };
        (design, opts)
    }

    pub fn mnist_plan(parallel: usize, variant: Variant) -> MemoryPlan {
        let (d, o) = mnist_design(parallel, variant);
        crate::resources::plan_design(&d, &o).expect("reference design is valid")
    }
}

/// One calibration observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub name: String,
    pub inputs: PowerInputs,
    pub observed: PowerBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub name: String,
    pub predicted: PowerBreakdown,
    pub observed: PowerBreakdown,
}

impl Residual {
    pub fn total_error(&self) -> f64 {
        (self.predicted.total() - self.observed.total()) / self.observed.total()
    }
}

#[derive(Clone, Copy)]
enum Feature {
    Offset,
    Cores,
    BramHalves,
    LutramKbit,
}

/// Free coefficients per category. The event-rate term stays zero: the
/// published figures are vector-less and carry no activity information.
const SIGNALS: [Feature; 3] = [Feature::Offset, Feature::Cores, Feature::LutramKbit];
const BRAMS: [Feature; 3] = [Feature::Offset, Feature::BramHalves, Feature::LutramKbit];
const LOGIC: [Feature; 3] = [Feature::Offset, Feature::Cores, Feature::LutramKbit];
const CLOCKS: [Feature; 3] = [Feature::Offset, Feature::Cores, Feature::BramHalves];

fn feature(x: &PowerInputs, f: Feature) -> f64 {
    match f {
        Feature::Offset => 1.0,
        Feature::Cores => x.cores,
        Feature::BramHalves => x.bram_halves,
        Feature::LutramKbit => x.lutram_kbit,
    }
}

/// Non-negative least squares by enumerating active sets; exact for the
/// handful of features used here.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut best = (f64::INFINITY, DVector::zeros(n));
    for mask in 0u32..(1 << n) {
        let cols: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut x = DVector::zeros(n);
        if !cols.is_empty() {
            let sub = a.select_columns(&cols);
            let Ok(sol) = sub.svd(true, true).solve(b, 1e-12) else {
                continue;
            };
            if sol.iter().any(|&v| v < 0.0) {
                continue;
            }
            for (j, &c) in cols.iter().enumerate() {
                x[c] = sol[j];
            }
        }
        let sse = (a * &x - b).norm_squared();
        if sse < best.0 - 1e-15 {
            best = (sse, x);
        }
    }
    best.1
}

fn fit_category(
    rows: &[CalibrationRow],
    features: &[Feature],
    pick: impl Fn(&PowerBreakdown) -> f64,
) -> CategoryCoefficients {
    let a = DMatrix::from_fn(rows.len(), features.len(), |i, j| feature(&rows[i].inputs, features[j]));
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| pick(&r.observed)));
    let x = nnls(&a, &b);
    let mut c = CategoryCoefficients::default();
    for (f, v) in features.iter().zip(x.iter()) {
        // round away solver noise so the shipped file is stable
        let v = (v * 1e12).round() / 1e12;
        match f {
            Feature::Offset => c.offset = v,
            Feature::Cores => c.per_core = v,
            Feature::BramHalves => c.per_bram_half = v,
            Feature::LutramKbit => c.per_lutram_kbit = v,
        }
    }
    c
}

pub fn fit_profile(rows: &[CalibrationRow], clock_mhz: f64, description: &str) -> (PowerCoefficients, Vec<Residual>) {
    let coeffs = PowerCoefficients {
        clock_mhz,
        description: description.to_string(),
        signals: fit_category(rows, &SIGNALS, |p| p.signals),
        brams: fit_category(rows, &BRAMS, |p| p.brams),
        logic: fit_category(rows, &LOGIC, |p| p.logic),
        clocks: fit_category(rows, &CLOCKS, |p| p.clocks),
    };
    let residuals = rows
        .iter()
        .map(|r| Residual {
            name: r.name.clone(),
            predicted: coeffs.estimate(&r.inputs),
            observed: r.observed,
        })
        .collect();
    (coeffs, residuals)
}

fn observed(r: &reference::PowerRow) -> PowerBreakdown {
    PowerBreakdown {
        signals: r.signals,
        brams: r.bram_w,
        logic: r.logic,
        clocks: r.clocks,
    }
}

/// MNIST SNN rows with resources taken from the memory planner.
pub fn pynq_calibration_rows() -> Vec<CalibrationRow> {
    reference::MNIST_DESIGNS
        .iter()
        .map(|&(name, p, variant)| {
            let plan = reference::mnist_plan(p, variant);
            CalibrationRow {
                name: name.to_string(),
                inputs: PowerInputs::new(&plan, 100.0, None),
                observed: observed(reference::pynq_row(name).expect("reference row")),
            }
        })
        .collect()
}

/// SVHN/CIFAR SNN rows with the published BRAM counts and no LUTRAM.
pub fn zcu102_calibration_rows() -> Vec<CalibrationRow> {
    reference::ZCU102_SNN
        .iter()
        .map(|(r, p)| CalibrationRow {
            name: r.name.to_string(),
            inputs: PowerInputs {
                cores: *p as f64,
                bram_halves: 2.0 * r.brams,
                lutram_kbit: 0.0,
                kevents_per_s: 0.0,
            },
            observed: observed(r),
        })
        .collect()
}

/// Fits every shipped profile; returns the profiles and their residuals.
pub fn calibrate_builtin() -> (PowerProfiles, BTreeMap<String, Vec<Residual>>) {
    let mut profiles = PowerProfiles::default();
    let mut residuals = BTreeMap::new();
    let fits = [
        (
            "pynq-z1-100mhz",
            100.0,
            "PYNQ-Z1 at 100 MHz; fitted to the six MNIST SNN designs with planner resources",
            pynq_calibration_rows(),
        ),
        (
            "zcu102-200mhz",
            200.0,
            "ZCU102 at 200 MHz; fitted to the SVHN and CIFAR-10 SNN designs with published BRAM counts",
            zcu102_calibration_rows(),
        ),
    ];
    for (name, clock, desc, rows) in fits {
        let (c, r) = fit_profile(&rows, clock, desc);
        profiles.profiles.insert(name.to_string(), c);
        residuals.insert(name.to_string(), r);
    }
    (profiles, residuals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_unit_case() {
        let r = energy_and_fpsw(1.0, 100_000_000, 100.0).unwrap();
        assert!((r.energy_j - 1.0).abs() < 1e-12);
        assert!((r.fps_per_watt - 1.0).abs() < 1e-12);
        assert!(energy_and_fpsw(0.0, 1, 100.0).is_err());
        assert!(energy_and_fpsw(1.0, 0, 100.0).is_err());
    }

    #[test]
    fn zero_inputs_leave_offsets() {
        let c = CategoryCoefficients {
            offset: 0.01,
            per_core: 1.0,
            per_bram_half: 1.0,
            per_lutram_kbit: 1.0,
            per_kevent_per_s: 1.0,
        };
        let p = PowerCoefficients {
            clock_mhz: 100.0,
            description: String::new(),
            signals: c,
            brams: c,
            logic: c,
            clocks: c,
        };
        assert!((p.estimate(&PowerInputs::default()).total() - 0.04).abs() < 1e-12);
    }

    #[test]
    fn bram_category_is_linear_in_halves() {
        let c = CategoryCoefficients {
            offset: 0.02,
            per_bram_half: 0.001,
            ..Default::default()
        };
        let x = PowerInputs {
            bram_halves: 50.0,
            ..Default::default()
        };
        let x2 = PowerInputs {
            bram_halves: 100.0,
            ..Default::default()
        };
        assert!(((c.eval(&x2) - 0.02) - 2.0 * (c.eval(&x) - 0.02)).abs() < 1e-12);
    }

    #[test]
    fn nnls_matches_unconstrained_fit_when_feasible() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let b = DVector::from_vec(vec![3.0, 5.0, 7.0, 9.0]);
        let x = nnls(&a, &b);
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] - 2.0).abs() < 1e-9);
        // a negative slope is clamped to zero, leaving the mean as offset
        let b = DVector::from_vec(vec![9.0, 7.0, 5.0, 3.0]);
        let x = nnls(&a, &b);
        assert!((x[0] - 6.0).abs() < 1e-9 && x[1] == 0.0);
    }

    #[test]
    fn builtin_profiles_are_the_fitted_ones() {
        let (fitted, _) = calibrate_builtin();
        let shipped = PowerProfiles::builtin();
        assert_eq!(
            fitted.profiles.keys().collect::<Vec<_>>(),
            shipped.profiles.keys().collect::<Vec<_>>()
        );
        for (name, c) in &fitted.profiles {
            let s = shipped.get(name).unwrap();
            for (a, b) in [
                (c.signals, s.signals),
                (c.brams, s.brams),
                (c.logic, s.logic),
                (c.clocks, s.clocks),
            ] {
                for (u, v) in a.values().iter().zip(b.values()) {
                    assert!(
                        (u - v).abs() < 1e-9,
                        "{name}: {u} vs {v}; regenerate with `aeqsim calibrate --write`"
                    );
                }
            }
        }
    }
}
