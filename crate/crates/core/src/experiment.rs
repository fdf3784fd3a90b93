//! End-to-end runs: load model and data, simulate, cost, and write CSVs.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{load_dataset, ImageSet};
use crate::engine::histogram::{run_samples, summarise};
use crate::engine::{EngineConfig, LatencyReport, RunResult};
use crate::model::{load_model_file, NetworkModel};
use crate::power::{energy_report, estimate_power, EnergyReport, PowerProfiles};
use crate::resources::{plan_design, MemoryDesign, MemoryPlan, MemoryPolicy, PlanOptions};
use crate::Error;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "AEQSIM_OUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub engine: EngineConfig,
    pub policy: MemoryPolicy,
    pub occupancy_threshold: f64,
    /// Overrides the derived membrane depth.
    pub membrane_depth: Option<usize>,
    pub profile: String,
    /// Profile file; the shipped profiles are used when absent.
    pub profiles_path: Option<PathBuf>,
    /// Samples to run; all when absent.
    pub samples: Option<usize>,
    /// Shuffle the dataset with `seed` before taking `samples`.
    pub shuffle: bool,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub workers: usize,
    pub out_dir: PathBuf,
    pub histogram_bins: usize,
    pub queue_trace: bool,
}

impl ExperimentConfig {
    pub fn new(model: impl Into<PathBuf>, dataset: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            model: model.into(),
            dataset: dataset.into(),
            engine: EngineConfig::default(),
            policy: MemoryPolicy::AllBram,
            occupancy_threshold: 0.25,
            membrane_depth: None,
            profile: "pynq-z1-100mhz".into(),
            profiles_path: None,
            samples: None,
            shuffle: false,
            seed: 0,
            workers: 0,
            out_dir: default_out_dir(),
            histogram_bins: 20,
            queue_trace: false,
        }
    }
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Picks sample indices: the first `n`, or `n` after a seeded shuffle.
pub fn select_samples(len: usize, n: Option<usize>, shuffle: bool, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if shuffle {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    idx.truncate(n.unwrap_or(len).min(len));
    idx
}

pub fn memory_plan(net: &NetworkModel, cfg: &ExperimentConfig) -> Result<MemoryPlan, Error> {
    let mut design = MemoryDesign::from_model(net, &cfg.engine)?;
    if let Some(d) = cfg.membrane_depth {
        design.membrane_depth = d;
    }
    let opts = PlanOptions {
        policy: cfg.policy,
        occupancy_threshold: cfg.occupancy_threshold,
        ..PlanOptions::default()
    };
    Ok(plan_design(&design, &opts)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub samples: usize,
    pub accuracy: f64,
    pub min_cycles: u64,
    pub max_cycles: u64,
    pub mean_cycles: f64,
    pub mean_power_w: f64,
    pub mean_energy_mj: f64,
    pub mean_fps_per_watt: f64,
    pub total_brams: f64,
    pub files: Vec<PathBuf>,
}

pub struct ExperimentOutput {
    pub report: LatencyReport,
    pub energy: Vec<EnergyReport>,
    pub plan: MemoryPlan,
    pub summary: ExperimentSummary,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, Error> {
    cfg.engine.validate()?;
    let net = load_model_file(&cfg.model)?;
    let data = load_dataset(&cfg.dataset)?;
    let profiles = match &cfg.profiles_path {
        Some(p) => PowerProfiles::load(p)?,
        None => PowerProfiles::builtin(),
    };
    let coeffs = profiles.get(&cfg.profile)?.clone();
    let plan = memory_plan(&net, cfg)?;
    let indices = select_samples(data.len(), cfg.samples, cfg.shuffle, cfg.seed);
    if indices.is_empty() {
        return Err(Error::Input("no samples selected".into()));
    }

    let engine_cfg = EngineConfig {
        record_queue_trace: cfg.queue_trace,
        ..cfg.engine.clone()
    };
    let runs = run_pool(cfg.workers, || run_samples(&net, &data, &indices, &engine_cfg))??;

    let clock = engine_cfg.clock_mhz;
    let energy: Vec<EnergyReport> = runs
        .iter()
        .map(|(_, r)| energy_report(estimate_power(&plan, clock, Some(r), &coeffs), r.cycles, clock))
        .collect::<Result<_, _>>()?;
    let report = summarise(runs.iter().map(|(rec, _)| *rec).collect(), cfg.histogram_bins);

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut files = vec![
        write_latency(&cfg.out_dir, &report)?,
        write_energy(&cfg.out_dir, &report, &energy)?,
        write_resources(&cfg.out_dir, &plan)?,
        write_per_class(&cfg.out_dir, &report)?,
        write_histogram(&cfg.out_dir, &report)?,
    ];
    if cfg.queue_trace {
        files.push(write_queue_trace(&cfg.out_dir, &runs)?);
    }

    let n = report.records.len() as f64;
    let summary = ExperimentSummary {
        samples: report.records.len(),
        accuracy: report.accuracy(),
        min_cycles: report.histogram.min,
        max_cycles: report.histogram.max,
        mean_cycles: report.records.iter().map(|r| r.cycles as f64).sum::<f64>() / n,
        mean_power_w: energy.iter().map(|e| e.power_w).sum::<f64>() / n,
        mean_energy_mj: energy.iter().map(|e| e.energy_j * 1e3).sum::<f64>() / n,
        mean_fps_per_watt: energy.iter().map(|e| e.fps_per_watt).sum::<f64>() / n,
        total_brams: plan.total_brams(),
        files: Vec::new(),
    };
    files.push(write_manifest(cfg, &net, &data, &plan, &runs, &summary)?);
    let summary = ExperimentSummary { files, ..summary };
    Ok(ExperimentOutput {
        report,
        energy,
        plan,
        summary,
    })
}

/// Runs `f` on a pool of `workers` threads (or the global pool for 0).
pub fn run_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, Error> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    Ok(pool.install(f))
}

fn csv_writer(dir: &Path, name: &str) -> Result<(csv::Writer<File>, PathBuf), Error> {
    let path = dir.join(name);
    let w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    Ok((w, path))
}

fn write_rows<I, R>(dir: &Path, name: &str, header: &[&str], rows: I) -> Result<PathBuf, Error>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let (mut w, path) = csv_writer(dir, name)?;
    w.write_record(header).map_err(|e| Error::csv(&path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn write_latency(dir: &Path, report: &LatencyReport) -> Result<PathBuf, Error> {
    write_rows(
        dir,
        "latency.csv",
        &["sample_id", "cycles", "spikes", "predicted", "label"],
        report.records.iter().map(|r| {
            [
                r.sample_id.to_string(),
                r.cycles.to_string(),
                r.spikes.to_string(),
                r.predicted.to_string(),
                r.label.to_string(),
            ]
        }),
    )
}

pub fn write_energy(dir: &Path, report: &LatencyReport, energy: &[EnergyReport]) -> Result<PathBuf, Error> {
    write_rows(
        dir,
        "energy.csv",
        &["sample_id", "power_w", "energy_mj", "fps_per_watt"],
        report.records.iter().zip(energy).map(|(r, e)| {
            [
                r.sample_id.to_string(),
                format!("{:.6}", e.power_w),
                format!("{:.9}", e.energy_j * 1e3),
                format!("{:.3}", e.fps_per_watt),
            ]
        }),
    )
}

pub fn write_resources(dir: &Path, plan: &MemoryPlan) -> Result<PathBuf, Error> {
    write_rows(
        dir,
        "resources.csv",
        &[
            "structure",
            "tech",
            "brams",
            "lutram_bits",
            "depth",
            "width",
            "replication",
        ],
        plan.entries.iter().map(|e| {
            [
                e.structure.name().to_string(),
                e.tech.name().to_string(),
                format!("{:.1}", e.brams),
                e.lutram_bits.to_string(),
                e.depth.to_string(),
                e.width.to_string(),
                e.replication.to_string(),
            ]
        }),
    )
}

pub fn write_per_class(dir: &Path, report: &LatencyReport) -> Result<PathBuf, Error> {
    write_rows(
        dir,
        "per_class.csv",
        &["class", "mean_spikes"],
        report
            .per_class
            .iter()
            .map(|c| [c.class.to_string(), format!("{:.3}", c.mean_spikes)]),
    )
}

pub fn write_histogram(dir: &Path, report: &LatencyReport) -> Result<PathBuf, Error> {
    let h = &report.histogram;
    write_rows(
        dir,
        "histogram.csv",
        &["bin_start", "bin_end", "count"],
        h.counts.iter().enumerate().map(|(i, c)| {
            [
                h.bin_start(i).to_string(),
                (h.bin_start(i) + h.bin_width - 1).to_string(),
                c.to_string(),
            ]
        }),
    )
}

pub fn write_queue_trace(dir: &Path, runs: &[(crate::engine::SampleRecord, RunResult)]) -> Result<PathBuf, Error> {
    write_rows(
        dir,
        "queue_trace.csv",
        &["sample_id", "layer", "channel", "timestep", "queue", "max_occupancy"],
        runs.iter().flat_map(|(rec, r)| {
            r.queue_trace.iter().map(move |q| {
                [
                    rec.sample_id.to_string(),
                    q.layer.to_string(),
                    q.channel.to_string(),
                    q.timestep.to_string(),
                    q.queue.to_string(),
                    q.max_occupancy.to_string(),
                ]
            })
        }),
    )
}

fn write_manifest(
    cfg: &ExperimentConfig,
    net: &NetworkModel,
    data: &ImageSet,
    plan: &MemoryPlan,
    runs: &[(crate::engine::SampleRecord, RunResult)],
    summary: &ExperimentSummary,
) -> Result<PathBuf, Error> {
    let encodings = runs.first().map(|(_, r)| r.encodings.clone()).unwrap_or_default();
    let doc = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "tunables": {
            "parallel": cfg.engine.parallel,
            "aeq_depth": plan.design.aeq_depth,
            "timesteps": net.timesteps,
            "encoding": cfg.engine.encoding,
            "policy": cfg.policy,
            "profile": cfg.profile,
            "seed": cfg.seed,
            "pipeline_fill": cfg.engine.fill_cycles(net.interlace_factor().unwrap_or(1)),
        },
        "model": {
            "name": net.name,
            "architecture": net.architecture(),
            "params": net.param_count(),
            "timesteps": net.timesteps,
        },
        "dataset": { "samples_available": data.len(), "geometry": data.geometry },
        "bank_encodings": encodings,
        "memory_plan": {
            "design": plan.design,
            "entries": plan.entries,
            "total_brams": plan.total_brams(),
            "total_brams_without_rom": plan.total_brams_without_rom(),
        },
        "summary": summary,
    });
    let path = cfg.out_dir.join("manifest.json");
    let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let text = serde_json::to_string_pretty(&doc).expect("manifest serialises");
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
