//! End-to-end runs of the shipped MNIST model on the committed test subset.

use std::path::PathBuf;
use std::sync::OnceLock;

use aeqsim::dataset::{load_dataset, ImageSet};
use aeqsim::engine::histogram::run_samples;
use aeqsim::experiment::{run_experiment, ExperimentConfig};
use aeqsim::model::LayerKind;
use aeqsim::neuron::{encode_input, NeuronMode};
use aeqsim::queueing::QueueError;
use aeqsim::resources::{plan_memories, PlanOptions, Structure};
use aeqsim::{load_model_file, run_dense_oracle, run_sample, EncodingScheme, EngineConfig, NetworkModel};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture() -> &'static (NetworkModel, ImageSet) {
    static F: OnceLock<(NetworkModel, ImageSet)> = OnceLock::new();
    F.get_or_init(|| {
        let net = load_model_file(root().join("models/mnist.json")).unwrap();
        let data = load_dataset(root().join("data/mnist-sample")).unwrap();
        (net, data)
    })
}

#[test]
fn shipped_model_matches_the_reference_architecture() {
    let (net, data) = fixture();
    assert_eq!(net.architecture(), "32C3-32C3-P3-10C3-10");
    assert_eq!(net.param_count(), 20_568);
    assert_eq!(net.interlace_factor().unwrap(), 3);
    assert_eq!(data.len(), 1000);
    assert_eq!(data.geometry, net.input);
}

#[test]
fn engine_agrees_with_dense_oracle_on_mnist() {
    let (net, data) = fixture();
    for mode in [NeuronMode::MTtfsSingleSpike, NeuronMode::IfReset] {
        let cfg = EngineConfig {
            mode,
            parallel: 4,
            record_planes: true,
            ..EngineConfig::default()
        };
        for i in 0..5 {
            let input = encode_input(
                data.image(i),
                data.geometry,
                cfg.input,
                net.timesteps,
                mode,
                cfg.accumulator().unwrap(),
            );
            let e = run_sample(net, &input, &cfg).unwrap();
            let o = run_dense_oracle(net, &input, net.timesteps, mode, cfg.accumulator().unwrap()).unwrap();
            assert_eq!(e.planes, o.planes, "sample {i}, {mode:?}");
            assert_eq!(e.output_potentials, o.output_potentials);
            assert_eq!(e.predicted, o.predicted);
        }
    }
}

#[test]
fn cycles_respect_the_per_segment_bound() {
    let (net, data) = fixture();
    let idx: Vec<usize> = (0..20).collect();
    for p in [1, 2, 4, 8, 16] {
        let cfg = EngineConfig {
            parallel: p,
            ..EngineConfig::default()
        };
        for (rec, r) in run_samples(net, data, &idx, &cfg).unwrap() {
            let fill = cfg.fill_cycles(3);
            let bound: u64 = r
                .segments
                .iter()
                .map(|s| (s.events as u64).div_ceil(p as u64) + fill)
                .sum();
            assert_eq!(r.cycles, bound, "sample {}", rec.sample_id);
            assert!(r.cycles >= r.events_processed.div_ceil(p as u64));

            // The first layer re-reads every input spike once per output channel.
            let first: u64 = r
                .segments
                .iter()
                .filter(|s| s.layer == 0)
                .map(|s| s.events as u64)
                .sum();
            assert_eq!(first, 32 * r.spike_counts[0]);
        }
    }
}

#[test]
fn more_cores_never_cost_cycles() {
    let (net, data) = fixture();
    let idx: Vec<usize> = (0..10).collect();
    let mut prev: Option<Vec<u64>> = None;
    for p in [1, 2, 4, 8, 16] {
        let cfg = EngineConfig {
            parallel: p,
            ..EngineConfig::default()
        };
        let runs = run_samples(net, data, &idx, &cfg).unwrap();
        let cycles: Vec<u64> = runs.iter().map(|(r, _)| r.cycles).collect();
        let preds: Vec<usize> = runs.iter().map(|(r, _)| r.predicted).collect();
        if let Some(prev) = &prev {
            assert!(cycles.iter().zip(prev).all(|(c, p)| c <= p));
        }
        // parallelism changes timing only
        let base = run_samples(net, data, &idx, &EngineConfig::default()).unwrap();
        assert_eq!(preds, base.iter().map(|(r, _)| r.predicted).collect::<Vec<_>>());
        prev = Some(cycles);
    }
}

#[test]
fn planned_queue_depth_holds_the_observed_peak() {
    let (net, data) = fixture();
    let idx: Vec<usize> = (0..50).collect();
    for p in [1, 4, 8] {
        let cfg = EngineConfig {
            parallel: p,
            ..EngineConfig::default()
        };
        let plan = plan_memories(net, &cfg, &PlanOptions::default()).unwrap();
        let runs = run_samples(net, data, &idx, &cfg).unwrap();
        let peak = runs.iter().map(|(_, r)| r.peak_queue_fill).max().unwrap();
        assert!(
            plan.holds_queue_peak(peak),
            "P={p}: depth {} < peak {peak}",
            plan.entry(Structure::Aeq).depth
        );

        // Bounding the queues at the planned depth must not fault.
        let bounded = EngineConfig {
            aeq_depth: Some(plan.entry(Structure::Aeq).depth),
            ..cfg.clone()
        };
        let again = run_samples(net, data, &idx, &bounded).unwrap();
        assert_eq!(
            runs.iter().map(|(r, _)| *r).collect::<Vec<_>>(),
            again.iter().map(|(r, _)| *r).collect::<Vec<_>>()
        );
    }
}

#[test]
fn queue_depth_below_peak_faults() {
    let (net, data) = fixture();
    let cfg = EngineConfig {
        parallel: 4,
        ..EngineConfig::default()
    };
    let r = run_samples(net, data, &[0], &cfg).unwrap();
    let peak = r[0].1.peak_queue_fill;
    let tight = EngineConfig {
        aeq_depth: Some(peak - 1),
        ..cfg
    };
    let err = run_samples(net, data, &[0], &tight).unwrap_err();
    assert!(
        matches!(err, aeqsim::engine::EngineError::Queue(QueueError::CapacityFault { depth, .. }) if depth == peak - 1),
        "{err}"
    );
}

#[test]
fn compressed_words_change_nothing_but_the_format() {
    let (net, data) = fixture();
    let idx: Vec<usize> = (0..10).collect();
    let plain = run_samples(net, data, &idx, &EngineConfig::default()).unwrap();
    let cfg = EngineConfig {
        encoding: EncodingScheme::Compressed,
        ..EngineConfig::default()
    };
    let compr = run_samples(net, data, &idx, &cfg).unwrap();
    for ((a, ra), (b, rb)) in plain.iter().zip(&compr) {
        assert_eq!(a, b);
        assert_eq!(ra.encodings[0].word_bits(), 10);
        assert_eq!(rb.encodings[0].word_bits(), 8);
    }
}

#[test]
fn digit_one_produces_the_fewest_spikes() {
    let (net, data) = fixture();
    let idx: Vec<usize> = (0..300).collect();
    let report = aeqsim::engine::latency_histogram(net, data, &idx, &EngineConfig::default(), 10).unwrap();
    let ones = report.per_class.iter().find(|c| c.class == 1).unwrap();
    for c in report.per_class.iter().filter(|c| c.class != 1) {
        assert!(
            ones.mean_spikes < c.mean_spikes,
            "class {} has {:.0} spikes, class 1 {:.0}",
            c.class,
            c.mean_spikes,
            ones.mean_spikes
        );
    }
}

#[test]
fn experiment_outputs_are_byte_identical_across_runs_and_workers() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (dir, workers) in dirs.iter().zip([1, 3]) {
        let cfg = ExperimentConfig {
            samples: Some(40),
            shuffle: true,
            seed: 7,
            workers,
            queue_trace: true,
            out_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::new(root().join("models/mnist.json"), root().join("data/mnist-sample"))
        };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.summary.samples, 40);
    }
    let mut names: Vec<_> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 7, "{names:?}");
    for name in names {
        let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&name)).unwrap();
        // the manifest records the worker count, so compare it without that key
        if name == "manifest.json" {
            let mut a: serde_json::Value = serde_json::from_slice(&a).unwrap();
            let mut b: serde_json::Value = serde_json::from_slice(&b).unwrap();
            for v in [&mut a, &mut b] {
                strip(v, "workers");
                strip(v, "out_dir");
                strip(v, "files");
            }
            assert_eq!(a, b);
        } else {
            assert_eq!(a, b, "{name:?} differs");
        }
    }
}

fn strip(v: &mut serde_json::Value, key: &str) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove(key);
            m.values_mut().for_each(|x| strip(x, key));
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(|x| strip(x, key)),
        _ => {}
    }
}

#[test]
fn pooling_layer_is_present_and_single_spike_bounds_hold() {
    let (net, data) = fixture();
    assert!(net.layers.iter().any(|l| matches!(l.kind, LayerKind::MaxPool { .. })));
    let cfg = EngineConfig::default();
    let idx: Vec<usize> = (0..10).collect();
    for (_, r) in run_samples(net, data, &idx, &cfg).unwrap() {
        // each neuron fires at most once per sample
        let geoms = net.output_geometries();
        for (l, g) in geoms.iter().enumerate() {
            assert!(r.spike_counts[l + 1] <= g.neurons() as u64);
        }
        assert!(r.spike_counts[0] <= net.input.neurons() as u64);
    }
}
