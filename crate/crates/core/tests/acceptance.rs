//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Tolerances are fixed here, not configurable.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aeqsim::dataset::load_idx_dir;
use aeqsim::engine::membrane::placement_memories;
use aeqsim::engine::{latency_histogram, segment_cycles};
use aeqsim::harness::compare_many;
use aeqsim::model::load_model_file;
use aeqsim::neuron::NeuronMode;
use aeqsim::power::reference::{mnist_plan, Variant};
use aeqsim::power::{energy_and_fpsw, PowerInputs, PowerProfiles};
use aeqsim::queueing::{
    check_fallback, coord_bits, from_address_event, spare_patterns, to_address_event, window_count, AeqBank, Decoded,
    EncodingScheme, EventEncoding,
};
use aeqsim::resources::{bram_count, bram_words, membrane_bram_count};
use aeqsim::{load_model, run_sample, EngineConfig, SpikePlane};
use serde_json::json;

type Check = Result<String, String>;
type Criterion = (&'static str, Option<Duration>, fn() -> Check);

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Check) -> Check {
    let start = Instant::now();
    let r = f();
    let took = start.elapsed();
    match (r, limit) {
        (Ok(msg), Some(l)) if took > l => Err(format!("{msg}; took {took:.2?}, limit {l:?}")),
        (Ok(msg), _) => Ok(format!("{msg} [{took:.2?}]")),
        (Err(e), _) => Err(format!("{e} [{took:.2?}]")),
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// BRAM table: (name, D, D_mem, w, w_mem, P, AEQ, membrane).
fn bram_table() -> Check {
    let rows = [
        ("SNN-BRAM-1", 6100, 256, 10, 16, 1, 27.0, 9.0),
        ("SNN-BRAM-4", 2048, 256, 10, 8, 4, 36.0, 36.0),
        ("SNN-BRAM-8", 750, 256, 10, 8, 8, 36.0, 72.0),
    ];
    let mut cells = Vec::new();
    for (name, d, d_mem, w, w_mem, p, aeq, mem) in rows {
        let got_aeq = bram_count(9, p, d, w).map_err(|e| e.to_string())?;
        let got_mem = membrane_bram_count(9, p, d_mem, w_mem).map_err(|e| e.to_string())?;
        ensure(
            got_aeq == aeq && got_mem == mem,
            format!("{name}: got ({got_aeq}, {got_mem}), want ({aeq}, {mem})"),
        )?;
        cells.push(format!("{name} ({got_aeq}, {got_mem})"));
    }
    Ok(cells.join(", "))
}

fn word_brackets() -> Check {
    let expected = [
        (1, 32768),
        (2, 16384),
        (3, 8192),
        (4, 8192),
        (5, 4096),
        (8, 4096),
        (9, 4096),
        (10, 2048),
        (18, 2048),
        (19, 1024),
        (36, 1024),
    ];
    for (w, words) in expected {
        let got = bram_words(w).map_err(|e| e.to_string())?;
        ensure(got == words, format!("w={w}: got {got}, want {words}"))?;
    }
    ensure(
        bram_words(0).is_err() && bram_words(37).is_err(),
        "widths 0 and 37 must be rejected",
    )?;
    Ok(format!("{} boundaries exact", expected.len()))
}

fn compressed_suite() -> Check {
    let windows = window_count(28, 3);
    ensure(
        coord_bits(windows) == 4,
        format!("b = {} for W=28, K=3", coord_bits(windows)),
    )?;
    ensure(
        spare_patterns(28, 3) == 6,
        format!("{} spare patterns for W=28, K=3", spare_patterns(28, 3)),
    )?;
    let mut checked = 0;
    for size in [26, 28] {
        let enc = EventEncoding::for_map(size, size, 3, EncodingScheme::Compressed);
        ensure(!enc.fell_back, format!("{size}x{size} fell back"))?;
        for y in 0..size {
            for x in 0..size {
                let ev = to_address_event(x, y, 3, size, size, 0, 0).map_err(|e| e.to_string())?;
                let word = enc.encode(&ev).map_err(|e| e.to_string())?;
                let back = match enc.decode(word).map_err(|e| e.to_string())? {
                    Decoded::Event { i_c, j_c } => {
                        from_address_event(&aeqsim::queueing::AddressEvent { i_c, j_c, ..ev }, 3)
                    }
                    Decoded::Status(s) => return Err(format!("({x}, {y}) decoded as {s:?}")),
                };
                ensure(back == (x, y), format!("({x}, {y}) came back as {back:?}"))?;
                checked += 1;
            }
        }
    }
    ensure(check_fallback(24, 3), "no fallback for W=24, K=3")?;
    for k in 1..=7 {
        ensure(check_fallback(k, k), format!("no fallback for W=K={k}"))?;
    }
    Ok(format!(
        "b=4, 6 spare, {checked} coordinates lossless, fallbacks detected"
    ))
}

fn oracle_equivalence() -> Check {
    let results = compare_many(0, 100, 12).map_err(|e| e.to_string())?;
    let ok = results.iter().filter(|c| c.equivalent()).count();
    let modes = |m| results.iter().filter(|c| c.mode == m).count();
    ensure(
        modes(NeuronMode::IfReset) >= 1 && modes(NeuronMode::MTtfsSingleSpike) >= 1,
        "both modes must be covered",
    )?;
    match results.iter().find(|c| !c.equivalent()) {
        None => Ok(format!("{ok}/{} equivalent", results.len())),
        Some(c) => Err(format!(
            "{ok}/{}; seed {}: {}",
            results.len(),
            c.seed,
            c.mismatch.as_deref().unwrap_or("")
        )),
    }
}

fn interlacing() -> Check {
    let k = 3usize;
    let mut placements = 0u64;
    for h in k..=16 {
        for w in k..=16 {
            let grid_w = w.div_ceil(k);
            for y0 in 0..=h - k {
                for x0 in 0..=w - k {
                    let mut mems = placement_memories(x0, y0, k, grid_w);
                    mems.sort_unstable();
                    mems.dedup();
                    ensure(
                        mems.len() == k * k,
                        format!("{w}x{h} placement ({x0}, {y0}) hits {} memories", mems.len()),
                    )?;
                    placements += 1;
                }
            }
        }
    }
    Ok(format!("{placements} placements, 0 violations"))
}

fn throughput() -> Check {
    const FILL: u64 = 13;
    let enc = EventEncoding::for_map(10_000, 1, 1, EncodingScheme::Plain);
    for p in [1usize, 2, 4, 8, 16] {
        let mut bank = AeqBank::new(p, 1, 1, 1, None, enc);
        ensure(
            segment_cycles(&bank.core_loads(0, 0), FILL) == FILL,
            format!("P={p}: empty segment"),
        )?;
        for n in 1..=10_000u64 {
            let x = (n - 1) as usize;
            let ev = to_address_event(x, 0, 1, 10_000, 1, 0, 0).map_err(|e| e.to_string())?;
            bank.enqueue(&ev).map_err(|e| e.to_string())?;
            let got = segment_cycles(&bank.core_loads(0, 0), FILL);
            let want = n.div_ceil(p as u64) + FILL;
            ensure(got == want, format!("P={p}, n={n}: {got} cycles, want {want}"))?;
        }
    }

    // Same contract through the full engine, with K=3 and the default fill.
    let (w, h) = (100, 100);
    let net = load_model(
        &json!({
            "name": "throughput",
            "input": {"width": w, "height": h, "channels": 1},
            "timesteps": 1,
            "weight_bits": 8,
            "num_classes": (w - 2) * (h - 2),
            "layers": [{"kind": "conv", "in_channels": 1, "out_channels": 1, "kernel": 3,
                        "threshold": 1, "weights": [[[[0, 0, 0], [0, 0, 0], [0, 0, 0]]]], "bias": [0]}]
        })
        .to_string(),
        None,
    )
    .map_err(|e| e.to_string())?;
    for p in [1usize, 2, 4, 8, 16] {
        for n in [0usize, 1, 2, 15, 16, 17, 999, 4097, 10_000] {
            let mut plane = SpikePlane::new(net.input);
            for i in 0..n {
                plane.set(i % w, i / w, 0, true);
            }
            let cfg = EngineConfig {
                parallel: p,
                ..EngineConfig::default()
            };
            let r = run_sample(&net, &[plane], &cfg).map_err(|e| e.to_string())?;
            let want = (n as u64).div_ceil(p as u64) + 13;
            let seg = r.segments.first().ok_or("no segment recorded")?;
            ensure(
                seg.events == n && seg.cycles == want && r.cycles == want,
                format!("engine P={p}, n={n}: {} cycles, want {want}", seg.cycles),
            )?;
        }
    }
    Ok("ceil(n/P) + fill for n <= 10000, P in {1,2,4,8,16}".into())
}

fn energy_anchor() -> Check {
    let r = energy_and_fpsw(0.107, 42_800, 100.0).map_err(|e| e.to_string())?;
    let mj = r.energy_j * 1e3;
    let e_err = (mj - 0.0458).abs() / 0.0458;
    let f_err = (r.fps_per_watt - 21_809.0).abs() / 21_809.0;
    ensure(e_err <= 0.01, format!("energy {mj:.5} mJ off by {:.2}%", 100.0 * e_err))?;
    ensure(
        f_err <= 0.005,
        format!("FPS/W {:.1} off by {:.3}%", r.fps_per_watt, 100.0 * f_err),
    )?;
    Ok(format!(
        "{mj:.5} mJ ({:+.2}%), {:.0} FPS/W ({:+.3}%)",
        100.0 * (mj - 0.0458) / 0.0458,
        r.fps_per_watt,
        100.0 * (r.fps_per_watt - 21_809.0) / 21_809.0
    ))
}

fn mnist_latency() -> Check {
    let net = load_model_file(root().join("models/mnist.json")).map_err(|e| e.to_string())?;
    let data = load_idx_dir(root().join("data/mnist-sample"), "t10k").map_err(|e| e.to_string())?;
    let indices: Vec<usize> = (0..100).collect();
    let cfg = EngineConfig::default();
    let a = latency_histogram(&net, &data, &indices, &cfg, 20).map_err(|e| e.to_string())?;
    let b = latency_histogram(&net, &data, &indices, &cfg, 20).map_err(|e| e.to_string())?;
    ensure(a.records == b.records, "repeated runs differ")?;
    let acc = a.accuracy();
    ensure(acc >= 0.95, format!("accuracy {:.1}%", 100.0 * acc))?;
    let min = a.records.iter().map(|r| r.cycles).min().unwrap_or(0);
    let max = a.records.iter().map(|r| r.cycles).max().unwrap_or(0);
    let ratio = max as f64 / min.max(1) as f64;
    ensure(ratio >= 1.2, format!("max/min = {max}/{min} = {ratio:.3}"))?;
    Ok(format!(
        "{} samples, accuracy {:.1}%, cycles {min}..{max} (ratio {ratio:.2}), deterministic",
        indices.len(),
        100.0 * acc
    ))
}

fn power_fixture() -> Check {
    let profiles = PowerProfiles::builtin();
    let coeffs = profiles.get("pynq-z1-100mhz").map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, variant, published) in [
        ("SNN-BRAM-4", Variant::Bram, 0.283),
        ("SNN-LUTRAM-4", Variant::Lutram, 0.242),
        ("SNN-COMPR-4", Variant::Compressed, 0.200),
    ] {
        let plan = mnist_plan(4, variant);
        let total = coeffs
            .estimate(&PowerInputs::new(&plan, coeffs.clock_mhz, None))
            .total();
        let err = (total - published) / published;
        worst = worst.max(err.abs());
        parts.push(format!("{name} {total:.3} W ({:+.1}%)", 100.0 * err));
    }
    ensure(worst <= 0.05, parts.join(", "))?;
    Ok(parts.join(", "))
}

fn main() -> ExitCode {
    let checks: [Criterion; 9] = [
        ("BRAM table cells", Some(Duration::from_secs(1)), bram_table),
        ("BRAM word-count brackets", None, word_brackets),
        ("compressed encoding", Some(Duration::from_secs(1)), compressed_suite),
        ("oracle equivalence", Some(Duration::from_secs(60)), oracle_equivalence),
        ("interlacing distinctness", None, interlacing),
        ("throughput contract", None, throughput),
        ("energy anchor", None, energy_anchor),
        ("data-dependent latency", Some(Duration::from_secs(300)), mnist_latency),
        ("power calibration fixture", None, power_fixture),
    ];
    let mut failed = 0;
    for (name, limit, f) in checks {
        match timed(limit, f) {
            Ok(msg) => println!("PASS  {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg}");
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
