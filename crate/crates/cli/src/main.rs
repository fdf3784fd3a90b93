use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use aeqsim::engine::EngineConfig;
use aeqsim::experiment::{run_experiment, ExperimentConfig, OUT_DIR_ENV};
use aeqsim::harness::compare_many;
use aeqsim::model::load_model_file;
use aeqsim::neuron::{InputEncoding, InputScheme, NeuronMode};
use aeqsim::power::{self, energy_report, reference, PowerInputs, PowerProfiles};
use aeqsim::queueing::{
    check_fallback, coord_bits, from_address_event, spare_patterns, to_address_event, window_count, Decoded,
    EncodingScheme, EventEncoding,
};
use aeqsim::resources::{plan_design, MemoryDesign, MemoryPlan, MemoryPolicy, PlanOptions, Structure};

#[derive(Parser)]
#[command(
    name = "aeqsim",
    version,
    about = "Queue-based SNN accelerator simulator and FPGA cost model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write latency, energy, resource and per-class CSVs
    Simulate(SimulateArgs),
    /// Print the BRAM/LUTRAM plan of a design
    Resources(ResourceArgs),
    /// Estimate power, energy and FPS/W of a design
    Power(PowerArgs),
    /// Check the simulator against the dense reference on random networks
    CompareOracle(OracleArgs),
    /// Show and verify the event word formats for a feature map
    EncodeCheck(EncodeArgs),
    /// Refit the power profiles and print coefficients and residuals
    Calibrate(CalibrateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    IfReset,
    SingleSpike,
    Continuous,
}

impl From<Mode> for NeuronMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::IfReset => NeuronMode::IfReset,
            Mode::SingleSpike => NeuronMode::MTtfsSingleSpike,
            Mode::Continuous => NeuronMode::MTtfsContinuous,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    Plain,
    Compressed,
}

impl From<Encoding> for EncodingScheme {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Plain => EncodingScheme::Plain,
            Encoding::Compressed => EncodingScheme::Compressed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    AllBram,
    AllLutram,
    Auto,
}

impl From<Policy> for MemoryPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::AllBram => MemoryPolicy::AllBram,
            Policy::AllLutram => MemoryPolicy::AllLutram,
            Policy::Auto => MemoryPolicy::Auto,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Input {
    ThresholdOnce,
    ConstantCurrent,
}

#[derive(Args)]
struct EngineArgs {
    /// Spike-processing cores P (1-16)
    #[arg(long, short = 'p', default_value_t = 1)]
    parallel: usize,
    /// Events per physical queue; unbounded when omitted
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, value_enum, default_value = "single-spike")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "plain")]
    encoding: Encoding,
    /// Cycles added per drained segment [default: K*K + 4]
    #[arg(long)]
    fill: Option<u64>,
    #[arg(long, default_value_t = 100.0)]
    clock_mhz: f64,
    /// Membrane accumulator width in bits
    #[arg(long, default_value_t = 16)]
    acc_bits: u32,
    #[arg(long, value_enum, default_value = "threshold-once")]
    input: Input,
    /// Input threshold applied to 8-bit pixels
    #[arg(long, default_value_t = 127)]
    v_t_in: i32,
}

impl EngineArgs {
    fn config(&self) -> EngineConfig {
        EngineConfig {
            parallel: self.parallel,
            aeq_depth: self.depth,
            mode: self.mode.into(),
            encoding: self.encoding.into(),
            pipeline_fill: self.fill,
            clock_mhz: self.clock_mhz,
            acc_bits: self.acc_bits,
            input: InputEncoding {
                scheme: match self.input {
                    Input::ThresholdOnce => InputScheme::ThresholdOnce,
                    Input::ConstantCurrent => InputScheme::ConstantCurrent,
                },
                v_t_in: self.v_t_in,
            },
            ..EngineConfig::default()
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// IDX directory or raw-tensor JSON manifest
    #[arg(long)]
    dataset: PathBuf,
    /// Number of samples [default: all]
    #[arg(long)]
    samples: Option<usize>,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, value_enum, default_value = "all-bram")]
    policy: Policy,
    #[arg(long, default_value_t = 0.25)]
    occupancy_threshold: f64,
    /// Override the derived membrane memory depth
    #[arg(long)]
    membrane_depth: Option<usize>,
    #[arg(long, default_value = "pynq-z1-100mhz")]
    profile: String,
    /// Power profile file [default: shipped profiles]
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Shuffle the dataset with --seed before taking --samples
    #[arg(long)]
    shuffle: bool,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Also write queue_trace.csv
    #[arg(long)]
    queue_trace: bool,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DesignArgs {
    /// Derive sizes from this model manifest
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, short = 'p', default_value_t = 1)]
    parallel: usize,
    /// Queue depth D
    #[arg(long)]
    depth: Option<usize>,
    /// Bits per queue word [default: from model and encoding]
    #[arg(long)]
    aeq_bits: Option<u32>,
    #[arg(long)]
    membrane_depth: Option<usize>,
    #[arg(long)]
    membrane_bits: Option<u32>,
    /// Kernel size K when no model is given
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, value_enum, default_value = "plain")]
    encoding: Encoding,
    #[arg(long, value_enum, default_value = "single-spike")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "all-bram")]
    policy: Policy,
    #[arg(long, default_value_t = 0.25)]
    occupancy_threshold: f64,
}

impl DesignArgs {
    fn plan(&self) -> Result<MemoryPlan> {
        let mut d = match &self.model {
            Some(path) => {
                let net = load_model_file(path).with_context(|| format!("loading {}", path.display()))?;
                let cfg = EngineConfig {
                    parallel: self.parallel,
                    aeq_depth: self.depth,
                    encoding: self.encoding.into(),
                    mode: self.mode.into(),
                    acc_bits: self.membrane_bits.unwrap_or(16),
                    ..EngineConfig::default()
                };
                MemoryDesign::from_model(&net, &cfg)?
            }
            None => MemoryDesign {
                parallel: self.parallel,
                queues: self.kernel * self.kernel,
                aeq_depth: self.depth.context("--depth is required without --model")?,
                aeq_bits: self.aeq_bits.context("--aeq-bits is required without --model")?,
                membrane_depth: self
                    .membrane_depth
                    .context("--membrane-depth is required without --model")?,
                membrane_bits: self.membrane_bits.unwrap_or(16),
                weight_bits: 8,
                params: 0,
            },
        };
        if let Some(w) = self.aeq_bits {
            d.aeq_bits = w;
        }
        if let Some(m) = self.membrane_depth {
            d.membrane_depth = m;
        }
        let opts = PlanOptions {
            policy: self.policy.into(),
            occupancy_threshold: self.occupancy_threshold,
            ..PlanOptions::default()
        };
        Ok(plan_design(&d, &opts)?)
    }
}

#[derive(Args)]
struct ResourceArgs {
    #[command(flatten)]
    design: DesignArgs,
}

#[derive(Args)]
struct PowerArgs {
    #[command(flatten)]
    design: DesignArgs,
    /// Use a published MNIST design instead, e.g. SNN-COMPR-4
    #[arg(long, conflicts_with = "model")]
    preset: Option<String>,
    #[arg(long, default_value = "pynq-z1-100mhz")]
    profile: String,
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Latency of one classification in cycles
    #[arg(long)]
    cycles: Option<u64>,
    /// Events processed per classification (for the activity term)
    #[arg(long, default_value_t = 0)]
    events: u64,
}

#[derive(Args)]
struct OracleArgs {
    /// Number of random networks
    #[arg(long, default_value_t = 100)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    /// Largest feature-map side
    #[arg(long, default_value_t = 12)]
    max_size: usize,
    /// Print one line per network
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long, default_value_t = 28)]
    width: usize,
    /// Map height [default: width]
    #[arg(long)]
    height: Option<usize>,
    #[arg(long, short = 'k', default_value_t = 3)]
    kernel: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Write the fitted profiles to this file
    #[arg(long)]
    write: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            let input = e
                .chain()
                .find_map(|c| c.downcast_ref::<aeqsim::Error>().map(aeqsim::Error::is_input_error))
                .unwrap_or(true);
            ExitCode::from(if input { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Resources(a) => {
            print_plan(&a.design.plan()?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Power(a) => power_cmd(a),
        Command::CompareOracle(a) => compare_oracle(a),
        Command::EncodeCheck(a) => encode_check(a),
        Command::Calibrate(a) => calibrate(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let cfg = ExperimentConfig {
        engine: a.engine.config(),
        policy: a.policy.into(),
        occupancy_threshold: a.occupancy_threshold,
        membrane_depth: a.membrane_depth,
        profile: a.profile,
        profiles_path: a.profiles,
        samples: a.samples,
        shuffle: a.shuffle,
        seed: a.seed,
        workers: a.workers,
        out_dir: a.out,
        histogram_bins: a.bins,
        queue_trace: a.queue_trace,
        ..ExperimentConfig::new(a.model, a.dataset)
    };
    let out = run_experiment(&cfg).map_err(anyhow::Error::new)?;
    let s = &out.summary;
    println!("samples       {}", s.samples);
    println!("accuracy      {:.2}%", 100.0 * s.accuracy);
    println!(
        "cycles        min {} / mean {:.0} / max {}",
        s.min_cycles, s.mean_cycles, s.max_cycles
    );
    println!("power         {:.4} W (mean)", s.mean_power_w);
    println!("energy        {:.5} mJ (mean)", s.mean_energy_mj);
    println!("FPS/W         {:.1} (mean)", s.mean_fps_per_watt);
    println!("BRAMs         {}", s.total_brams);
    for f in &s.files {
        println!("wrote         {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn print_plan(plan: &MemoryPlan) {
    let d = &plan.design;
    let aeq = plan.entry(Structure::Aeq);
    let mem = plan.entry(Structure::Membrane);
    println!(
        "{:>6} {:>6} {:>4} {:>6} {:>2} {:>10} {:>15}",
        "D", "D_mem", "w", "w_mem", "P", "#BRAM_AEQ", "#BRAM_Membrane"
    );
    println!(
        "{:>6} {:>6} {:>4} {:>6} {:>2} {:>10} {:>15}",
        d.aeq_depth, d.membrane_depth, d.aeq_bits, d.membrane_bits, d.parallel, aeq.brams, mem.brams
    );
    println!();
    println!(
        "{:<11} {:<7} {:>7} {:>12} {:>7} {:>6} {:>6}",
        "structure", "tech", "brams", "lutram_bits", "depth", "width", "copies"
    );
    for e in &plan.entries {
        println!(
            "{:<11} {:<7} {:>7.1} {:>12} {:>7} {:>6} {:>6}",
            e.structure.name(),
            e.tech.name(),
            e.brams,
            e.lutram_bits,
            e.depth,
            e.width,
            e.replication
        );
    }
    println!();
    println!("total BRAMs            {:.1}", plan.total_brams());
    println!("total without ROM      {:.1}", plan.total_brams_without_rom());
    println!("LUTRAM bits            {}", plan.lutram_bits());
}

fn power_cmd(a: PowerArgs) -> Result<ExitCode> {
    let profiles = match &a.profiles {
        Some(p) => PowerProfiles::load(p)?,
        None => PowerProfiles::builtin(),
    };
    let coeffs = profiles.get(&a.profile)?;
    let plan = match &a.preset {
        Some(name) => {
            let Some(&(_, p, variant)) = reference::MNIST_DESIGNS.iter().find(|d| d.0 == name) else {
                let known: Vec<_> = reference::MNIST_DESIGNS.iter().map(|d| d.0).collect();
                bail!("unknown preset `{name}` (known: {})", known.join(", "));
            };
            reference::mnist_plan(p, variant)
        }
        None => a.design.plan()?,
    };
    let clock = coeffs.clock_mhz;
    let mut inputs = PowerInputs::new(&plan, clock, None);
    if let Some(c) = a.cycles.filter(|&c| c > 0) {
        inputs.kevents_per_s = a.events as f64 / (c as f64 / (clock * 1e6)) / 1e3;
    }
    let b = coeffs.estimate(&inputs);
    println!("profile   {} ({})", a.profile, coeffs.description);
    println!(
        "resources {} cores, {:.1} BRAMs, {:.1} kbit LUTRAM",
        inputs.cores,
        plan.total_brams(),
        inputs.lutram_kbit
    );
    println!("signals   {:.4} W", b.signals);
    println!("brams     {:.4} W", b.brams);
    println!("logic     {:.4} W", b.logic);
    println!("clocks    {:.4} W", b.clocks);
    println!("total     {:.4} W (calibrated-model estimate)", b.total());
    if let Some(row) = a.preset.as_deref().and_then(reference::pynq_row) {
        println!("published {:.3} W", row.total);
    }
    if let Some(c) = a.cycles {
        let e = energy_report(b, c, clock)?;
        println!("latency   {:.3} us", e.latency_s * 1e6);
        println!("energy    {:.5} mJ", e.energy_j * 1e3);
        println!("FPS/W     {:.1}", e.fps_per_watt);
    }
    Ok(ExitCode::SUCCESS)
}

fn compare_oracle(a: OracleArgs) -> Result<ExitCode> {
    let results = compare_many(a.first_seed, a.seeds, a.max_size)?;
    let ok = results.iter().filter(|c| c.equivalent()).count();
    for c in &results {
        if a.verbose || !c.equivalent() {
            println!(
                "seed {:>5} {:<16} {:<28} spikes {:>6} {}",
                c.seed,
                format!("{:?}", c.mode),
                c.architecture,
                c.spikes,
                c.mismatch.as_deref().unwrap_or("ok")
            );
        }
    }
    println!("{ok}/{} equivalent", results.len());
    Ok(if ok == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn encode_check(a: EncodeArgs) -> Result<ExitCode> {
    let (w, h, k) = (a.width, a.height.unwrap_or(a.width), a.kernel);
    if w == 0 || h == 0 || k == 0 {
        bail!("width, height and kernel must be >= 1");
    }
    let windows = window_count(w.max(h), k);
    println!("map {w}x{h}, K = {k}: {windows} windows per side");
    println!("bits per coordinate   {}", coord_bits(windows));
    println!("spare patterns        {}", spare_patterns(w.max(h), k));
    println!("fallback              {}", check_fallback(w.max(h), k));
    let mut failures = 0;
    for scheme in [EncodingScheme::Plain, EncodingScheme::Compressed] {
        let enc = EventEncoding::for_map(w, h, k, scheme);
        for y in 0..h {
            for x in 0..w {
                let ev = to_address_event(x, y, k, w, h, 0, 0)?;
                let ok = match enc.decode(enc.encode(&ev)?)? {
                    Decoded::Event { i_c, j_c } => {
                        from_address_event(&aeqsim::queueing::AddressEvent { i_c, j_c, ..ev }, k) == (x, y)
                    }
                    Decoded::Status(_) => false,
                };
                failures += usize::from(!ok);
            }
        }
        let resolved = if enc.fell_back { " (fell back to plain)" } else { "" };
        println!(
            "{:<10} word bits {:>2}{resolved}",
            format!("{scheme:?}"),
            enc.word_bits()
        );
    }
    println!("roundtrip             {} of {} coordinates failed", failures, 2 * w * h);
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn calibrate(a: CalibrateArgs) -> Result<ExitCode> {
    let (profiles, residuals) = power::calibrate_builtin();
    for (name, c) in &profiles.profiles {
        println!("{name}: {}", c.description);
        for (cat, k) in [
            ("signals", c.signals),
            ("brams", c.brams),
            ("logic", c.logic),
            ("clocks", c.clocks),
        ] {
            println!(
                "  {cat:<8} offset {:.6}  core {:.6}  bram/2 {:.6}  lutram kbit {:.6}",
                k.offset, k.per_core, k.per_bram_half, k.per_lutram_kbit
            );
        }
        println!(
            "  {:<14} {:>9} {:>9} {:>8}",
            "design", "predicted", "published", "error"
        );
        for r in &residuals[name] {
            println!(
                "  {:<14} {:>9.4} {:>9.4} {:>7.2}%",
                r.name,
                r.predicted.total(),
                r.observed.total(),
                100.0 * r.total_error()
            );
        }
    }
    if let Some(path) = a.write {
        std::fs::write(&path, profiles.to_json()).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
