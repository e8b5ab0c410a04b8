//! Command line front end: generate traffic, train a detector, replay and
//! score traces, and inspect the receive-path timing budget.

use canids::config::{load_config, RunConfig};
use canids::controller::collect_features;
use canids::harness::metrics::compute_metrics;
use canids::harness::{replay, DetectionReport, ReplayConfig};
use canids::qnn::train::{train, LabeledFeature, TrainConfig};
use canids::qnn::{weights, QuantizedMlp, DETECTOR_DIMS};
use canids::timing::{check_realtime, TimingConfig};
use canids::traffic::split::{split, SplitRatios};
use canids::traffic::synth::{
    default_fleet, synthesize, synthesize_mixed, AttackKind, AttackProfile,
};
use canids::traffic::{load_trace, write_trace, TraceRecord};
use clap::{Args, Parser, Subcommand};
use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_THRESHOLD: u8 = 3;

#[derive(Parser)]
#[command(
    name = "canids",
    version,
    about = "CAN receive-path simulator with an embedded quantized-MLP intrusion detector"
)]
struct Cli {
    /// Key=value config file; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// CAN bitrate in bits per second.
    #[arg(long, global = true)]
    bitrate: Option<u64>,
    /// Controller clock in MHz.
    #[arg(long, global = true)]
    clock_mhz: Option<u64>,
    /// Detector latency in controller cycles after data_en.
    #[arg(long, global = true)]
    ids_cycles: Option<u64>,
    /// RNG seed for generation, splitting and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled CAN trace.
    Generate(GenerateArgs),
    /// Train a 4-bit detector on a labeled trace and save its weights.
    Train(TrainArgs),
    /// Replay a labeled trace through the full receive path and score it.
    Evaluate(EvaluateArgs),
    /// Replay a trace and show the controller's signal timeline.
    Simulate(SimulateArgs),
    /// Show the post-payload timing window against the detector latency.
    Timing(TimingArgs),
}

fn parse_can_id(s: &str) -> Result<u16, String> {
    let id = if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u16::from_str_radix(hex, 16).map_err(|e| e.to_string())?
    } else {
        s.parse::<u16>().map_err(|e| e.to_string())?
    };
    if id > 0x7FF {
        return Err(format!("identifier {id:#05x} exceeds 11 bits"));
    }
    Ok(id)
}

#[derive(Args)]
struct GenerateArgs {
    /// Output trace path.
    #[arg(long)]
    out: PathBuf,
    /// Total frames to emit.
    #[arg(long, default_value_t = 10_000)]
    frames: usize,
    /// Attack kind (dos_flood, fuzzing, malfunction, flooding); repeat the
    /// flag for a multi-phase trace.
    #[arg(long = "attack", required = true)]
    attacks: Vec<AttackKind>,
    /// Fraction of frames that are attacks, in [0, 1].
    #[arg(long, default_value_t = 0.2)]
    rate: f64,
    /// Victim identifier for malfunction and flooding (0x hex or decimal).
    #[arg(long, value_parser = parse_can_id)]
    target_id: Option<u16>,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled input trace.
    #[arg(long)]
    trace: PathBuf,
    /// Where to save the packed 4-bit weights.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Short schedule (20 epochs, patience 5) for quick runs.
    #[arg(long)]
    quick: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Labeled input trace.
    #[arg(long)]
    trace: PathBuf,
    /// Packed 4-bit weights.
    #[arg(long)]
    model: PathBuf,
    /// Print machine-readable key=value lines instead of prose.
    #[arg(long)]
    kv: bool,
    /// Fail (exit 3) if accuracy falls below this percentage.
    #[arg(long)]
    min_accuracy: Option<f64>,
    /// Fail (exit 3) if the false negative rate exceeds this percentage.
    #[arg(long)]
    max_fnr: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Input trace.
    #[arg(long)]
    trace: PathBuf,
    /// Packed 4-bit weights; a zeroed detector is used when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Replay only the first N frames.
    #[arg(long)]
    frames: Option<usize>,
    /// Print machine-readable key=value lines instead of prose.
    #[arg(long)]
    kv: bool,
}

#[derive(Args)]
struct TimingArgs {
    /// Payload length to analyze; omit for the full 0..=8 table.
    #[arg(long)]
    dlc: Option<u8>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn merged_config(cli: &Cli) -> Result<RunConfig, Box<dyn Error>> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = cli.bitrate {
        cfg.bitrate_bps = v;
    }
    if let Some(v) = cli.clock_mhz {
        cfg.clock_mhz = v;
    }
    if let Some(v) = cli.ids_cycles {
        cfg.ids_cycles = v;
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn Error>> {
    let cfg = merged_config(&cli)?;
    match cli.command {
        Command::Generate(args) => cmd_generate(&cfg, &args),
        Command::Train(args) => cmd_train(&cfg, &args),
        Command::Evaluate(args) => cmd_evaluate(&cfg, &args),
        Command::Simulate(args) => cmd_simulate(&cfg, &args),
        Command::Timing(args) => cmd_timing(&cfg, &args),
    }
}

fn cmd_generate(cfg: &RunConfig, args: &GenerateArgs) -> Result<ExitCode, Box<dyn Error>> {
    let fleet = default_fleet();
    let profiles: Vec<AttackProfile> = args
        .attacks
        .iter()
        .enumerate()
        .map(|(i, kind)| AttackProfile {
            kind: *kind,
            injection_rate: args.rate,
            target_id: args.target_id,
            seed: cfg.seed.wrapping_add(i as u64),
        })
        .collect();
    let records = if profiles.len() == 1 {
        synthesize(&fleet, &profiles[0], args.frames)?
    } else {
        synthesize_mixed(&fleet, &profiles, args.frames)?
    };
    write_trace(&records, &args.out)?;
    let attacks = records.iter().filter(|r| r.label.is_attack()).count();
    println!(
        "wrote {} frames ({} attack, {} benign) to {}",
        records.len(),
        attacks,
        records.len() - attacks,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_records(path: &Path) -> Result<Vec<TraceRecord>, Box<dyn Error>> {
    let (records, stats) = load_trace(path)?;
    if stats.malformed > 0 {
        eprintln!(
            "note: skipped {} malformed of {} lines in {}",
            stats.malformed,
            stats.lines,
            path.display()
        );
    }
    Ok(records)
}

fn features_of(records: &[TraceRecord]) -> Vec<LabeledFeature> {
    let pairs: Vec<_> = records
        .iter()
        .map(|r| (r.frame, r.label.is_attack()))
        .collect();
    collect_features(&pairs)
}

fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<ExitCode, Box<dyn Error>> {
    let records = load_records(&args.trace)?;
    let features = features_of(&records);
    let parts = split(&features, SplitRatios::default(), cfg.seed)?;
    println!(
        "features: {} train, {} val, {} test",
        parts.train.len(),
        parts.val.len(),
        parts.test.len()
    );

    let mut tc = if args.quick {
        TrainConfig::desk_scale()
    } else {
        TrainConfig::default()
    };
    tc.seed = cfg.seed;
    if let Some(v) = args.epochs {
        tc.epochs = v;
    }
    if let Some(v) = args.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = args.dropout {
        tc.dropout = v;
    }

    let (network, report) = train(&parts.train, &parts.val, &DETECTOR_DIMS, &tc)?;
    println!(
        "trained {} epochs{}, best validation loss {}",
        report.epochs_run,
        if report.stopped_early {
            " (stopped early)"
        } else {
            ""
        },
        report
            .best_val_loss
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}")),
    );

    let model = network.export_quantized()?;
    weights::save(&model, &args.model)?;
    println!("saved 4-bit weights to {}", args.model.display());

    if !parts.test.is_empty() {
        let predicted: Vec<bool> = parts
            .test
            .iter()
            .map(|f| model.infer_bytes(&f.bytes).verdict.is_attack())
            .collect();
        let actual: Vec<bool> = parts.test.iter().map(|f| f.attack).collect();
        let m = compute_metrics(&predicted, &actual)?;
        println!(
            "held-out test: accuracy {} precision {} recall {} f1 {} fnr {}",
            m.accuracy.format(),
            m.precision.format(),
            m.recall.format(),
            m.f1.format(),
            m.false_negative_rate.format()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn print_report(report: &DetectionReport, kv: bool) {
    if kv {
        print!("{}", report.to_kv());
    } else {
        print!("{}", report.to_text());
    }
}

fn cmd_evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<ExitCode, Box<dyn Error>> {
    let records = load_records(&args.trace)?;
    let model = weights::load(&args.model)?;
    let replay_cfg = ReplayConfig {
        timing: cfg.timing()?,
        ids_latency_cycles: cfg.ids_cycles,
    };
    let report = replay(&records, Some(model), &replay_cfg)?;
    print_report(&report, args.kv);

    let Some(m) = &report.metrics else {
        return Err("no scored frames, nothing to evaluate".into());
    };
    let mut ok = true;
    if let Some(min) = args.min_accuracy {
        let pass = !m.accuracy.degenerate && m.accuracy.percent >= min;
        println!(
            "threshold accuracy >= {min}%: {}",
            if pass { "pass" } else { "fail" }
        );
        ok &= pass;
    }
    if let Some(max) = args.max_fnr {
        let v = m.false_negative_rate;
        let pass = !v.degenerate && v.percent <= max;
        println!(
            "threshold false negative rate <= {max}%: {}",
            if pass { "pass" } else { "fail" }
        );
        ok &= pass;
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_THRESHOLD)
    })
}

fn cmd_simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<ExitCode, Box<dyn Error>> {
    let mut records = load_records(&args.trace)?;
    if let Some(n) = args.frames {
        records.truncate(n);
    }
    let model = match &args.model {
        Some(path) => weights::load(path)?,
        None => QuantizedMlp::zeroed(&DETECTOR_DIMS),
    };
    let replay_cfg = ReplayConfig {
        timing: cfg.timing()?,
        ids_latency_cycles: cfg.ids_cycles,
    };
    let report = replay(&records, Some(model), &replay_cfg)?;
    print_report(&report, args.kv);
    Ok(ExitCode::SUCCESS)
}

fn cmd_timing(cfg: &RunConfig, args: &TimingArgs) -> Result<ExitCode, Box<dyn Error>> {
    let timing: TimingConfig = cfg.timing()?;
    let cpb = timing.cycles_per_bit();
    println!(
        "bitrate {} bps, clock {} MHz, {} cycles per bit",
        timing.bitrate_bps(),
        cfg.clock_mhz,
        cpb
    );
    println!(
        "detector latency {} cycles ({:.4} us after data_en)",
        cfg.ids_cycles,
        timing.cycles_to_us(cfg.ids_cycles)
    );
    // The window between the last payload bit and frame completion is the
    // 15 CRC bits plus the 13-bit tail, widened by any stuff bits the CRC
    // field picks up: 28 bits minimum, 32 maximum.
    let floor_cycles = 28 * cpb;
    println!(
        "window floor: 28 bit times = {} cycles ({:.4} us)",
        floor_cycles,
        timing.cycles_to_us(floor_cycles)
    );
    println!();
    println!("dlc  window_bits  window_cycles  window_us  header_to_done_us  verdict_in_time");
    let dlcs: Vec<u8> = match args.dlc {
        Some(d) if d <= 8 => vec![d],
        Some(d) => return Err(format!("dlc {d} exceeds 8").into()),
        None => (0..=8).collect(),
    };
    for dlc in dlcs {
        let payload: Vec<u8> = (0..dlc).map(|i| if i % 2 == 0 { 0xAA } else { 0x55 }).collect();
        let frame = canids::frame_codec::CanFrame::new(0x555, &payload)
            .expect("table frames are valid");
        let check = check_realtime(cfg.ids_cycles, &frame, &timing);
        let window = canids::timing::reception_window(&frame, &timing);
        println!(
            "{:<5}{:<13}{:<15}{:<11.4}{:<19.4}{}",
            dlc,
            check.window_cycles / cpb,
            check.window_cycles,
            check.window_us(),
            window.t_max_us(),
            if check.meets {
                "yes".to_string()
            } else {
                format!("no (late by {} cycles)", -check.slack_cycles)
            }
        );
    }
    println!();
    if cfg.ids_cycles <= floor_cycles {
        println!(
            "latency {} cycles fits the {} cycle floor: the verdict precedes frame_done for every frame",
            cfg.ids_cycles, floor_cycles
        );
    } else {
        println!(
            "latency {} cycles exceeds the {} cycle floor by {} cycles: verdicts arrive after frame_done",
            cfg.ids_cycles,
            floor_cycles,
            cfg.ids_cycles - floor_cycles
        );
    }
    Ok(ExitCode::SUCCESS)
}
