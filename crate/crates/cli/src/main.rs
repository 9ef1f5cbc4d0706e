use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ecot_core::annotators::{HttpBackend, HttpConfig, BRIDGE_URL_ENV};
use ecot_core::chain::{self, ChainProfile, Layout};
use ecot_core::data::write_dataset;
use ecot_core::intervention::{correct, Corrector, InterventionError, RemoteCorrector, RuleCorrector};
use ecot_core::pipeline::{self, BackendMode, ChainRecord, PipelineConfig};
use ecot_core::scheduler::{
    calibrate, freeze_bound, simulate, simulate_with_freezes, CalibrationTargets, CostModel, FreezeSchedule,
    SchedulerError, Strategy,
};
use ecot_core::synth::{self, SynthConfig};

const EXIT_PARTIAL: u8 = 2;
const EXIT_INVALID_EDIT: u8 = 3;

#[derive(Parser)]
#[command(name = "ecot", version, about = "Embodied chain-of-thought annotation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate a trajectory dataset, resuming from a checkpoint if one exists.
    Generate(GenerateArgs),
    /// Re-parse every chain of an output file and report violations.
    Validate {
        output: PathBuf,
    },
    /// Movement-label histogram and token budgets of an output file.
    Stats {
        output: PathBuf,
    },
    /// Fit a chain profile and cost model to target speed-ups.
    Calibrate(CalibrateArgs),
    /// Simulate an inference strategy and print its timing summary.
    Simulate(SimulateArgs),
    /// Correct a chain from natural-language feedback.
    Intervene(InterveneArgs),
    /// Write a synthetic dataset and matching mock fixtures.
    Synth(SynthArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Flat TOML config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    #[arg(long)]
    seed: Option<u64>,
    /// Annotator service URL; the environment variable wins over the config.
    #[arg(long, env = BRIDGE_URL_ENV)]
    bridge_url: Option<String>,
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long)]
    layout: Option<Layout>,
    #[arg(long)]
    future_gripper: bool,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Bridge,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    sync: Option<f64>,
    #[arg(long, default_value_t = 5)]
    sync_n: usize,
    #[arg(long = "async")]
    async_: Option<f64>,
    #[arg(long, default_value_t = 350)]
    total_tokens: u64,
    #[arg(long, default_value_t = 0.05)]
    enc_ratio: f64,
    #[arg(long, default_value_t = 1000)]
    steps: u64,
}

#[derive(Args)]
struct SimulateArgs {
    /// naive, sync-N or async
    #[arg(long, default_value = "naive")]
    strategy: Strategy,
    /// High-level tokens; without --high and --low the calibrated profile is used.
    #[arg(long, requires = "low")]
    high: Option<u64>,
    #[arg(long, requires = "high")]
    low: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    gen_cost: f64,
    #[arg(long, default_value_t = 0.05)]
    enc_cost: f64,
    #[arg(long, default_value_t = 0.0)]
    overhead: f64,
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    /// Step at which an intervention freezes the chain; repeatable.
    #[arg(long = "freeze-at")]
    freeze_at: Vec<u64>,
    #[arg(long, default_value_t = ecot_core::intervention::FREEZE_HORIZON as u64)]
    freeze_horizon: u64,
    /// Include every step in the output.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct InterveneArgs {
    /// Chain string; read from stdin when omitted.
    #[arg(long)]
    chain: Option<String>,
    #[arg(long)]
    feedback: String,
    /// Ask the annotator service to rewrite the chain instead of using rules.
    #[arg(long)]
    remote: bool,
    #[arg(long, env = BRIDGE_URL_ENV)]
    bridge_url: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    trajectories: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Trajectories, counted from the end, left with too few gripper detections.
    #[arg(long, default_value_t = 1)]
    uncalibratable: usize,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(io::stdout().lock(), "{text}") {
        // A closed pipe (`| head`) is not an error worth reporting.
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn load_config(args: &GenerateArgs) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(v) = &args.dataset {
        cfg.dataset = v.clone();
    }
    if let Some(v) = &args.output {
        cfg.output = v.clone();
    }
    if let Some(v) = &args.checkpoint {
        cfg.checkpoint = Some(v.clone());
    }
    if let Some(v) = args.backend {
        cfg.backend = match v {
            Backend::Mock => BackendMode::Mock,
            Backend::Bridge => BackendMode::Bridge,
        };
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.bridge_url {
        cfg.bridge_url = v.clone();
    }
    if let Some(v) = &args.fixtures {
        cfg.fixtures = Some(v.clone());
    }
    if let Some(v) = args.layout {
        cfg.layout = v;
    }
    cfg.future_gripper |= args.future_gripper;
    if let Some(v) = args.parallelism {
        cfg.parallelism = v;
    }
    if let Some(v) = args.stop_after {
        cfg.stop_after = Some(v);
    }
    Ok(cfg)
}

fn generate(args: &GenerateArgs) -> Result<ExitCode> {
    let cfg = load_config(args)?;
    let report = pipeline::run(&cfg)?;
    print_json(&report)?;
    for u in &report.unannotated {
        eprintln!("unannotated {}: {}", u.trajectory_id, u.reason);
    }
    Ok(if report.is_partial() {
        ExitCode::from(EXIT_PARTIAL)
    } else {
        ExitCode::SUCCESS
    })
}

#[derive(Serialize)]
struct Violation {
    line: usize,
    error: String,
}

#[derive(Serialize)]
struct ValidationReport {
    records: usize,
    violations: Vec<Violation>,
}

fn validate(path: &Path) -> Result<ExitCode> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut report = ValidationReport {
        records: 0,
        violations: Vec::new(),
    };
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let checked = serde_json::from_str::<ChainRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| chain::parse(&r.chain).map_err(|e| e.to_string()));
        if let Err(error) = checked {
            report.violations.push(Violation { line: k + 1, error });
        }
    }
    print_json(&report)?;
    Ok(if report.violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn calibrate_cmd(args: &CalibrateArgs) -> Result<ExitCode> {
    let defaults = CalibrationTargets::default();
    let (sync, async_) = match (args.sync, args.async_) {
        (None, None) => (defaults.sync, defaults.async_),
        given => given,
    };
    let targets = CalibrationTargets {
        sync,
        sync_n: args.sync_n,
        async_,
        total_tokens: args.total_tokens,
        enc_ratio: args.enc_ratio,
        steps: args.steps,
    };
    match calibrate(&targets) {
        Ok(c) => {
            if !c.exact {
                eprintln!("targets are not jointly reachable; residual {:.4}", c.residual);
            }
            print_json(&c)?;
            Ok(ExitCode::SUCCESS)
        }
        Err(SchedulerError::InfeasibleTargets { detail, closest }) => {
            eprintln!("infeasible: {detail}");
            print_json(&closest)?;
            Ok(ExitCode::FAILURE)
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct SimulationSummary {
    strategy: String,
    profile: ChainProfile,
    cost: CostModel,
    steps: u64,
    total_time: f64,
    steps_per_second: f64,
    speedup_over_naive: f64,
    freeze_bound: f64,
    compute_time: f64,
    instances: u32,
    action_only_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<ecot_core::scheduler::ScheduleTrace>,
}

fn simulate_cmd(args: &SimulateArgs) -> Result<ExitCode> {
    let (profile, cost) = match (args.high, args.low) {
        (Some(high), Some(low)) => (
            ChainProfile::new(high, low),
            CostModel {
                gen_cost: args.gen_cost,
                enc_cost: args.enc_cost,
                overhead: args.overhead,
            },
        ),
        _ => {
            let c = match calibrate(&CalibrationTargets::default()) {
                Ok(c) => c,
                Err(SchedulerError::InfeasibleTargets { closest, .. }) => *closest,
                Err(e) => return Err(e.into()),
            };
            (c.profile, c.cost)
        }
    };
    let mut freezes = FreezeSchedule::default();
    for &start in &args.freeze_at {
        freezes.push(start, args.freeze_horizon)?;
    }
    let naive = simulate(Strategy::Naive, &profile, &cost, args.steps)?;
    let trace = simulate_with_freezes(args.strategy, &profile, &cost, args.steps, &freezes)?;
    print_json(&SimulationSummary {
        strategy: args.strategy.to_string(),
        profile,
        cost,
        steps: args.steps,
        total_time: trace.total_time,
        steps_per_second: trace.steps_per_second,
        speedup_over_naive: trace.speedup_over(&naive),
        freeze_bound: freeze_bound(&profile),
        compute_time: trace.compute_time,
        instances: trace.instances,
        action_only_steps: trace.action_only_steps(),
        trace: args.trace.then_some(trace),
    })?;
    Ok(ExitCode::SUCCESS)
}

fn intervene(args: &InterveneArgs) -> Result<ExitCode> {
    let text = match &args.chain {
        Some(c) => c.clone(),
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let chain = match chain::parse(text.trim()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid chain: {e}");
            return Ok(ExitCode::from(EXIT_INVALID_EDIT));
        }
    };
    let corrector: Box<dyn Corrector> = if args.remote {
        let mut http = HttpConfig::default();
        if let Some(url) = &args.bridge_url {
            http.url = url.clone();
        }
        Box::new(RemoteCorrector {
            backend: HttpBackend::new(http),
            seed: args.seed,
        })
    } else {
        Box::new(RuleCorrector)
    };
    match correct(&chain, &args.feedback, corrector.as_ref()) {
        Ok((fixed, horizon)) => {
            writeln!(io::stdout().lock(), "{}", chain::serialize(&fixed))?;
            eprintln!("freeze for {horizon} steps");
            Ok(ExitCode::SUCCESS)
        }
        Err(InterventionError::InvalidEdit(m)) => {
            eprintln!("invalid edit: {m}");
            Ok(ExitCode::from(EXIT_INVALID_EDIT))
        }
        Err(e) => bail!(e),
    }
}

fn synth_cmd(args: &SynthArgs) -> Result<ExitCode> {
    let corpus = synth::generate(&SynthConfig {
        trajectories: args.trajectories,
        seed: args.seed,
        uncalibratable: args.uncalibratable,
        ..SynthConfig::default()
    });
    fs::create_dir_all(&args.out_dir)?;
    let dataset = args.out_dir.join("dataset.jsonl");
    let fixtures = args.out_dir.join("fixtures.json");
    write_dataset(&corpus.trajectories, &dataset)?;
    corpus.fixtures.save(&fixtures)?;
    eprintln!("wrote {} and {}", dataset.display(), fixtures.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Validate { output } => validate(&output),
        Command::Stats { output } => {
            print_json(&pipeline::stats(&output)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Calibrate(a) => calibrate_cmd(&a),
        Command::Simulate(a) => simulate_cmd(&a),
        Command::Intervene(a) => intervene(&a),
        Command::Synth(a) => synth_cmd(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
