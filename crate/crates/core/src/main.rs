//! `setrl` command line: dataset collection, training, evaluation and
//! tooling around the highway lane-change experiments.
//!
//! Exit codes: 0 success, 2 invalid arguments or configuration, 3 runtime
//! failure.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use setrl::encoders::{EncoderKind, NetConfig};
use setrl::experiments::dataset::{collect_dataset, filter_dataset, read_dataset, CollectConfig};
use setrl::experiments::eval::{evaluate, run_baseline, BaselineKind, CheckpointAgent, EvalSweep, NoiseSpec};
use setrl::experiments::gradcheck::gradient_suite;
use setrl::experiments::report::{load_report, save_report};
use setrl::experiments::search::{random_search, SearchConfig, SearchSpace};
use setrl::ppo::{train_ppo, HighwayEpisodes, PpoAgent, PpoConfig, PpoOutputs};
use setrl::qlearning::{train_offline, QEnsemble, ReplayBuffer, TrainConfig, TrainOutputs};
use setrl_nn::GradCheckConfig;

#[derive(Parser)]
#[command(name = "setrl", version, about = "Set-input reinforcement learning for highway lane changes")]
struct Cli {
    /// TOML file with [collect], [train], [ppo], [episodes], [eval], [search] and [network] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect transitions with the random lane-change agent.
    Collect(CollectArgs),
    /// Keep transitions with few surrounding vehicles.
    Filter(FilterArgs),
    /// Train a DQN ensemble offline or a PPO policy online.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the scenario sweep.
    Evaluate(EvaluateArgs),
    /// Evaluate a scripted baseline on the scenario sweep.
    Baseline(BaselineArgs),
    /// Random search over network layouts.
    Search(SearchArgs),
    /// Finite-difference gradient checks of all layers and networks.
    Gradcheck(GradcheckArgs),
    /// Summarize evaluation reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lanes: Option<usize>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Largest number of visible vehicles kept.
    #[arg(long, default_value_t = 6)]
    max_vehicles: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Dqn,
    Ppo,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "dqn")]
    algo: Algo,
    #[arg(long, default_value = "deepset")]
    encoder: String,
    /// Dataset file (DQN only).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Final checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Gradient steps (DQN) or environment steps (PPO).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Directory for intermediate checkpoints.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Interval of intermediate checkpoints, in gradient steps (DQN) or updates (PPO).
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Add a wall-clock column to the metrics CSV (not reproducible).
    #[arg(long)]
    wall_time: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    lanes: Option<usize>,
    /// Comma-separated vehicle counts.
    #[arg(long, value_delimiter = ',')]
    vehicles: Option<Vec<usize>>,
    /// Number of evaluation seeds, counted from the first default seed.
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    sweep: SweepArgs,
    /// Sensor noise `SIGMA` for both dr and dv, or `SIGMA_DR,SIGMA_DV`.
    #[arg(long, value_delimiter = ',', num_args = 1..=2)]
    noise: Option<Vec<f64>>,
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    /// `no-lane-change` or `rule-based`.
    #[arg(long)]
    kind: String,
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    encoder: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    budget: Option<usize>,
    /// Gradient steps per candidate.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ranked results as JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 64)]
    samples: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Report CSVs to summarize.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    collect: CollectConfig,
    train: TrainConfig,
    ppo: PpoConfig,
    episodes: HighwayEpisodes,
    eval: EvalSweep,
    search: SearchConfig,
    network: Option<NetConfig>,
}

/// Bad input detected before any work starts; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Invalid(String);

fn invalid(msg: impl std::fmt::Display) -> anyhow::Error {
    Invalid(msg.to_string()).into()
}

fn load_config(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("reading {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn parse_kind(s: &str) -> anyhow::Result<EncoderKind> {
    s.parse().map_err(invalid)
}

/// Seeds and settings behind an output file, written next to it.
fn write_meta(out: &Path, meta: &impl Serialize) -> anyhow::Result<()> {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(&name, text + "\n").with_context(|| format!("writing {}", PathBuf::from(&name).display()))
}

fn network_for(kind: EncoderKind, file: &FileConfig) -> anyhow::Result<NetConfig> {
    match &file.network {
        Some(net) if net.kind() != kind => Err(invalid(format!(
            "[network] describes a {} encoder but --encoder is {kind}",
            net.kind()
        ))),
        Some(net) => Ok(net.clone()),
        None => Ok(NetConfig::q_network(kind)),
    }
}

fn apply_sweep(mut sweep: EvalSweep, args: &SweepArgs) -> anyhow::Result<EvalSweep> {
    if let Some(l) = args.lanes {
        sweep.lanes = l;
    }
    if let Some(v) = &args.vehicles {
        sweep.vehicle_counts = v.clone();
    }
    if let Some(n) = args.seeds {
        let first = EvalSweep::default().seeds[0];
        sweep.seeds = (0..n as u64).map(|i| first + i).collect();
    }
    if !matches!(sweep.lanes, 3 | 5) {
        return Err(invalid(format!("--lanes must be 3 or 5, got {}", sweep.lanes)));
    }
    if sweep.vehicle_counts.is_empty() || sweep.seeds.is_empty() {
        return Err(invalid("the sweep needs at least one vehicle count and one seed"));
    }
    Ok(sweep)
}

fn collect(args: CollectArgs, file: FileConfig) -> anyhow::Result<()> {
    let mut cfg = file.collect;
    cfg.samples = args.samples.unwrap_or(cfg.samples);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.lanes = args.lanes.unwrap_or(cfg.lanes);
    cfg.validate().map_err(invalid)?;
    let n = collect_dataset(&cfg, &args.out)?;
    write_meta(&args.out, &serde_json::json!({ "command": "collect", "collect": cfg }))?;
    println!("wrote {n} transitions to {}", args.out.display());
    Ok(())
}

fn filter(args: FilterArgs) -> anyhow::Result<()> {
    let (read, kept) = filter_dataset(&args.input, &args.out, args.max_vehicles)?;
    println!("kept {kept} of {read} transitions with at most {} vehicles", args.max_vehicles);
    Ok(())
}

fn train(args: TrainArgs, file: FileConfig) -> anyhow::Result<()> {
    let kind = parse_kind(&args.encoder)?;
    let net = network_for(kind, &file)?;
    let mut metrics = args
        .metrics
        .as_ref()
        .map(|p| File::create(p).map(BufWriter::new).with_context(|| format!("creating {}", p.display())))
        .transpose()?;
    let metrics_sink = metrics.as_mut().map(|w| w as &mut dyn std::io::Write);
    match args.algo {
        Algo::Dqn => {
            let mut cfg = file.train;
            cfg.steps = args.steps.unwrap_or(cfg.steps);
            cfg.seed = args.seed.unwrap_or(cfg.seed);
            cfg.checkpoint_every = args.checkpoint_every.unwrap_or(cfg.checkpoint_every);
            cfg.validate().map_err(invalid)?;
            let data = args.data.as_ref().ok_or_else(|| invalid("--data is required for --algo dqn"))?;
            let (header, transitions) = read_dataset(data)?;
            eprintln!("training {kind} DQN on {} transitions for {} steps", transitions.len(), cfg.steps);
            let mut buffer = ReplayBuffer::from_transitions(kind, &transitions, cfg.seed);
            let mut ens: QEnsemble = QEnsemble::new(&net, cfg.clone()).map_err(invalid)?;
            train_offline(
                &mut ens,
                &mut buffer,
                TrainOutputs {
                    metrics: metrics_sink,
                    checkpoint_dir: args.checkpoint_dir.clone(),
                    wall_time: args.wall_time,
                },
            )?;
            ens.save(&args.out)?;
            let hash: String = header.config_hash.iter().map(|b| format!("{b:02x}")).collect();
            write_meta(
                &args.out,
                &serde_json::json!({ "command": "train", "algo": "dqn", "train": cfg, "net": net, "dataset_config_hash": hash }),
            )?;
        }
        Algo::Ppo => {
            let mut cfg = file.ppo;
            cfg.steps = args.steps.unwrap_or(cfg.steps);
            cfg.seed = args.seed.unwrap_or(cfg.seed);
            cfg.validate().map_err(invalid)?;
            let mut episodes = file.episodes;
            episodes.seed = cfg.seed;
            eprintln!("training {kind} PPO for {} environment steps", cfg.steps);
            let mut agent = PpoAgent::new(&net, cfg.clone()).map_err(invalid)?;
            let every = args.checkpoint_every.unwrap_or(0) as u64;
            train_ppo(
                &mut agent,
                |k| episodes.spawn(k),
                PpoOutputs {
                    metrics: metrics_sink,
                    checkpoint_dir: args.checkpoint_dir.clone().map(|d| (d, every)),
                    wall_time: args.wall_time,
                },
            )?;
            agent.save(&args.out)?;
            write_meta(
                &args.out,
                &serde_json::json!({ "command": "train", "algo": "ppo", "ppo": cfg, "episodes": episodes, "net": net }),
            )?;
        }
    }
    if let Some(mut w) = metrics {
        std::io::Write::flush(&mut w)?;
    }
    println!("saved checkpoint to {}", args.out.display());
    Ok(())
}

fn print_summary(report: &setrl::experiments::eval::EvalReport) {
    for a in report.aggregates() {
        println!(
            "lanes {} n {:>3}: {:8.2} +- {:6.2} ({} episodes, {:.1} lane changes)",
            a.lanes, a.vehicles, a.mean, a.std, a.episodes, a.mean_lane_changes
        );
    }
    println!("overall mean return {:.2}", report.mean_return());
}

fn evaluate_cmd(args: EvaluateArgs, file: FileConfig) -> anyhow::Result<()> {
    let mut sweep = apply_sweep(file.eval, &args.sweep)?;
    sweep.noise_seed = args.noise_seed.unwrap_or(sweep.noise_seed);
    let noise = match args.noise.as_deref() {
        None => NoiseSpec::default(),
        Some([s]) => NoiseSpec::new(*s, *s).map_err(invalid)?,
        Some([dr, dv]) => NoiseSpec::new(*dr, *dv).map_err(invalid)?,
        Some(_) => return Err(invalid("--noise takes one or two values")),
    };
    let agent = CheckpointAgent::load(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))
        .map_err(|e| invalid(format!("{e:#}")))?;
    let report = evaluate(&agent, &sweep, &noise)?;
    save_report(&report, &args.out)?;
    write_meta(
        &args.out,
        &serde_json::json!({ "command": "evaluate", "checkpoint": args.checkpoint, "sweep": sweep, "noise": noise }),
    )?;
    print_summary(&report);
    Ok(())
}

fn baseline(args: BaselineArgs, file: FileConfig) -> anyhow::Result<()> {
    let kind: BaselineKind = args.kind.parse().map_err(invalid)?;
    let sweep = apply_sweep(file.eval, &args.sweep)?;
    let report = run_baseline(kind, &sweep)?;
    save_report(&report, &args.out)?;
    write_meta(&args.out, &serde_json::json!({ "command": "baseline", "kind": kind, "sweep": sweep }))?;
    print_summary(&report);
    Ok(())
}

fn search(args: SearchArgs, file: FileConfig) -> anyhow::Result<()> {
    let kind = parse_kind(&args.encoder)?;
    let mut cfg = file.search;
    cfg.budget = args.budget.unwrap_or(cfg.budget);
    cfg.train.steps = args.steps.unwrap_or(cfg.train.steps);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.train.validate().map_err(invalid)?;
    if cfg.budget == 0 {
        return Err(invalid("--budget must be positive"));
    }
    let (_, transitions) = read_dataset(&args.data)?;
    let space = SearchSpace::for_kind(kind);
    let ranked = random_search(&space, &transitions, &cfg)?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&ranked)? + "\n")?;
    write_meta(&args.out, &serde_json::json!({ "command": "search", "encoder": kind, "search": cfg }))?;
    for (rank, r) in ranked.iter().enumerate() {
        println!("{:>2}. {:8.2} {:?}", rank + 1, r.mean_return, r.point);
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> anyhow::Result<()> {
    let config = GradCheckConfig { samples: args.samples, seed: args.seed, ..GradCheckConfig::default() };
    let cases = gradient_suite(args.seed, &config)?;
    let mut failed = 0;
    for c in &cases {
        let ok = c.max_rel_error < args.tolerance;
        failed += !ok as usize;
        println!(
            "{} {:<14} max rel error {:.3e} over {} coordinates",
            if ok { "PASS" } else { "FAIL" },
            c.name,
            c.max_rel_error,
            c.checked
        );
    }
    if failed > 0 {
        bail!("{failed} gradient checks exceeded {}", args.tolerance);
    }
    Ok(())
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    for path in &args.inputs {
        let r = load_report(path).with_context(|| format!("reading {}", path.display()))?;
        println!("{}", path.display());
        print_summary(&r);
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Collect(a) => collect(a, file),
        Command::Filter(a) => filter(a),
        Command::Train(a) => train(a, file),
        Command::Evaluate(a) => evaluate_cmd(a, file),
        Command::Baseline(a) => baseline(a, file),
        Command::Search(a) => search(a, file),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
