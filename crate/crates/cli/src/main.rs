use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use grpol_core::metrics::{compare_by_length, CsvSink};
use grpol_core::scorer::score_stream;
use grpol_core::{run_experiment, ExperimentConfig, RewardMode, RunSummary, StepMetrics};

/// GRPO-lambda experiments on the toy reasoning-length environment.
#[derive(Parser)]
#[command(name = "grpol", version)]
struct Cli {
    /// Experiment config (TOML). Defaults to the built-in toy config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in preset used when no --config is given: toy or paper.
    #[arg(long, global = true, default_value = "toy")]
    preset: String,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy; writes the metrics CSV and final params JSON.
    Train {
        /// grpo | grpo-lambda | all-length-penalty
        #[arg(long)]
        mode: Option<RewardMode>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train all three modes on the same seed; writes a long-format CSV.
    Compare {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score rollout logs (line-delimited JSON).
    Score {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to stdout; the batch summary then goes to stderr.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long = "lambda")]
        lambda_frac: Option<f64>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => match ExperimentConfig::preset(&cli.preset) {
            Some(cfg) => cfg,
            None => bail!("unknown preset `{}` (expected toy or paper)", cli.preset),
        },
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn train(mut cfg: ExperimentConfig, mode: Option<RewardMode>, steps: Option<usize>) -> Result<()> {
    if let Some(mode) = mode {
        cfg.reward.mode = mode;
    }
    if let Some(steps) = steps {
        cfg.train.steps = steps;
    }
    cfg.validate()?;
    let metrics_path = cfg.output.metrics_path();
    let mut sink = CsvSink::new(create(&metrics_path)?)?;
    let result = run_experiment(cfg.train, cfg.reward, cfg.env, cfg.init, &mut sink)?;

    let params_path = cfg.output.params_path();
    let mut out = create(&params_path)?;
    serde_json::to_writer_pretty(&mut out, &result.final_params)?;
    writeln!(out)?;
    out.flush()?;

    match RunSummary::new(&result.metrics) {
        Some(summary) => println!("{}: {summary}", cfg.reward.mode.as_str()),
        None => println!("{}: no steps run", cfg.reward.mode.as_str()),
    }
    Ok(())
}

fn compare(mut cfg: ExperimentConfig, steps: Option<usize>) -> Result<()> {
    if let Some(steps) = steps {
        cfg.train.steps = steps;
    }
    cfg.validate()?;
    let path = cfg.output.compare_path();
    let mut out = create(&path)?;
    writeln!(out, "mode,step,accuracy,mean_length")?;
    let mut runs: Vec<(RewardMode, Vec<StepMetrics>)> = Vec::new();
    for mode in RewardMode::ALL {
        let mut reward = cfg.reward;
        reward.mode = mode;
        let result = run_experiment(cfg.train, reward, cfg.env, cfg.init, &mut Vec::new())?;
        for m in &result.metrics {
            writeln!(out, "{},{},{},{}", mode.as_str(), m.step, m.mean_accuracy, m.mean_length)?;
        }
        if let Some(summary) = RunSummary::new(&result.metrics) {
            println!("{}: {summary}", mode.as_str());
        }
        runs.push((mode, result.metrics));
    }
    out.flush()?;

    let of = |mode: RewardMode| &runs.iter().find(|(m, _)| *m == mode).expect("all modes ran").1;
    let bins = compare_by_length(
        &[of(RewardMode::GrpoLambda)],
        &[of(RewardMode::AllGroupsLengthPenalty)],
        1.25,
        10,
    );
    let wins = bins.iter().filter(|b| b.accuracy_a >= b.accuracy_b).count();
    println!(
        "grpo-lambda at or above all-length-penalty in {wins} of {} shared length bins",
        bins.len()
    );
    Ok(())
}

fn score(
    cfg: ExperimentConfig,
    input: PathBuf,
    output: Option<PathBuf>,
    alpha: Option<f64>,
    lambda_frac: Option<f64>,
) -> Result<()> {
    let mut reward = cfg.reward;
    if let Some(alpha) = alpha {
        reward.alpha = alpha;
    }
    if let Some(lambda_frac) = lambda_frac {
        reward.lambda_frac = lambda_frac;
    }
    reward.validate()?;
    let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
    let reader = BufReader::new(file);
    let context = || format!("scoring {}", input.display());
    let summaries = match &output {
        Some(path) => score_stream(reader, create(path)?, &reward).with_context(context)?,
        None => score_stream(reader, io::stdout().lock(), &reward).with_context(context)?,
    };
    for (i, s) in summaries.iter().enumerate() {
        let text = format!("batch {}: {s}", i + 1);
        if output.is_some() {
            println!("{text}");
        } else {
            eprintln!("{text}");
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("GRPOL_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .with_context(|| format!("GRPOL_THREADS must be a non-negative integer, got `{value}`"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Train { mode, steps } => train(cfg, mode, steps),
        Command::Compare { steps } => compare(cfg, steps),
        Command::Score {
            input,
            output,
            alpha,
            lambda_frac,
        } => score(cfg, input, output, alpha, lambda_frac),
    }
}

fn main() -> ExitCode {
    // Fallback warnings fire every step under all-length-penalty; RUST_LOG=warn shows them.
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn,grpol_core::reward=error")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
