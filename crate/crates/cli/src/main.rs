//! Single-binary pipeline driver: `generate`, `train`, `eval`, `bench`.
//!
//! Exit codes: 0 success, 2 usage (argument parsing), 3 I/O or data
//! corruption, 4 training divergence, 5 incompatibility (width or shape
//! mismatches between weights, models, and data).

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ring_core::bench::bench_step_latency;
use ring_core::eval::{ablation_grid, mae_deg, rate_sweep, EvalError};
use ring_core::formats::{read_dataset, read_weights, write_dataset, write_weights, FormatError};
use ring_core::net::{ring_apply, NetError, RingParams};
use ring_core::rcmg::{generate_batch, AblationFlags, RcmgError, RcmgRanges};
use ring_core::training::{train_with, DataSource, TrainConfig, TrainError};

const EXIT_IO: u8 = 3;
const EXIT_DIVERGED: u8 = 4;
const EXIT_INCOMPATIBLE: u8 = 5;

#[derive(Parser)]
#[command(
    name = "ring",
    about = "Inertial orientation estimation for kinematic chains: data generation, training, evaluation, benchmarking",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of simulated training pairs.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of sequences.
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Timesteps per sequence (duration adapts to the drawn rate).
        #[arg(long, default_value_t = 6000)]
        timesteps: usize,
        /// Sampling-rate set: "40..200:20", "40,60,100", or a single value.
        #[arg(long, default_value = "40..200:20")]
        rates: String,
        /// Comma-separated challenge flags: nonrigid, misaligned, sparse
        /// (or "none").
        #[arg(long, default_value = "none")]
        flags: String,
        /// Bodies in the chain.
        #[arg(long, default_value_t = 3)]
        bodies: usize,
        /// Randomization-ranges file (key = value, SI units).
        #[arg(long)]
        ranges: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset and write the weights.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// GRU state width per cell.
        #[arg(long = "H", default_value_t = 256)]
        hidden: usize,
        /// Message width.
        #[arg(long = "M", default_value_t = 128)]
        message: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 3e-4)]
        lr: f64,
        /// Loss warm-up exclusion in timesteps (default: one fifth of T).
        #[arg(long)]
        warmup: Option<usize>,
        /// Sequences held out of training for validation.
        #[arg(long, default_value_t = 8)]
        val_split: usize,
        #[arg(long, default_value_t = 50)]
        val_every: usize,
        /// Truncated-unroll segment length (default: full backprop).
        #[arg(long)]
        tbptt: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        clip: f64,
        /// Disable the cosine step-size decay.
        #[arg(long)]
        no_cosine: bool,
        #[arg(long)]
        out_weights: PathBuf,
        /// Append line-delimited log records here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate weights on a dataset; optionally sweep rates or run the
    /// ablation grid.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Seconds excluded from the start of every sequence.
        #[arg(long, default_value_t = 5.0)]
        exclude: f64,
        /// Require these widths in the weights file.
        #[arg(long = "H")]
        hidden: Option<usize>,
        #[arg(long = "M")]
        message: Option<usize>,
        /// Evaluate across this rate set by resampling the dataset.
        #[arg(long)]
        sweep_rates: Option<String>,
        /// Write sweep results as CSV plot data.
        #[arg(long)]
        plot_out: Option<PathBuf>,
        /// Run the eight-row challenge-flag grid on fresh synthetic data.
        #[arg(long)]
        ablation: bool,
        #[arg(long, default_value_t = 3)]
        ablation_seeds: u64,
        #[arg(long, default_value_t = 2)]
        ablation_sequences: usize,
        #[arg(long, default_value_t = 500)]
        ablation_timesteps: usize,
        #[arg(long)]
        ranges: Option<PathBuf>,
    },
    /// Measure per-step latency and print real-time verdicts per rate.
    Bench {
        /// Weights to benchmark; a fresh initialization is used if absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long = "H", default_value_t = 256)]
        hidden: usize,
        #[arg(long = "M", default_value_t = 128)]
        message: usize,
        #[arg(long = "N", default_value_t = 3)]
        bodies: usize,
        #[arg(long, default_value_t = 2000)]
        iterations: usize,
        #[arg(long, default_value_t = 200)]
        warmup: usize,
        #[arg(long, default_value = "40..200:20")]
        rates: String,
    },
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<FormatError> for CliError {
    fn from(err: FormatError) -> Self {
        let code = match err {
            FormatError::WidthMismatch { .. } | FormatError::TensorMismatch { .. } => {
                EXIT_INCOMPATIBLE
            }
            _ => EXIT_IO,
        };
        Self { code, message: err.to_string() }
    }
}

impl From<TrainError> for CliError {
    fn from(err: TrainError) -> Self {
        let code = match err {
            TrainError::Diverged { .. } | TrainError::NonFiniteGradient { .. } => EXIT_DIVERGED,
            TrainError::ShapeMismatch { .. } | TrainError::Net(_) => EXIT_INCOMPATIBLE,
            _ => EXIT_IO,
        };
        Self { code, message: err.to_string() }
    }
}

impl From<EvalError> for CliError {
    fn from(err: EvalError) -> Self {
        let code = match err {
            EvalError::Net(_) | EvalError::ShapeMismatch { .. } => EXIT_INCOMPATIBLE,
            EvalError::EmptyWindow { .. } => 2,
            EvalError::Rcmg(_) => EXIT_IO,
        };
        Self { code, message: err.to_string() }
    }
}

impl From<NetError> for CliError {
    fn from(err: NetError) -> Self {
        Self { code: EXIT_INCOMPATIBLE, message: err.to_string() }
    }
}

impl From<RcmgError> for CliError {
    fn from(err: RcmgError) -> Self {
        Self { code: EXIT_IO, message: err.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        Self { code: EXIT_IO, message: err.to_string() }
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("RING_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("ring: ignoring invalid RING_THREADS value '{threads}'");
            }
        }
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("ring: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate { seed, count, timesteps, rates, flags, bodies, ranges, out } => {
            cmd_generate(seed, count, timesteps, &rates, &flags, bodies, ranges, out)
        }
        Command::Train {
            data,
            hidden,
            message,
            steps,
            seed,
            batch,
            lr,
            warmup,
            val_split,
            val_every,
            tbptt,
            clip,
            no_cosine,
            out_weights,
            log,
        } => cmd_train(
            data, hidden, message, steps, seed, batch, lr, warmup, val_split, val_every, tbptt,
            clip, no_cosine, out_weights, log,
        ),
        Command::Eval {
            data,
            weights,
            exclude,
            hidden,
            message,
            sweep_rates,
            plot_out,
            ablation,
            ablation_seeds,
            ablation_sequences,
            ablation_timesteps,
            ranges,
        } => cmd_eval(
            data,
            weights,
            exclude,
            hidden,
            message,
            sweep_rates,
            plot_out,
            ablation,
            ablation_seeds,
            ablation_sequences,
            ablation_timesteps,
            ranges,
        ),
        Command::Bench { weights, hidden, message, bodies, iterations, warmup, rates } => {
            cmd_bench(weights, hidden, message, bodies, iterations, warmup, &rates)
        }
    }
}

// ─── Argument parsing helpers ────────────────────────────────────────────────

/// "40..200:20", "40,60,100", or "100".
fn parse_rates(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |it: &str| CliError::usage(format!("cannot parse rate spec '{it}'"));
    if let Some((range, step)) = spec.split_once(':') {
        let (lo, hi) =
            range.split_once("..").ok_or_else(|| bad(spec))?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad(spec))?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad(spec))?;
        let step: f64 = step.trim().parse().map_err(|_| bad(spec))?;
        if step <= 0.0 || hi < lo {
            return Err(bad(spec));
        }
        let mut rates = Vec::new();
        let mut rate = lo;
        while rate <= hi + 1e-9 {
            rates.push(rate);
            rate += step;
        }
        return Ok(rates);
    }
    let rates: Result<Vec<f64>, _> =
        spec.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let rates = rates.map_err(|_| bad(spec))?;
    if rates.is_empty() || rates.iter().any(|r| *r <= 0.0) {
        return Err(bad(spec));
    }
    Ok(rates)
}

fn parse_flags(spec: &str) -> Result<AblationFlags, CliError> {
    let mut flags = AblationFlags::ALL_OFF;
    for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match token {
            "none" => {}
            "nonrigid" => flags.nonrigid = true,
            "misaligned" => flags.misaligned = true,
            "sparse" => flags.sparse = true,
            other => {
                return Err(CliError::usage(format!(
                    "unknown flag '{other}' (expected nonrigid, misaligned, sparse, or none)"
                )))
            }
        }
    }
    Ok(flags)
}

fn load_ranges(path: Option<PathBuf>) -> Result<RcmgRanges, CliError> {
    match path {
        None => Ok(RcmgRanges::default()),
        Some(path) => Ok(RcmgRanges::from_file(&path)?),
    }
}

// ─── Subcommands ─────────────────────────────────────────────────────────────

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    seed: u64,
    count: usize,
    timesteps: usize,
    rates: &str,
    flags: &str,
    bodies: usize,
    ranges: Option<PathBuf>,
    out: PathBuf,
) -> Result<(), CliError> {
    if count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let rate_set = parse_rates(rates)?;
    let flags = parse_flags(flags)?;
    let ranges = load_ranges(ranges)?;
    let pairs = generate_batch(seed, count, timesteps, bodies, flags, &rate_set, &ranges)?;
    write_dataset(&out, &pairs)?;

    let mut histogram: std::collections::BTreeMap<u64, usize> = Default::default();
    for pair in &pairs {
        *histogram.entry(pair.rate_hz.round() as u64).or_default() += 1;
    }
    println!("wrote {} sequences of {} timesteps to {}", pairs.len(), timesteps, out.display());
    println!("flags: {flags}");
    println!("rate histogram:");
    for (rate, n) in histogram {
        println!("  {rate:>4} Hz  {n}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: PathBuf,
    hidden: usize,
    message: usize,
    steps: usize,
    seed: u64,
    batch: usize,
    lr: f64,
    warmup: Option<usize>,
    val_split: usize,
    val_every: usize,
    tbptt: Option<usize>,
    clip: f64,
    no_cosine: bool,
    out_weights: PathBuf,
    log: Option<PathBuf>,
) -> Result<(), CliError> {
    let pairs = read_dataset(&data)?;
    if pairs.is_empty() {
        return Err(CliError::usage("dataset holds no sequences"));
    }
    let timesteps = pairs[0].timesteps();
    let warmup_steps = warmup.unwrap_or_else(|| (timesteps / 5).max(1).min(timesteps - 1));
    let config = TrainConfig {
        hidden,
        message,
        seed,
        steps,
        batch_size: batch,
        warmup_steps,
        learning_rate: lr,
        cosine_decay: !no_cosine,
        clip_norm: clip,
        tbptt_chunk: tbptt,
        val_every,
        val_sequences: val_split,
        source: DataSource::Dataset { pairs, validation_split: val_split },
    };
    let mut log_file = match &log {
        Some(path) => {
            Some(std::fs::OpenOptions::new().create(true).append(true).open(path)?)
        }
        None => None,
    };
    let outcome = train_with(&config, |entry| {
        let line = entry.to_line();
        println!("{line}");
        if let Some(file) = log_file.as_mut() {
            let _ = writeln!(file, "{line}");
        }
    })?;
    write_weights(&out_weights, &outcome.params)?;
    println!(
        "trained H={hidden} M={message} for {steps} steps ({} parameters); weights written to {}",
        outcome.params.param_count(),
        out_weights.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    data: PathBuf,
    weights: PathBuf,
    exclude: f64,
    hidden: Option<usize>,
    message: Option<usize>,
    sweep_rates: Option<String>,
    plot_out: Option<PathBuf>,
    ablation: bool,
    ablation_seeds: u64,
    ablation_sequences: usize,
    ablation_timesteps: usize,
    ranges: Option<PathBuf>,
) -> Result<(), CliError> {
    let expected = match (hidden, message) {
        (Some(h), Some(m)) => Some((h, m)),
        (None, None) => None,
        _ => return Err(CliError::usage("pass both --H and --M or neither")),
    };
    let params = read_weights(&weights, expected)?;
    let pairs = read_dataset(&data)?;
    if pairs.is_empty() {
        return Err(CliError::usage("dataset holds no sequences"));
    }

    let mut per_sequence = Vec::with_capacity(pairs.len());
    let nodes = pairs[0].nodes();
    let mut per_body_sums = vec![0.0; nodes];
    for pair in &pairs {
        let predicted = ring_apply(&pair.x, &pair.parents, &params)?;
        let report = mae_deg(&predicted, &pair.y, &pair.parents, pair.rate_hz, exclude)?;
        for (sum, v) in per_body_sums.iter_mut().zip(&report.per_body_deg) {
            *sum += v;
        }
        per_sequence.push(report.overall_deg);
    }
    let mean = per_sequence.iter().sum::<f64>() / per_sequence.len() as f64;
    let std = if per_sequence.len() > 1 {
        (per_sequence.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (per_sequence.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    println!("sequences\tmae_deg\tstd_deg\texclude_s");
    println!("{}\t{mean:.3}\t{std:.3}\t{exclude}", per_sequence.len());
    println!("per-body mean MAE (deg):");
    for (node, sum) in per_body_sums.iter().enumerate() {
        println!("  body {}\t{:.3}", node + 1, sum / per_sequence.len() as f64);
    }

    if let Some(spec) = sweep_rates {
        let rates = parse_rates(&spec)?;
        let points = rate_sweep(&params, &pairs, &rates, exclude)?;
        println!("rate_hz\tmae_deg\tstd_deg");
        for p in &points {
            println!("{:.0}\t{:.3}\t{:.3}", p.rate_hz, p.mean_mae_deg, p.std_mae_deg);
        }
        if let Some(path) = plot_out {
            let mut file = std::fs::File::create(&path)?;
            writeln!(file, "rate_hz,mae_deg,std_deg")?;
            for p in &points {
                writeln!(file, "{},{},{}", p.rate_hz, p.mean_mae_deg, p.std_mae_deg)?;
            }
            println!("sweep plot data written to {}", path.display());
        }
    }

    if ablation {
        let ranges = load_ranges(ranges)?;
        let seeds: Vec<u64> = (0..ablation_seeds).collect();
        let rate = pairs[0].rate_hz;
        let cells = ablation_grid(
            &params,
            &seeds,
            ablation_sequences,
            ablation_timesteps,
            rate,
            exclude.min(0.4 * ablation_timesteps as f64 / rate),
            &ranges,
        )?;
        println!("nonrigid\tmisaligned\tsparse\tmae_deg\tstd_deg");
        for cell in cells {
            let mark = |b: bool| if b { "yes" } else { "no" };
            println!(
                "{}\t{}\t{}\t{:.3}\t{:.3}",
                mark(cell.flags.nonrigid),
                mark(cell.flags.misaligned),
                mark(cell.flags.sparse),
                cell.mean_mae_deg,
                cell.std_mae_deg
            );
        }
    }
    Ok(())
}

fn cmd_bench(
    weights: Option<PathBuf>,
    hidden: usize,
    message: usize,
    bodies: usize,
    iterations: usize,
    warmup: usize,
    rates: &str,
) -> Result<(), CliError> {
    if iterations == 0 {
        return Err(CliError::usage("--iterations must be at least 1"));
    }
    let params = match weights {
        Some(path) => read_weights(&path, None)?,
        None => RingParams::init(hidden, message, 0),
    };
    let report = bench_step_latency(&params, bodies, iterations, warmup);
    println!(
        "step latency over {} iterations (N={bodies}, H={}, M={}):",
        report.iterations, params.hidden, params.message
    );
    println!("  median  {:>10.2} us", report.median_us);
    println!("  p99     {:>10.2} us", report.p99_us);
    println!("  mean    {:>10.2} us", report.mean_us);
    println!("  min/max {:>10.2} / {:.2} us", report.min_us, report.max_us);
    println!("  max sustainable rate {:.0} Hz", report.max_rate_hz);
    println!("rate_hz\tbudget_us\tverdict");
    for rate in parse_rates(rates)? {
        let verdict = if report.realtime_at(rate) { "real-time" } else { "too slow" };
        println!("{rate:.0}\t{:.0}\t{verdict}", 1e6 / rate);
    }
    Ok(())
}
