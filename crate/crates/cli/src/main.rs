use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use binaryconnect::error::{Error, Result};
use binaryconnect::inference::{error_rate, InferenceMode};
use binaryconnect::optim::Method;
use binaryconnect::packed::{model_size_report, PackedModel, PACKED_MAGIC};
use binaryconnect::selftest;
use binaryconnect::train::{
    ablation, ablation_table, export_packed, histogram_csv, train_on, weight_histogram, Checkpoint, EpochMetrics,
    RepeatSummary, Splits, StepObserver, TrainConfig, DESK_ABLATION_RATES,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "binaryconnect", version, about = "Train and run networks with binary weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file; writes checkpoint.bcck, metrics.csv and timing.csv.
    Train(TrainArgs),
    /// Error rate of a checkpoint or packed model on one split.
    Eval(EvalArgs),
    /// Export the best-validation model with packed binary weights.
    Pack {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram (64 bins over [-1, 1]) of one layer's real-valued weights.
    Hist {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient checks and packed bit-exactness checks.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Every optimizer with and without learning-rate scaling.
    Ablation(AblationArgs),
}

#[derive(Args)]
struct Overrides {
    /// Override a config key, e.g. `--set epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Dataset directory (overrides `data_dir`).
    #[arg(long)]
    data: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(d) = &self.data {
            cfg.data_dir = d.clone();
        }
        cfg.validate()
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Train with seeds seed, seed+1, … and report mean ± std test error.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    /// A `.bcck` checkpoint or a `.bcpk` packed model.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// det, real or ensemble:M.
    #[arg(long, default_value = "det")]
    mode: InferenceMode,
    /// Data and preprocessing settings; defaults to the checkpoint's own
    /// config, or the mnist-desk preset for a packed model.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    config: PathBuf,
    /// `method:lr_start:lr_end`, comma-separated, one per optimizer.
    #[arg(long)]
    rates: Option<String>,
    /// Also write the markdown table here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

struct Progress {
    quiet: bool,
}

impl StepObserver for Progress {
    fn after_epoch(&mut self, m: &EpochMetrics) {
        if !self.quiet {
            println!(
                "epoch {:>4}  lr {:.3e}  cost {:.4}  valid {:.2}%  test {:.2}%  ({:.1}s)",
                m.epoch,
                m.learning_rate,
                m.train_cost,
                100.0 * m.valid_error,
                100.0 * m.test_error,
                m.wall_seconds
            );
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&args.config)?;
    args.overrides.apply(&mut cfg)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.repeats == 0 {
        return Err(Error::Argument("--repeats must be at least 1".into()));
    }
    let data = Splits::load(&cfg)?;
    let mut summary = RepeatSummary {
        seeds: Vec::new(),
        test_errors: Vec::new(),
    };
    for r in 0..args.repeats as u64 {
        let run = TrainConfig {
            seed: cfg.seed + r,
            ..cfg.clone()
        };
        let dir = if args.repeats == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("seed-{}", run.seed))
        };
        create_dir(&dir)?;
        let (ckpt, metrics) = train_on(run.clone(), &data, &mut Progress { quiet: args.quiet })?;
        ckpt.save(dir.join("checkpoint.bcck"))?;
        metrics.write(&dir)?;
        let best = ckpt.best.as_ref().expect("at least one epoch");
        println!(
            "seed {}: best valid error {:.2}% at epoch {}, test error {:.2}%  -> {}",
            run.seed,
            100.0 * best.valid_error,
            best.epoch,
            100.0 * best.test_error,
            dir.display()
        );
        summary.seeds.push(run.seed);
        summary.test_errors.push(best.test_error);
    }
    if args.repeats > 1 {
        println!("{summary}");
    }
    Ok(())
}

fn is_packed(path: &Path) -> Result<bool> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(data.starts_with(PACKED_MAGIC))
}

fn eval(args: &EvalArgs) -> Result<()> {
    let packed = is_packed(&args.model)?;
    let ckpt = if packed { None } else { Some(Checkpoint::load(&args.model)?) };
    let mut cfg = match (&args.config, &ckpt) {
        (Some(p), _) => TrainConfig::load(p)?,
        (None, Some(c)) => c.config.clone(),
        (None, None) => TrainConfig::default(),
    };
    args.overrides.apply(&mut cfg)?;
    let data = Splits::load(&cfg)?;
    let split = match args.split {
        Split::Train => &data.train,
        Split::Valid => &data.valid,
        Split::Test => &data.test,
    };
    let err = match &ckpt {
        Some(c) => error_rate(c.model(), split, args.mode)?,
        None => error_rate(&PackedModel::load(&args.model)?, split, args.mode)?,
    };
    println!("{err:.6}");
    Ok(())
}

fn pack(input: &Path, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(input)?;
    let packed = export_packed(&ckpt, out)?;
    println!("{}", model_size_report(ckpt.model(), &packed));
    println!("wrote {}", out.display());
    Ok(())
}

fn hist(model: &Path, layer: usize, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(model)?;
    let bins = weight_histogram(ckpt.model(), layer)?;
    fs::write(out, histogram_csv(&bins)).map_err(|e| Error::io(out, e))
}

fn parse_rates(s: &str) -> Result<Vec<(Method, f64, f64)>> {
    s.split(',')
        .map(|part| {
            let bad = || Error::Argument(format!("--rates entry `{part}` is not method:lr_start:lr_end"));
            let mut it = part.trim().split(':');
            let (Some(m), Some(a), Some(b), None) = (it.next(), it.next(), it.next(), it.next()) else {
                return Err(bad());
            };
            Ok((m.parse()?, a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
        })
        .collect()
}

fn run_ablation(args: &AblationArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&args.config)?;
    args.overrides.apply(&mut cfg)?;
    let rates = match &args.rates {
        Some(r) => parse_rates(r)?,
        None => DESK_ABLATION_RATES.to_vec(),
    };
    let data = Splits::load(&cfg)?;
    let table = ablation_table(&ablation(&cfg, &data, &rates)?);
    print!("{table}");
    if let Some(out) = &args.out {
        fs::write(out, &table).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Pack { input, out } => pack(input, out),
        Command::Hist { model, layer, out } => hist(model, *layer, out),
        Command::Selftest { seed } => {
            let report = selftest::run(*seed);
            println!("{report}");
            if report.passed() {
                Ok(())
            } else {
                Err(Error::Numeric("selftest failed".into()))
            }
        }
        Command::Ablation(a) => run_ablation(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
