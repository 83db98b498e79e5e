//! `univnet` command-line tool: feature extraction, training, inference,
//! evaluation, benchmarking and gradient checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use univnet::dsp::{
    compute_norm_stats, load_wav, log_mel, read_features, read_stats, write_features, write_stats,
    write_wav, AudioBuffer, NormStats,
};
use univnet::generator::{Generator, GeneratorConfig};
use univnet::gradcheck;
use univnet::metrics::{benchmark, evaluate};
use univnet::nn::Module;
use univnet::training::{self, list_wavs, Checkpoint, Dataset, TrainConfig, Trainer};
use univnet::{Error, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "univnet", version, about = "GAN vocoder with location-variable convolutions")]
struct Cli {
    /// Seed for every random draw; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training configuration JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads. The engine is single-threaded; only 1 is accepted.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute normalized log-mel features and corpus statistics.
    Extract(ExtractArgs),
    /// Train a generator/discriminator pair on a directory of WAVs.
    Train(TrainArgs),
    /// Vocode a feature file, or resynthesize a WAV (copy-synthesis).
    Infer(InferArgs),
    /// Spectral RMSE between reference and generated WAVs.
    EvalRmse(EvalArgs),
    /// Generation speed of a generator, as JSON.
    Bench(BenchArgs),
    /// Finite-difference check of every differentiable op.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    wav_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    stats_out: PathBuf,
    /// Normalize with existing statistics instead of the corpus's own.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    wav_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Precomputed features from `extract`; requires --stats.
    #[arg(long, requires = "stats")]
    feature_dir: Option<PathBuf>,
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Continue from a checkpoint; its stored config wins over --config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override total_steps.
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["mel", "wav"])))]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Normalized feature file (UVF1).
    #[arg(long)]
    mel: Option<PathBuf>,
    /// WAV to resynthesize with the checkpoint's statistics.
    #[arg(long)]
    wav: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Statistics the feature file was normalized with; must match the
    /// checkpoint's.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("pairs").required(true).args(["ref_dir", "reference"])))]
struct EvalArgs {
    /// Directory of reference WAVs, paired by file name with --gen-dir.
    #[arg(long, requires = "gen_dir")]
    ref_dir: Option<PathBuf>,
    #[arg(long)]
    gen_dir: Option<PathBuf>,
    /// A single reference WAV, paired with --generated.
    #[arg(long, requires = "generated")]
    reference: Option<PathBuf>,
    #[arg(long)]
    generated: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Benchmark a trained generator; otherwise a fresh one of --channels.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    /// Seconds of audio generated per run.
    #[arg(long, default_value_t = 1.0)]
    seconds: f64,
    #[arg(long, default_value_t = univnet::metrics::MIN_BENCH_RUNS)]
    runs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn write_json(value: &impl serde::Serialize, out: Option<&Path>) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| usage(e.to_string()))?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| {
            Failure::from(Error::Input(format!("{}: {e}", path.display())))
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Input(format!("{}: {e}", dir.display())).into())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn run_extract(args: &ExtractArgs) -> CliResult {
    let wavs = list_wavs(&args.wav_dir)?;
    let mut mels = Vec::new();
    let mut failures = Vec::new();
    for path in &wavs {
        match load_wav(path).and_then(|a| log_mel(&a, None)) {
            Ok(m) => mels.push((stem(path), m)),
            Err(e) => failures.push(format!("{}: {e}", path.display())),
        }
    }
    if !failures.is_empty() {
        return Err(Failure {
            code: 2,
            message: format!("{} of {} files failed:\n{}", failures.len(), wavs.len(), failures.join("\n")),
        });
    }
    let stats = match &args.stats {
        Some(p) => read_stats(p)?,
        None => {
            let raw: Vec<_> = mels.iter().map(|(_, m)| m.clone()).collect();
            compute_norm_stats(&raw)?
        }
    };
    create_dir(&args.out_dir)?;
    for (name, mel) in &mels {
        write_features(args.out_dir.join(format!("{name}.uvf")), &mel.normalize(&stats)?)?;
    }
    write_stats(&args.stats_out, &stats)?;
    eprintln!("extracted {} files", mels.len());
    Ok(())
}

fn train_config(cli: &Cli) -> CliResult<TrainConfig> {
    let mut config = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run_train(cli: &Cli, args: &TrainArgs) -> CliResult {
    let (mut trainer, data) = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let stats = ckpt.metadata.norm_stats.clone();
            let data = load_dataset(args, Some(stats))?;
            (Trainer::from_checkpoint(&ckpt)?, data)
        }
        None => {
            let mut config = train_config(cli)?;
            if let Some(n) = args.steps {
                config.total_steps = n;
            }
            let stats = args.stats.as_deref().map(read_stats).transpose()?;
            let data = load_dataset(args, stats)?;
            (Trainer::new(config, data.stats.clone())?, data)
        }
    };
    if args.resume.is_some() && (cli.config.is_some() || cli.seed.is_some() || args.steps.is_some()) {
        eprintln!("resuming: --config, --seed and --steps are taken from the checkpoint");
    }
    let interval = trainer.config().log_interval;
    let summary = training::train(&mut trainer, &data, &args.out_dir, |t, l| {
        if t.step() % interval == 0 {
            eprintln!(
                "step {} l_g {:.4} l_aux {:.4} l_d {:.4}",
                t.step(),
                l.l_g,
                l.l_aux,
                l.l_d
            );
        }
        Ok(())
    })?;
    eprintln!(
        "trained {} steps; log {}; {} checkpoints",
        summary.steps,
        summary.loss_log.display(),
        summary.checkpoints.len()
    );
    Ok(())
}

fn load_dataset(args: &TrainArgs, stats: Option<NormStats>) -> CliResult<Dataset> {
    Ok(match &args.feature_dir {
        Some(dir) => {
            let stats = stats.ok_or_else(|| usage("--feature-dir needs --stats"))?;
            Dataset::from_features(&args.wav_dir, dir, stats)?
        }
        None => Dataset::from_wav_dir(&args.wav_dir, stats)?,
    })
}

fn run_infer(cli: &Cli, args: &InferArgs) -> CliResult {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let stats = &ckpt.metadata.norm_stats;
    if let Some(p) = &args.stats {
        if &read_stats(p)? != stats {
            return Err(Error::Input(format!(
                "statistics in {} differ from the checkpoint's",
                p.display()
            ))
            .into());
        }
    }
    let mel = match (&args.mel, &args.wav) {
        (Some(p), _) => {
            let mel = read_features(p)?;
            if !mel.normalized {
                return Err(Error::Input(format!("{} holds unnormalized features", p.display())).into());
            }
            mel
        }
        (None, Some(p)) => log_mel(&load_wav(p)?, Some(stats))?,
        (None, None) => return Err(usage("one of --mel or --wav is required")),
    };
    let generator = training::load_generator(&ckpt)?;
    let audio = generator.synthesize(&mel, cli.seed.unwrap_or(0))?;
    write_wav(&args.out, &audio)?;
    eprintln!("wrote {} samples to {}", audio.len(), args.out.display());
    Ok(())
}

fn run_eval(args: &EvalArgs) -> CliResult {
    let mut pairs: Vec<(String, AudioBuffer, AudioBuffer)> = Vec::new();
    if let (Some(r), Some(g)) = (&args.reference, &args.generated) {
        pairs.push((stem(r), load_wav(r)?, load_wav(g)?));
    }
    if let (Some(rd), Some(gd)) = (&args.ref_dir, &args.gen_dir) {
        for r in list_wavs(rd)? {
            let name = r.file_name().expect("listed files have names");
            let g = gd.join(name);
            if !g.is_file() {
                return Err(Error::Input(format!("no generated file {}", g.display())).into());
            }
            pairs.push((stem(&r), load_wav(&r)?, load_wav(&g)?));
        }
    }
    write_json(&evaluate(&pairs)?, args.out.as_deref())
}

fn run_bench(cli: &Cli, args: &BenchArgs) -> CliResult {
    let generator = match &args.checkpoint {
        Some(p) => training::load_generator(&Checkpoint::load(p)?)?,
        None => Generator::new(
            GeneratorConfig {
                channels: args.channels,
                ..GeneratorConfig::default()
            },
            cli.seed.unwrap_or(0),
        )?,
    };
    let report = benchmark(&generator, args.seconds, args.runs, cli.seed.unwrap_or(0))?;
    eprintln!("{} parameters", generator.num_params());
    write_json(&report, args.out.as_deref())
}

fn run_gradcheck(cli: &Cli, args: &GradcheckArgs) -> CliResult {
    let report = gradcheck::run_suite(cli.seed.unwrap_or(0))?;
    for r in &report.results {
        eprintln!(
            "{} {:<32} max rel err {:.3e} (tol {:.0e}, {} entries, {} skipped at kinks)",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.tolerance,
            r.entries,
            r.nonsmooth
        );
    }
    eprintln!("{:.1} s", report.seconds);
    if let Some(out) = &args.out {
        write_json(&report, Some(out))?;
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            message: "gradient check failed".into(),
        })
    }
}

fn run(cli: &Cli) -> CliResult {
    if cli.threads != 1 {
        return Err(usage("the engine is single-threaded; --threads must be 1"));
    }
    if cli.config.is_some() && !matches!(cli.command, Command::Train(_)) {
        // validate anyway so a bad file is reported
        TrainConfig::load(cli.config.as_ref().unwrap())?;
    }
    match &cli.command {
        Command::Extract(a) => run_extract(a),
        Command::Train(a) => run_train(cli, a),
        Command::Infer(a) => run_infer(cli, a),
        Command::EvalRmse(a) => run_eval(a),
        Command::Bench(a) => run_bench(cli, a),
        Command::Gradcheck(a) => run_gradcheck(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
