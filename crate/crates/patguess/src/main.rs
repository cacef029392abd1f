//! Command-line pipeline driver: clean, split, patterns, train, generate,
//! eval, report. One invocation runs one stage; every artifact records the
//! tool version, the seed, and digests of its inputs.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use patguess::corpus::{clean, split, CleanPolicy, Corpus, SplitSpec};
use patguess::eval;
use patguess::generator::{dcgen, sample_free, sample_guided, GenConfig};
use patguess::model::{
    describe_checkpoint, load_model, save_model, train_ngram_with, train_transformer, AnyModel,
    TrainConfig, TransformerConfig, DEFAULT_DELTA, DEFAULT_ORDER,
};
use patguess::pcfg::{Pattern, PatternDistribution};
use patguess::tokenizer::{Vocabulary, DEFAULT_WINDOW};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "patguess", version, about = "Pattern-guided password guessing toolkit")]
struct Cli {
    /// Optional key=value config file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a raw password list down to the modeling charset and length range.
    Clean(CleanArgs),
    /// Deterministically split a cleaned corpus into train/validation/test.
    Split(SplitArgs),
    /// Extract the pattern frequency table of a cleaned corpus.
    Patterns(PatternsArgs),
    /// Train a next-token model and write a checkpoint.
    Train(TrainArgs),
    /// Generate password guesses from a trained model.
    Generate(GenerateArgs),
    /// Evaluate generated guesses against a test corpus.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Summarize an artifact (model checkpoint or metadata sidecar).
    Report(ReportArgs),
}

#[derive(Args)]
struct CleanArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    #[arg(long, default_value_t = 12)]
    max_len: usize,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Comma-separated train,validation,test ratios.
    #[arg(long)]
    ratios: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PatternsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = ["ngram", "transformer"])]
    backend: String,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// n-gram order.
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    /// n-gram smoothing mass.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_parser = ["free", "guided", "dcgen"])]
    mode: String,
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(short = 'N', long = "total")]
    total: u64,
    /// Target pattern for guided mode, e.g. L4N3S1.
    #[arg(long)]
    pattern: Option<String>,
    /// Pattern frequency table (TSV) for dcgen mode.
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Task-division threshold for dcgen mode.
    #[arg(short = 'T', long)]
    threshold: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Sort the output file for byte-stable artifacts.
    #[arg(long)]
    sorted: bool,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Hit rate of generated guesses against the test set.
    Hit(EvalPairArgs),
    /// Repeat rate of a generated multiset.
    Repeat(EvalGeneratedArgs),
    /// Length and pattern distribution distances.
    Distance(EvalDistanceArgs),
    /// Pattern-guided benchmark over top patterns per segment category.
    Benchmark(EvalBenchmarkArgs),
}

#[derive(Args)]
struct EvalPairArgs {
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    test: PathBuf,
}

#[derive(Args)]
struct EvalGeneratedArgs {
    #[arg(long)]
    generated: PathBuf,
}

#[derive(Args)]
struct EvalDistanceArgs {
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Args)]
struct EvalBenchmarkArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    patterns_per_category: Option<usize>,
    #[arg(long)]
    guesses_per_pattern: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    artifact: PathBuf,
}

/// Plain key=value config; lines starting with # are comments.
fn load_config(path: Option<&Path>) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    let Some(path) = path else {
        return Ok(map);
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key=value", lineno + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn config_value<T: std::str::FromStr>(
    flag: Option<T>,
    config: &HashMap<String, String>,
    key: &str,
    default: T,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    match config.get(key) {
        Some(raw) => raw
            .parse()
            .map_err(|e| anyhow!("config key {key}: {e}")),
        None => Ok(default),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn input_digests(paths: &[&Path]) -> Result<serde_json::Value> {
    let mut map = serde_json::Map::new();
    for path in paths {
        map.insert(path.display().to_string(), json!(sha256_file(path)?));
    }
    Ok(serde_json::Value::Object(map))
}

fn artifact_meta(seed: Option<u64>, inputs: &[&Path], extra: serde_json::Value) -> Result<serde_json::Value> {
    Ok(json!({
        "tool": "patguess",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "inputs": input_digests(inputs)?,
        "details": extra,
    }))
}

/// Write bytes atomically: temp file in the target directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .context("creating temp file")?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_passwords(path: &Path, passwords: &[String], sorted: bool) -> Result<()> {
    let mut lines: Vec<&String> = passwords.iter().collect();
    if sorted {
        lines.sort();
    }
    let mut out = String::with_capacity(passwords.len() * 9);
    for pw in lines {
        out.push_str(pw);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

fn write_meta_sidecar(path: &Path, meta: &serde_json::Value) -> Result<()> {
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".meta.json");
    write_atomic(
        Path::new(&sidecar),
        serde_json::to_string_pretty(meta)?.as_bytes(),
    )
}

fn read_password_file(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    let lines = read_password_file(path)?;
    let (corpus, report) = clean(lines, &CleanPolicy::default());
    if report.kept == 0 {
        bail!("{}: no usable passwords", path.display());
    }
    Ok(corpus)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Clean(args) => cmd_clean(args),
        Command::Split(args) => cmd_split(args, &config),
        Command::Patterns(args) => cmd_patterns(args),
        Command::Train(args) => cmd_train(args, &config),
        Command::Generate(args) => cmd_generate(args, &config),
        Command::Eval(cmd) => cmd_eval(cmd, &config),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_clean(args: CleanArgs) -> Result<()> {
    let policy = CleanPolicy::new(args.min_len, args.max_len)?;
    let lines = read_password_file(&args.input)?;
    let (corpus, report) = clean(lines, &policy);
    write_passwords(&args.output, corpus.passwords(), false)?;
    let meta = artifact_meta(
        None,
        &[&args.input],
        serde_json::to_value(&report)?,
    )?;
    write_meta_sidecar(&args.output, &meta)?;
    print_json(&json!({ "clean": report }))
}

fn cmd_split(args: SplitArgs, config: &HashMap<String, String>) -> Result<()> {
    let seed = config_value(args.seed, config, "seed", 0)?;
    let ratios = match args
        .ratios
        .or_else(|| config.get("ratios").cloned())
    {
        Some(text) => {
            let parts: Vec<f64> = text
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<Result<_, _>>()
                .context("parsing --ratios")?;
            let [a, b, c] = parts[..] else {
                bail!("--ratios needs exactly three comma-separated values");
            };
            [a, b, c]
        }
        None => [0.7, 0.1, 0.2],
    };
    let spec = SplitSpec { ratios, seed };
    let corpus = read_corpus(&args.input)?;
    let (train, validation, test) = split(&corpus, &spec)?;
    for (path, part) in [
        (&args.train, &train),
        (&args.validation, &validation),
        (&args.test, &test),
    ] {
        write_passwords(path, part.passwords(), false)?;
        let meta = artifact_meta(
            Some(seed),
            &[&args.input],
            json!({ "ratios": ratios, "size": part.len() }),
        )?;
        write_meta_sidecar(path, &meta)?;
    }
    print_json(&json!({
        "split": { "train": train.len(), "validation": validation.len(), "test": test.len() }
    }))
}

fn cmd_patterns(args: PatternsArgs) -> Result<()> {
    let corpus = read_corpus(&args.input)?;
    let dist = PatternDistribution::from_corpus(&corpus)?;
    write_atomic(&args.output, dist.to_tsv().as_bytes())?;
    let meta = artifact_meta(
        None,
        &[&args.input],
        json!({ "patterns": dist.len(), "passwords": dist.total() }),
    )?;
    write_meta_sidecar(&args.output, &meta)?;
    print_json(&json!({ "patterns": dist.len(), "passwords": dist.total() }))
}

fn cmd_train(args: TrainArgs, config: &HashMap<String, String>) -> Result<()> {
    let seed = config_value(args.seed, config, "seed", 0)?;
    let corpus = read_corpus(&args.input)?;
    let (model, detail) = match args.backend.as_str() {
        "ngram" => {
            let model = train_ngram_with(&corpus, args.order, args.delta, DEFAULT_WINDOW)?;
            let detail = json!({ "backend": "ngram", "order": args.order, "delta": args.delta });
            (AnyModel::NGram(model), detail)
        }
        "transformer" => {
            let cfg = TransformerConfig {
                embed_dim: config_value(args.embed_dim, config, "embed_dim", 64)?,
                layers: config_value(args.layers, config, "layers", 2)?,
                heads: config_value(args.heads, config, "heads", 2)?,
                window: DEFAULT_WINDOW,
            };
            let train_cfg = TrainConfig {
                batch_size: config_value(args.batch_size, config, "batch_size", 64)?,
                epochs: config_value(args.epochs, config, "epochs", 10)?,
                learning_rate: config_value(args.learning_rate, config, "learning_rate", 5e-5)?,
                seed,
                ..TrainConfig::default()
            };
            let (model, losses) = train_transformer(&corpus, cfg.clone(), &train_cfg)?;
            let detail = json!({
                "backend": "transformer",
                "config": cfg,
                "epochs": train_cfg.epochs,
                "learning_rate": train_cfg.learning_rate,
                "loss_curve": losses,
            });
            (AnyModel::Transformer(model), detail)
        }
        other => bail!("unknown backend {other}"),
    };
    save_model(&model, &args.output)?;
    let meta = artifact_meta(Some(seed), &[&args.input], detail.clone())?;
    write_meta_sidecar(&args.output, &meta)?;
    print_json(&json!({ "trained": detail }))
}

fn cmd_generate(args: GenerateArgs, config: &HashMap<String, String>) -> Result<()> {
    let seed = config_value(args.seed, config, "seed", 0)?;
    let temperature = config_value(args.temperature, config, "temperature", 1.0)?;
    let workers = config_value(args.workers, config, "workers", 0)?;
    let threshold = config_value(args.threshold, config, "threshold", 4000)?;
    let model = load_model(&args.model)?;
    let vocab = Vocabulary::new();

    let mut inputs: Vec<&Path> = vec![&args.model];
    let (passwords, detail) = match args.mode.as_str() {
        "free" => {
            let (passwords, report) = sample_free(&model, &vocab, args.total, seed, temperature)?;
            (passwords, serde_json::to_value(&report)?)
        }
        "guided" => {
            let text = args
                .pattern
                .as_deref()
                .ok_or_else(|| anyhow!("--pattern is required in guided mode"))?;
            let pattern = Pattern::parse(text)?;
            let passwords =
                sample_guided(&model, &vocab, &pattern, args.total, seed, temperature)?;
            let detail = json!({ "pattern": text, "generated": passwords.len() });
            (passwords, detail)
        }
        "dcgen" => {
            let dist_path = args
                .patterns
                .as_ref()
                .ok_or_else(|| anyhow!("--patterns is required in dcgen mode"))?;
            inputs.push(dist_path);
            let dist = PatternDistribution::from_tsv(&std::fs::read_to_string(dist_path)?)?;
            let cfg = GenConfig {
                total: args.total,
                threshold,
                seed,
                temperature,
                workers,
            };
            let (passwords, report) = dcgen(&model, &vocab, &dist, &cfg)?;
            (passwords, serde_json::to_value(&report)?)
        }
        other => bail!("unknown mode {other}"),
    };
    write_passwords(&args.output, &passwords, args.sorted)?;
    let meta = artifact_meta(Some(seed), &inputs, detail.clone())?;
    write_meta_sidecar(&args.output, &meta)?;
    print_json(&json!({ "generate": detail }))
}

fn cmd_eval(cmd: EvalCommand, config: &HashMap<String, String>) -> Result<()> {
    match cmd {
        EvalCommand::Hit(args) => {
            let generated = read_password_file(&args.generated)?;
            let test = read_corpus(&args.test)?;
            let report = eval::hit_rate(&generated, &test)?;
            let meta = artifact_meta(None, &[&args.generated, &args.test], json!({}))?;
            print_json(&json!({ "hit": report, "meta": meta }))
        }
        EvalCommand::Repeat(args) => {
            let generated = read_password_file(&args.generated)?;
            let rate = eval::repeat_rate(&generated)?;
            let meta = artifact_meta(None, &[&args.generated], json!({}))?;
            print_json(&json!({ "repeat_rate": rate, "meta": meta }))
        }
        EvalCommand::Distance(args) => {
            let top_k = config_value(args.top_k, config, "top_k", 150)?;
            let generated = read_password_file(&args.generated)?;
            let test = read_password_file(&args.test)?;
            let report = eval::distance_report(&generated, &test, top_k)?;
            let meta = artifact_meta(None, &[&args.generated, &args.test], json!({}))?;
            print_json(&json!({ "distance": report, "meta": meta }))
        }
        EvalCommand::Benchmark(args) => {
            let seed = config_value(args.seed, config, "seed", 0)?;
            let per_category =
                config_value(args.patterns_per_category, config, "patterns_per_category", 21)?;
            let per_pattern =
                config_value(args.guesses_per_pattern, config, "guesses_per_pattern", 100_000)?;
            let model = load_model(&args.model)?;
            let test = read_corpus(&args.test)?;
            let report = eval::pattern_guided_benchmark(
                &model,
                &test,
                per_category,
                per_pattern,
                seed,
            )?;
            let meta = artifact_meta(Some(seed), &[&args.model, &args.test], json!({}))?;
            print_json(&json!({ "benchmark": report, "meta": meta }))
        }
    }
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    if args.artifact.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&args.artifact)?)?;
        return print_json(&value);
    }
    println!("{}", describe_checkpoint(&args.artifact)?);
    Ok(())
}

/// Map an error chain to the documented exit codes: 1 usage, 2 data, 3
/// internal.
fn classify(err: &anyhow::Error) -> u8 {
    use patguess::generator::GenError;
    use patguess::model::ModelError;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<GenError>() {
            return match e {
                GenError::InvalidConfig(_) => EXIT_USAGE,
                GenError::ModelUnusable { .. } => EXIT_DATA,
                _ => EXIT_DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return match e {
                ModelError::InvalidOrder | ModelError::InvalidConfig(_) => EXIT_USAGE,
                ModelError::NonFiniteLoss { .. } => EXIT_INTERNAL,
                _ => EXIT_DATA,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<patguess::pcfg::PatternError>().is_some()
            || cause.downcast_ref::<patguess::corpus::CorpusError>().is_some()
            || cause.downcast_ref::<patguess::eval::EvalError>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
        {
            return EXIT_DATA;
        }
    }
    // Argument validation failures raised by this binary itself.
    let text = err.to_string();
    if text.contains("required") || text.contains("unknown") || text.contains("--") {
        return EXIT_USAGE;
    }
    EXIT_INTERNAL
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version output are success, not usage errors.
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
