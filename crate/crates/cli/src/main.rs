// SPDX-License-Identifier: MIT OR Apache-2.0

//! `tdd`: contrastive saliency, faithfulness evaluation and prompt steering
//! from the command line.
//!
//! Exit codes: 0 success, 1 runtime or backend failure, 2 usage or
//! validation error.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tdd_core::backend::{Backend, RemoteBackend, Sampling, ToyBackend, ToyConfig};
use tdd_core::engine::tdd;
use tdd_core::eval::{
    aggregate, load_dataset, parse_methods, resolve_word, run_benchmark, BenchmarkConfig,
    MetricConfig,
};
use tdd_core::lens::{kl_convergence_set, top_token_trace, write_kl_csv};
use tdd_core::report::{benchmark_html, explain_html, write_csv};
use tdd_core::steering::{
    steer_sentiment, suppress_toxicity, Direction, SteerConfig, SuppressConfig, WordList,
};
use tdd_core::{ContrastiveSpec, TokenSequence, Variant};

#[derive(Parser)]
#[command(
    name = "tdd",
    version,
    about = "Contrastive input saliency for causal language models"
)]
struct Cli {
    #[command(flatten)]
    backend: BackendArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct BackendArgs {
    /// `toy` for the built-in model, otherwise the base URL of a model server
    #[arg(long, global = true, env = "TDD_BACKEND_URL", default_value = "toy")]
    backend: String,

    #[arg(long, global = true, default_value_t = 42)]
    toy_seed: u64,

    #[arg(long, global = true, default_value_t = 256)]
    toy_vocab: usize,

    #[arg(long, global = true, default_value_t = 4)]
    toy_layers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Per-token saliency for one prompt
    Explain(ExplainArgs),
    /// AOPC and Sufficiency of several methods over JSONL datasets
    Eval(EvalArgs),
    /// Blank toxic triggers in a prompt, then generate
    Detox(DetoxArgs),
    /// Swap the strongest sentiment trigger for a key token, then generate
    Steer(SteerArgs),
    /// Per-layer KL divergence to the final layer
    Lens(LensArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TddVariant {
    Forward,
    Backward,
    Bidirectional,
}

impl From<TddVariant> for Variant {
    fn from(v: TddVariant) -> Self {
        match v {
            TddVariant::Forward => Variant::Forward,
            TddVariant::Backward => Variant::Backward,
            TddVariant::Bidirectional => Variant::Bidirectional,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
    Html,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    prompt: String,
    /// Target word; repeat for a multi-token target set
    #[arg(long, required = true)]
    target: Vec<String>,
    /// Alternative word; omit for target-only saliency
    #[arg(long)]
    alt: Vec<String>,
    #[arg(long, value_enum, default_value = "bidirectional")]
    variant: TddVariant,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Write output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// JSONL dataset; repeat for several
    #[arg(long, required = true)]
    dataset: Vec<PathBuf>,
    #[arg(long, default_value = "tdd-f,tdd-b,tdd-bi,rollout,occlusion,random")]
    methods: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    html: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parallel workers over samples (0 = one per core)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Comma-separated perturbation ratios
    #[arg(long, default_value = "0.2,0.4,0.6,0.8,1.0")]
    ratios: String,
}

#[derive(Args)]
struct SamplingArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1.0)]
    top_p: f64,
    #[arg(long, default_value_t = 20)]
    max_new: usize,
}

impl SamplingArgs {
    fn sampling(&self) -> Sampling {
        Sampling {
            temperature: self.temperature,
            top_p: self.top_p,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct DetoxArgs {
    #[arg(long)]
    prompt: String,
    /// Toxic words, one per line
    #[arg(long)]
    wordlist: PathBuf,
    #[arg(long, default_value_t = 0.15)]
    fraction: f64,
    #[arg(long, default_value_t = 1)]
    min_k: usize,
    /// Score toxic words on their own instead of against the rest of the vocabulary
    #[arg(long)]
    target_only: bool,
    #[arg(long, value_enum, default_value = "bidirectional")]
    variant: TddVariant,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Positive,
    Negative,
}

#[derive(Args)]
struct SteerArgs {
    #[arg(long)]
    prompt: String,
    #[arg(long, value_enum)]
    direction: DirectionArg,
    #[arg(long)]
    pos_words: PathBuf,
    #[arg(long)]
    neg_words: PathBuf,
    #[arg(long, value_enum, default_value = "bidirectional")]
    variant: TddVariant,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args)]
struct LensArgs {
    /// Prompt; repeat to average over a prompt set
    #[arg(long, required = true)]
    prompt: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-layer top-token trace of the first prompt as JSON
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<tdd_core::Error> for Failure {
    fn from(e: tdd_core::Error) -> Self {
        let code = if e.is_usage() { 2 } else { 1 };
        Failure {
            code,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<tdd_core::Error>() {
            Some(e) if e.is_usage() => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: 1,
            error: e.into(),
        }
    }
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn open_backend(args: &BackendArgs) -> CliResult<Box<dyn Backend>> {
    if args.backend == "toy" {
        let config = ToyConfig {
            seed: args.toy_seed,
            vocab_size: args.toy_vocab,
            num_layers: args.toy_layers,
            ..ToyConfig::default()
        };
        return Ok(Box::new(ToyBackend::new(config)?));
    }
    // An unreachable server at startup is a bad --backend value.
    RemoteBackend::connect(&args.backend)
        .map(|b| Box::new(b) as Box<dyn Backend>)
        .map_err(|e| usage(anyhow!(e).context(format!("cannot use backend {:?}", args.backend))))
}

fn output(path: Option<&PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn resolve_all(backend: &dyn Backend, words: &[String], role: &str) -> CliResult<Vec<u32>> {
    words
        .iter()
        .map(|w| match resolve_word(backend, w)? {
            Some(r) => {
                if r.split {
                    log::warn!("{role} {w:?} splits into several tokens; using the first");
                }
                Ok(r.id)
            }
            None => Err(usage(anyhow!(
                "{role} word {w:?} does not resolve to a token"
            ))),
        })
        .collect()
}

fn token_texts(seq: &TokenSequence) -> Vec<String> {
    (0..seq.len()).map(|i| seq.text_at(i)).collect()
}

fn explain(backend: &dyn Backend, args: &ExplainArgs) -> CliResult<()> {
    let tokens = backend.tokenize(&args.prompt)?;
    let targets = resolve_all(backend, &args.target, "target")?;
    let alts = resolve_all(backend, &args.alt, "alternative")?;
    let spec = ContrastiveSpec::new(targets, alts)?;
    let result = tdd(backend, &tokens, &spec, args.variant.into())?;
    let texts = token_texts(&tokens);
    let mut out = output(args.out.as_ref())?;
    match args.format {
        Format::Text => {
            for (i, (t, s)) in texts.iter().zip(&result.saliency).enumerate() {
                writeln!(out, "{i}\t{t:?}\t{s:+.6}")?;
            }
        }
        Format::Json => {
            let rows: Vec<_> = texts
                .iter()
                .zip(&result.saliency)
                .map(|(t, s)| serde_json::json!({ "token": t, "saliency": s }))
                .collect();
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&rows).map_err(anyhow::Error::from)?
            )?;
        }
        Format::Html => {
            let page = explain_html(&args.prompt, &texts, &[(result.variant, result.saliency)]);
            out.write_all(page.as_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn parse_ratios(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|r| {
            r.trim()
                .parse::<f64>()
                .map_err(|e| usage(anyhow!("bad ratio {r:?}: {e}")))
        })
        .collect()
}

fn eval(backend: &dyn Backend, args: &EvalArgs) -> CliResult<()> {
    let methods = parse_methods(&args.methods)?;
    let config = BenchmarkConfig {
        metric: MetricConfig {
            ratios: parse_ratios(&args.ratios)?,
            ..MetricConfig::default()
        },
        seed: args.seed,
        jobs: args.jobs,
        keep_samples: args.html.is_some(),
    };
    config.metric.validate()?;
    let mut reports = Vec::with_capacity(args.dataset.len());
    for path in &args.dataset {
        let dataset = load_dataset(path)?;
        log::info!("{}: {} samples", dataset.name, dataset.samples.len());
        reports.push(run_benchmark(backend, &dataset, &methods, &config)?);
    }
    let mut all = reports.clone();
    if reports.len() > 1 {
        if let Some((macro_avg, micro_avg)) = aggregate(&reports) {
            all.push(macro_avg);
            all.push(micro_avg);
        }
    }
    let file =
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = BufWriter::new(file);
    write_csv(&all, &mut w)?;
    w.flush()?;
    if let Some(html) = &args.html {
        fs::write(html, benchmark_html(&reports))?;
    }
    let mut stdout = io::stdout().lock();
    for r in &all {
        for m in &r.methods {
            writeln!(
                stdout,
                "{}\t{}\taopc={:.4}\tsufficiency={:.4}\tn={}",
                r.dataset, m.method, m.aopc.average, m.sufficiency.average, r.n_samples
            )?;
        }
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    writeln!(io::stdout(), "{text}")?;
    Ok(())
}

fn detox(backend: &dyn Backend, args: &DetoxArgs) -> CliResult<()> {
    let prompt = backend.tokenize(&args.prompt)?;
    let toxic = WordList::load(&args.wordlist)?.resolve(backend)?;
    let config = SuppressConfig {
        fraction: args.fraction,
        min_k: args.min_k,
        max_new: args.sampling.max_new,
        variant: args.variant.into(),
        complement_alternatives: !args.target_only,
        sampling: args.sampling.sampling(),
    };
    print_json(&suppress_toxicity(backend, &prompt, &toxic, &config)?)
}

fn steer(backend: &dyn Backend, args: &SteerArgs) -> CliResult<()> {
    let prompt = backend.tokenize(&args.prompt)?;
    let positive = WordList::load(&args.pos_words)?.resolve(backend)?;
    let negative = WordList::load(&args.neg_words)?.resolve(backend)?;
    let direction = match args.direction {
        DirectionArg::Positive => Direction::Positive,
        DirectionArg::Negative => Direction::Negative,
    };
    let config = SteerConfig {
        max_new: args.sampling.max_new,
        variant: args.variant.into(),
        sampling: args.sampling.sampling(),
        ..SteerConfig::default()
    };
    print_json(&steer_sentiment(
        backend, &prompt, direction, &positive, &negative, &config,
    )?)
}

fn lens(backend: &dyn Backend, args: &LensArgs) -> CliResult<()> {
    let prompts = args
        .prompt
        .iter()
        .map(|p| backend.tokenize(p))
        .collect::<tdd_core::Result<Vec<_>>>()?;
    let kl = kl_convergence_set(backend, &prompts)?;
    let file =
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = BufWriter::new(file);
    write_kl_csv(&kl, &mut w)?;
    w.flush()?;
    if let Some(path) = &args.trace {
        let trace = top_token_trace(backend, &prompts[0])?;
        let text = serde_json::to_string_pretty(&trace).map_err(anyhow::Error::from)?;
        fs::write(path, text)?;
    }
    let mut stdout = io::stdout().lock();
    for (i, v) in kl.iter().enumerate() {
        writeln!(stdout, "layer {}\t{v:.6}", i + 1)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let backend = open_backend(&cli.backend)?;
    let backend = backend.as_ref();
    match &cli.command {
        Command::Explain(a) => explain(backend, a),
        Command::Eval(a) => eval(backend, a),
        Command::Detox(a) => detox(backend, a),
        Command::Steer(a) => steer(backend, a),
        Command::Lens(a) => lens(backend, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
