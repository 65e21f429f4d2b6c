use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use multipivot::corpus::{read_records_file, write_jsonl_file, Corpus, SentenceRecord};
use multipivot::metrics::{BootstrapParams, Direction};
use multipivot::modelwire::{EndpointConfig, WireScorer};
use multipivot::pipeline::{
    compare_systems, eval_items, evaluate_systems, run_corpus, Backend, BackendSpec, EvalOptions,
    RunConfig, SharedBackend, Strategy, SystemOutputs,
};
use multipivot::synth::SyntheticTask;
use multipivot::synth::{build_task, run_experiment, ExperimentConfig, SyntheticBackend};
use multipivot::{Error, LengthNormalization, TokenId, Vocab};
use serde::Deserialize;

const EXIT_USAGE: u8 = 1;
const EXIT_BACKEND: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "multipivot",
    version,
    about = "Multi-pivot ensemble decoding and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Translate a JSONL corpus with one or more strategies.
    Translate(TranslateArgs),
    /// Score output files against references.
    Evaluate(EvaluateArgs),
    /// Run a full synthetic study.
    Simulate(SimulateArgs),
    /// Paired bootstrap between two systems.
    Compare(CompareArgs),
}

#[derive(Args)]
struct VocabArgs {
    /// Vocabulary JSON: {"tokens": [...], "eos_id": n}.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// End-of-sentence id, when no vocabulary is given.
    #[arg(long)]
    eos: Option<TokenId>,
}

#[derive(Args)]
struct BootstrapArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

impl BootstrapArgs {
    fn params(&self) -> BootstrapParams {
        let d = BootstrapParams::default();
        BootstrapParams {
            seed: self.seed.unwrap_or(d.seed),
            resamples: self.resamples.unwrap_or(d.resamples),
            alpha: self.alpha.unwrap_or(d.alpha),
        }
    }
}

#[derive(Args)]
struct TranslateArgs {
    /// Run configuration (TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input JSONL with source (and optionally reference) sentences.
    #[arg(long)]
    corpus: PathBuf,
    /// Output JSONL, one row per sentence and strategy.
    #[arg(long, short)]
    output: PathBuf,
    /// JSON evaluation report (written when references are present).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    src: Option<String>,
    #[arg(long)]
    tgt: Option<String>,
    /// Comma-separated pivot languages.
    #[arg(long, value_delimiter = ',')]
    pivots: Option<Vec<String>>,
    /// direct, pivot:<lang>, multiavg, maxens or logavg; repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<String>,
    #[arg(long)]
    include_direct_path: bool,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    pivot_beam: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Rank hypotheses by score per token.
    #[arg(long)]
    length_norm: bool,
    #[arg(long)]
    renormalize_maxens: bool,
    /// Remote server base URL.
    #[arg(long, conflicts_with = "synthetic")]
    endpoint: Option<String>,
    /// Use the synthetic task described by this experiment file.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    #[command(flatten)]
    vocab: VocabArgs,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Output JSONL files; rows without a `system` field take the file stem.
    #[arg(long, required = true, num_args = 1..)]
    outputs: Vec<PathBuf>,
    /// JSONL with sources and references.
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    src: String,
    #[arg(long)]
    tgt: String,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    bleu_label: Option<String>,
    #[arg(long)]
    chrf_threshold: Option<f64>,
    #[command(flatten)]
    vocab: VocabArgs,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment configuration (TOML); defaults to the built-in regime.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    corpus_size: Option<usize>,
    /// Write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Per-sentence inspection dump (JSONL).
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Write the generated parallel corpus (JSONL).
    #[arg(long)]
    corpus_out: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    src: String,
    #[arg(long)]
    tgt: String,
    /// System to take from `--a` when it holds several.
    #[arg(long)]
    system_a: Option<String>,
    #[arg(long)]
    system_b: Option<String>,
    #[command(flatten)]
    vocab: VocabArgs,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
}

/// A row of an outputs file; plain corpus records qualify too.
#[derive(Deserialize)]
struct OutputRow {
    id: String,
    #[serde(default)]
    system: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<TokenId>>,
    #[serde(default)]
    error: Option<String>,
}

/// Failure that maps to a specific exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(Exit(code, _)) = e.downcast_ref::<Exit>() {
        return *code;
    }
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Io(_) | Error::Backend(_) | Error::Protocol { .. } => EXIT_BACKEND,
                Error::Sentence { source, .. }
                | Error::Stage { source, .. }
                | Error::Decode { source, .. }
                    if source.is_backend() =>
                {
                    EXIT_BACKEND
                }
                _ => EXIT_USAGE,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_BACKEND;
        }
    }
    EXIT_USAGE
}

fn load_vocab(args: &VocabArgs) -> anyhow::Result<(Option<Vocab>, Option<TokenId>)> {
    let vocab = match &args.vocab {
        Some(p) => {
            let f = File::open(p)
                .map_err(Error::from)
                .with_context(|| format!("reading {}", p.display()))?;
            let v: Vocab = serde_json::from_reader(BufReader::new(f))
                .map_err(|e| anyhow!("{}: {e}", p.display()))?;
            Some(v)
        }
        None => None,
    };
    let eos = args.eos.or(vocab.as_ref().map(|v| v.eos_id()));
    Ok((vocab, eos))
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")
            .map_err(Error::from)
            .with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn read_corpus(
    path: &Path,
    src: &str,
    tgt: &str,
    vocab: Option<&Vocab>,
    eos: TokenId,
) -> anyhow::Result<Corpus> {
    let records = read_records_file(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Corpus::from_records(&records, src, tgt, vocab, eos)?)
}

fn translate(args: TranslateArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.src {
        cfg.source_lang = s;
    }
    if let Some(t) = args.tgt {
        cfg.target_lang = t;
    }
    if let Some(p) = args.pivots {
        cfg.pivots = p;
    }
    cfg.include_direct_path |= args.include_direct_path;
    if let Some(b) = args.beam {
        cfg.final_decode.beam_size = b;
    }
    if let Some(b) = args.pivot_beam {
        cfg.pivot_decode.beam_size = b;
    }
    if let Some(m) = args.max_len {
        cfg.final_decode.max_len = m;
        cfg.pivot_decode.max_len = m;
    }
    if args.length_norm {
        cfg.final_decode.length_normalization = LengthNormalization::ByLength;
        cfg.pivot_decode.length_normalization = LengthNormalization::ByLength;
    }
    cfg.final_decode.renormalize_maxens |= args.renormalize_maxens;
    if let Some(url) = args.endpoint {
        cfg.backend = Some(BackendSpec::Remote(EndpointConfig::new(url)));
    } else if let Some(p) = args.synthetic {
        cfg.backend = Some(BackendSpec::Synthetic { config: Some(p) });
    }
    let strategies: Vec<Strategy> = if args.strategy.is_empty() {
        vec![cfg.strategy.clone()]
    } else {
        args.strategy
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, Error>>()?
    };

    let (mut vocab, mut eos) = load_vocab(&args.vocab)?;
    let mut synthetic: Option<Arc<SyntheticTask>> = None;
    let backend: Box<dyn Backend> = match cfg.backend.clone() {
        Some(BackendSpec::Synthetic { config }) => {
            let exp = match config {
                Some(p) => ExperimentConfig::load(&p)
                    .with_context(|| format!("loading {}", p.display()))?,
                None => ExperimentConfig::default(),
            };
            let task = Arc::new(build_task(&exp)?);
            vocab = Some(task.vocab.clone());
            eos = Some(task.eos());
            synthetic = Some(Arc::clone(&task));
            Box::new(SyntheticBackend(task))
        }
        Some(BackendSpec::Remote(endpoint)) => {
            let eos = eos.ok_or_else(|| {
                Exit(EXIT_USAGE, "a remote backend needs --eos or --vocab".into())
            })?;
            let scorer = WireScorer::connect(endpoint.with_env_fallback(), eos)?;
            Box::new(SharedBackend(Arc::new(scorer)))
        }
        None => {
            let endpoint = EndpointConfig::default().with_env_fallback();
            if endpoint.base_url.is_empty() {
                bail!(Exit(
                    EXIT_USAGE,
                    "no backend: pass --endpoint, --synthetic, or set one in the config".into()
                ));
            }
            let eos = eos.ok_or_else(|| {
                Exit(EXIT_USAGE, "a remote backend needs --eos or --vocab".into())
            })?;
            Box::new(SharedBackend(Arc::new(WireScorer::connect(endpoint, eos)?)))
        }
    };
    let eos = eos.unwrap_or(TokenId::MAX);
    let corpus = read_corpus(
        &args.corpus,
        &cfg.source_lang,
        &cfg.target_lang,
        vocab.as_ref(),
        eos,
    )?;
    if let Some(task) = &synthetic {
        check_synthetic_corpus(task, &corpus)?;
    }
    let opts = EvalOptions {
        bootstrap: args.bootstrap.params(),
        ..Default::default()
    };
    let run = run_corpus(
        &corpus,
        &cfg,
        &strategies,
        backend.as_ref(),
        vocab.as_ref(),
        &opts,
    )?;
    write_jsonl_file(&args.output, &run.outputs)
        .with_context(|| format!("writing {}", args.output.display()))?;
    if let Some(report) = &run.report {
        print!("{}", report.render_table());
        if let Some(p) = &args.report {
            write_json(Some(p), report)?;
        }
    }
    let failed = run.failed();
    if failed > 0 {
        bail!(Exit(
            EXIT_PARTIAL,
            format!(
                "{failed} of {} sentence translations failed",
                run.outputs.len()
            )
        ));
    }
    Ok(())
}

/// The synthetic backend only knows its own sentences.
fn check_synthetic_corpus(task: &SyntheticTask, corpus: &Corpus) -> anyhow::Result<()> {
    for s in &corpus.sentences {
        match task.sentence(&s.id) {
            Some(t) if t.source == s.source => {}
            _ => bail!(Exit(
                EXIT_USAGE,
                format!(
                    "sentence {} is not part of the synthetic task (check the experiment file and seed)",
                    s.id
                )
            )),
        }
    }
    Ok(())
}

fn render_row(row: &OutputRow, vocab: Option<&Vocab>, eos: TokenId) -> Option<String> {
    if row.error.is_some() {
        return None;
    }
    let rec = SentenceRecord {
        id: row.id.clone(),
        lang: String::new(),
        text: row.text.clone(),
        tokens: row.tokens.clone(),
    };
    Some(rec.to_text(vocab, eos))
}

/// Systems in first-seen order.
fn read_systems(
    path: &Path,
    vocab: Option<&Vocab>,
    eos: TokenId,
) -> anyhow::Result<Vec<SystemOutputs>> {
    let text = std::fs::read_to_string(path)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", path.display()))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "system".into());
    let mut order: Vec<String> = Vec::new();
    let mut by_name: BTreeMap<String, SystemOutputs> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: OutputRow = serde_json::from_str(line)
            .map_err(|e| Exit(EXIT_USAGE, format!("{}:{}: {e}", path.display(), i + 1)))?;
        let name = row.system.clone().unwrap_or_else(|| stem.clone());
        let sys = by_name.entry(name.clone()).or_insert_with(|| {
            order.push(name.clone());
            SystemOutputs {
                name,
                ..Default::default()
            }
        });
        sys.outputs
            .insert(row.id.clone(), render_row(&row, vocab, eos));
    }
    Ok(order
        .into_iter()
        .filter_map(|n| by_name.remove(&n))
        .collect())
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let (vocab, eos) = load_vocab(&args.vocab)?;
    let eos = eos.unwrap_or(TokenId::MAX);
    let corpus = read_corpus(&args.refs, &args.src, &args.tgt, vocab.as_ref(), eos)?;
    let items = eval_items(&corpus)
        .ok_or_else(|| Exit(EXIT_USAGE, "some sources have no reference".into()))?;
    let mut systems = Vec::new();
    for p in &args.outputs {
        systems.extend(read_systems(p, vocab.as_ref(), eos)?);
    }
    let d = EvalOptions::default();
    let opts = EvalOptions {
        bleu_label: args.bleu_label.unwrap_or(d.bleu_label),
        chrf_threshold: args.chrf_threshold.unwrap_or(d.chrf_threshold),
        bootstrap: args.bootstrap.params(),
        ..d
    };
    let direction = Direction {
        src: args.src,
        tgt: args.tgt,
    };
    let report = evaluate_systems(direction, &items, &systems, &opts)?;
    match &args.json {
        Some(p) => {
            write_json(Some(p), &report)?;
            print!("{}", report.render_table());
        }
        None => {
            write_json(None, &report)?;
            eprint!("{}", report.render_table());
        }
    }
    Ok(())
}

fn pick(
    systems: Vec<SystemOutputs>,
    name: Option<&str>,
    path: &Path,
) -> anyhow::Result<SystemOutputs> {
    match name {
        Some(n) => systems.into_iter().find(|s| s.name == n).ok_or_else(|| {
            anyhow!(Exit(
                EXIT_USAGE,
                format!("no system {n:?} in {}", path.display())
            ))
        }),
        None if systems.len() == 1 => Ok(systems.into_iter().next().unwrap()),
        None => bail!(Exit(
            EXIT_USAGE,
            format!(
                "{} holds several systems ({}); choose one",
                path.display(),
                systems
                    .iter()
                    .map(|s| s.name.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )
        )),
    }
}

fn compare(args: CompareArgs) -> anyhow::Result<()> {
    let (vocab, eos) = load_vocab(&args.vocab)?;
    let eos = eos.unwrap_or(TokenId::MAX);
    let corpus = read_corpus(&args.refs, &args.src, &args.tgt, vocab.as_ref(), eos)?;
    let items = eval_items(&corpus)
        .ok_or_else(|| Exit(EXIT_USAGE, "some sources have no reference".into()))?;
    let a = pick(
        read_systems(&args.a, vocab.as_ref(), eos)?,
        args.system_a.as_deref(),
        &args.a,
    )?;
    let b = pick(
        read_systems(&args.b, vocab.as_ref(), eos)?,
        args.system_b.as_deref(),
        &args.b,
    )?;
    let r = compare_systems(&items, &a, &b, &args.bootstrap.params())?;
    write_json(
        None,
        &serde_json::json!({
            "system_a": a.name,
            "system_b": b.name,
            "result": r,
        }),
    )
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.corpus_size {
        cfg.corpus_size = n;
    }
    cfg.validate()?;
    if args.print_config {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    if let Some(p) = &args.corpus_out {
        let task = build_task(&cfg)?;
        write_jsonl_file(p, &task.corpus_records())?;
    }
    let report = run_experiment(&cfg)?;
    print!("{}", report.render());
    std::io::stdout().flush()?;
    if let Some(p) = &args.json {
        write_json(Some(p), &report)?;
    }
    if let Some(p) = &args.dump {
        write_jsonl_file(p, &report.sentences)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Translate(a) => translate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
