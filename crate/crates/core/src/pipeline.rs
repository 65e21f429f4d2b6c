//! Source to pivots to target.
//!
//! A sentence is first translated into every pivot language with plain beam
//! search; the top hypothesis of each becomes one entry of the source set that
//! conditions the final, ensembled decode. Baselines are the direct path and a
//! single pivot.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::Corpus;
use crate::decoder::{beam_search, DecodeTrace, Scorer};
use crate::error::{Error, Result, Stage};
use crate::metrics::{
    bleu_from_stats, bleu_stats, hallucination_rate_chrf, paired_bootstrap, tng_rate, BleuStats,
    BootstrapParams, BootstrapResult, ChrfParams, Direction, EvalReport, SystemScores, TngParams,
    Verdict, DEFAULT_CHRF_THRESHOLD,
};
use crate::modelwire::EndpointConfig;
use crate::types::{
    Combiner, DecodeParams, Hypothesis, SourceEntry, SourceSet, TokenId, TokenSeq, Vocab,
};

/// Hands out the scorer for a sentence. Remote backends return the same
/// scorer for every id; the synthetic backend's channels depend on the id.
pub trait Backend: Send + Sync {
    fn scorer_for(&self, sentence_id: &str) -> Result<Arc<dyn Scorer>>;
}

/// One scorer for every sentence.
#[derive(Clone)]
pub struct SharedBackend(pub Arc<dyn Scorer>);

impl Backend for SharedBackend {
    fn scorer_for(&self, _sentence_id: &str) -> Result<Arc<dyn Scorer>> {
        Ok(Arc::clone(&self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Strategy {
    Direct,
    SinglePivot(String),
    MultiAvg,
    MaxEns,
    LogAvg,
}

impl Strategy {
    /// Column label used in reports.
    pub fn label(&self) -> String {
        match self {
            Strategy::Direct => "Direct".into(),
            Strategy::SinglePivot(l) => format!("{} Pivot", l.to_uppercase()),
            Strategy::MultiAvg => "MultiAvg".into(),
            Strategy::MaxEns => "MaxEns".into(),
            Strategy::LogAvg => "LogAvg".into(),
        }
    }

    pub fn combiner(&self) -> Combiner {
        match self {
            Strategy::Direct | Strategy::SinglePivot(_) => Combiner::Direct,
            Strategy::MultiAvg => Combiner::MultiAvg,
            Strategy::MaxEns => Combiner::MaxEns,
            Strategy::LogAvg => Combiner::LogAvg,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Direct => f.write_str("direct"),
            Strategy::SinglePivot(l) => write!(f, "pivot:{l}"),
            Strategy::MultiAvg => f.write_str("multiavg"),
            Strategy::MaxEns => f.write_str("maxens"),
            Strategy::LogAvg => f.write_str("logavg"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(l) = s.strip_prefix("pivot:") {
            if l.is_empty() {
                return Err(Error::invalid(
                    "pivot strategy needs a language, e.g. pivot:en",
                ));
            }
            return Ok(Strategy::SinglePivot(l.into()));
        }
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Strategy::Direct),
            "multiavg" => Ok(Strategy::MultiAvg),
            "maxens" => Ok(Strategy::MaxEns),
            "logavg" => Ok(Strategy::LogAvg),
            _ => Err(Error::invalid(format!(
                "unknown strategy {s:?} (direct, pivot:<lang>, multiavg, maxens, logavg)"
            ))),
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where distributions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    /// Synthetic task built from an experiment config file (defaults if absent).
    Synthetic {
        #[serde(default)]
        config: Option<PathBuf>,
    },
    Remote(EndpointConfig),
}

fn default_pivots() -> Vec<String> {
    vec!["en".into(), "es".into(), "fr".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub source_lang: String,
    pub target_lang: String,
    pub pivots: Vec<String>,
    pub strategy: Strategy,
    /// Also condition the final decode on the source itself.
    pub include_direct_path: bool,
    pub pivot_decode: DecodeParams,
    pub final_decode: DecodeParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            source_lang: String::new(),
            target_lang: String::new(),
            pivots: default_pivots(),
            strategy: Strategy::MaxEns,
            include_direct_path: false,
            pivot_decode: DecodeParams::default(),
            final_decode: DecodeParams::default(),
            backend: None,
        }
    }
}

impl RunConfig {
    /// Copy of this config running `strategy`, with the pivot list adjusted
    /// to what the strategy needs.
    pub fn for_strategy(&self, strategy: &Strategy) -> RunConfig {
        let mut c = self.clone();
        c.strategy = strategy.clone();
        match strategy {
            Strategy::Direct => {
                c.pivots.clear();
                c.include_direct_path = false;
            }
            Strategy::SinglePivot(l) => {
                c.pivots = vec![l.clone()];
                c.include_direct_path = false;
            }
            _ => {}
        }
        c
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source_lang.is_empty() || self.target_lang.is_empty() {
            return Err(Error::invalid("source and target languages are required"));
        }
        self.pivot_decode.validate()?;
        self.final_decode.validate()?;
        for (i, p) in self.pivots.iter().enumerate() {
            if self.pivots[..i].contains(p) {
                return Err(Error::invalid(format!("pivot {p:?} listed twice")));
            }
            if p == &self.source_lang && self.include_direct_path {
                return Err(Error::invalid("source language cannot also be a pivot"));
            }
        }
        match &self.strategy {
            Strategy::Direct if !self.pivots.is_empty() => {
                Err(Error::invalid("the direct strategy takes no pivots"))
            }
            Strategy::SinglePivot(l) if self.pivots != [l.clone()] => Err(Error::invalid(format!(
                "single-pivot strategy needs exactly the pivot list [{l}]"
            ))),
            Strategy::MultiAvg | Strategy::MaxEns | Strategy::LogAvg if self.pivots.is_empty() => {
                Err(Error::invalid(
                    "ensemble strategies need at least one pivot",
                ))
            }
            _ => Ok(()),
        }
    }
}

fn pivot_translation(
    src: &TokenSeq,
    src_lang: &str,
    pivot: &str,
    scorer: &dyn Scorer,
    params: &DecodeParams,
) -> Result<TokenSeq> {
    let stage = || Stage::Pivot(pivot.into());
    let params = DecodeParams {
        combiner: Combiner::Direct,
        ..*params
    };
    let out = beam_search(
        &SourceSet::single(src_lang, src.clone()),
        pivot,
        scorer,
        &params,
        false,
    )
    .map_err(|e| Error::Stage {
        stage: stage(),
        source: Box::new(e),
    })?;
    match out.best() {
        Some(h) if h.finished => Ok(h.tokens.clone()),
        _ => Err(Error::Stage {
            stage: stage(),
            source: Box::new(Error::invalid(format!(
                "no finished pivot translation within {} tokens",
                params.max_len
            ))),
        }),
    }
}

/// Top pivot translation per configured pivot, in config order, plus the
/// source itself when `include_direct_path` is set.
pub fn produce_pivots(
    src: &TokenSeq,
    config: &RunConfig,
    scorer: &dyn Scorer,
) -> Result<SourceSet> {
    if config.pivots.is_empty() {
        return Err(Error::invalid("no pivot languages configured"));
    }
    let mut entries = Vec::with_capacity(config.pivots.len() + 1);
    for p in &config.pivots {
        let seq = pivot_translation(src, &config.source_lang, p, scorer, &config.pivot_decode)?;
        entries.push(SourceEntry {
            lang: p.clone(),
            seq,
        });
    }
    if config.include_direct_path {
        entries.push(SourceEntry {
            lang: config.source_lang.clone(),
            seq: src.clone(),
        });
    }
    SourceSet::new(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub hypothesis: Hypothesis,
    /// Conditioning set of the final decode (the source alone for direct).
    pub sources: SourceSet,
    pub trace: Option<DecodeTrace>,
}

fn final_decode(
    sources: SourceSet,
    config: &RunConfig,
    scorer: &dyn Scorer,
    record_trace: bool,
) -> Result<Translation> {
    let combiner = if sources.k() == 1 {
        Combiner::Direct
    } else {
        config.strategy.combiner()
    };
    let params = DecodeParams {
        combiner,
        ..config.final_decode
    };
    let out =
        beam_search(&sources, &config.target_lang, scorer, &params, record_trace).map_err(|e| {
            Error::Stage {
                stage: Stage::Final,
                source: Box::new(e),
            }
        })?;
    let hypothesis = out
        .hypotheses
        .into_iter()
        .next()
        .ok_or_else(|| Error::Stage {
            stage: Stage::Final,
            source: Box::new(Error::invalid("search returned no hypotheses")),
        })?;
    Ok(Translation {
        hypothesis,
        sources,
        trace: out.trace,
    })
}

pub fn translate_sentence(
    src: &TokenSeq,
    config: &RunConfig,
    scorer: &dyn Scorer,
    record_trace: bool,
) -> Result<Translation> {
    config.validate()?;
    let sources = match config.strategy {
        Strategy::Direct => SourceSet::single(config.source_lang.clone(), src.clone()),
        _ => produce_pivots(src, config, scorer)?,
    };
    final_decode(sources, config, scorer, record_trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotOutput {
    pub lang: String,
    pub tokens: Vec<TokenId>,
    pub text: String,
}

/// One line of the outputs file. Readable as a corpus record (`id`, `lang`,
/// `text`, `tokens`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceOutput {
    pub id: String,
    pub system: String,
    pub lang: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default)]
    pub finished: bool,
    /// Winning pivot index per generated token (max ensemble only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pivots: Vec<PivotOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SentenceOutput {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

fn render(seq: &TokenSeq, vocab: Option<&Vocab>, eos: TokenId) -> String {
    match vocab {
        Some(v) => v.decode(seq),
        None => seq
            .body(eos)
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(" "),
    }
}

/// Metric settings shared by `run_corpus`, `evaluate` and `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub bleu_label: String,
    pub chrf: ChrfParams,
    pub chrf_threshold: f64,
    pub tng: TngParams,
    pub bootstrap: BootstrapParams,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            bleu_label: "BLEU (caller tokenization)".into(),
            chrf: ChrfParams::default(),
            chrf_threshold: DEFAULT_CHRF_THRESHOLD,
            tng: TngParams::default(),
            bootstrap: BootstrapParams::default(),
        }
    }
}

/// Source and reference text of one evaluated sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub source: String,
    pub reference: String,
}

/// One system's outputs by sentence id. Missing ids and `None` count as
/// failed sentences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SystemOutputs {
    pub name: String,
    pub outputs: HashMap<String, Option<String>>,
    /// Known hallucination labels, when the data is synthetic.
    pub ground_truth: Option<HashMap<String, bool>>,
}

impl SystemOutputs {
    pub fn from_outputs(name: &str, rows: &[SentenceOutput]) -> Self {
        SystemOutputs {
            name: name.into(),
            outputs: rows
                .iter()
                .filter(|r| r.system == name)
                .map(|r| {
                    let text = if r.failed() { None } else { r.text.clone() };
                    (r.id.clone(), text)
                })
                .collect(),
            ground_truth: None,
        }
    }
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn sorted_items(items: &[EvalItem]) -> Result<Vec<&EvalItem>> {
    if items.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut v: Vec<&EvalItem> = items.iter().collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    if v.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::invalid("duplicate sentence id in evaluation set"));
    }
    Ok(v)
}

fn system_scores(
    items: &[&EvalItem],
    sys: &SystemOutputs,
    opts: &EvalOptions,
) -> Result<SystemScores> {
    let mut stats = BleuStats::default();
    let mut chrf_pairs = Vec::new();
    let mut tng_pairs = Vec::new();
    let mut truth = 0usize;
    for it in items {
        let Some(Some(hyp)) = sys.outputs.get(&it.id) else {
            continue;
        };
        stats += bleu_stats(&words(hyp), &words(&it.reference));
        chrf_pairs.push((hyp.as_str(), it.reference.as_str()));
        tng_pairs.push((words(&it.source), words(hyp)));
        if let Some(gt) = &sys.ground_truth {
            if gt.get(&it.id).copied().unwrap_or(false) {
                truth += 1;
            }
        }
    }
    let scored = chrf_pairs.len();
    let (chrf_rate, tng) = if scored == 0 {
        (0.0, 0.0)
    } else {
        (
            hallucination_rate_chrf(&chrf_pairs, opts.chrf_threshold, &opts.chrf)
                .map_err(|e| Error::Config(format!("system {}: {e}", sys.name)))?,
            tng_rate(&tng_pairs, &opts.tng)?,
        )
    };
    Ok(SystemScores {
        name: sys.name.clone(),
        bleu: bleu_from_stats(&stats),
        chrf_hallucination_rate: chrf_rate,
        tng_hallucination_rate: tng,
        ground_truth_hallucination_rate: sys.ground_truth.as_ref().map(|_| {
            if scored == 0 {
                0.0
            } else {
                100.0 * truth as f64 / scored as f64
            }
        }),
        scored,
        failed: items.len() - scored,
    })
}

fn corpus_bleu(xs: &[&BleuStats], _r: &[&()]) -> Result<f64> {
    let mut s = BleuStats::default();
    for x in xs {
        s += **x;
    }
    Ok(bleu_from_stats(&s))
}

/// Paired bootstrap on BLEU over the sentences both systems scored.
pub fn compare_systems(
    items: &[EvalItem],
    a: &SystemOutputs,
    b: &SystemOutputs,
    params: &BootstrapParams,
) -> Result<BootstrapResult> {
    let items = sorted_items(items)?;
    let mut sa = Vec::new();
    let mut sb = Vec::new();
    for it in &items {
        if let (Some(Some(ha)), Some(Some(hb))) = (a.outputs.get(&it.id), b.outputs.get(&it.id)) {
            let r = words(&it.reference);
            sa.push(bleu_stats(&words(ha), &r));
            sb.push(bleu_stats(&words(hb), &r));
        }
    }
    if sa.is_empty() {
        return Err(Error::invalid(format!(
            "systems {} and {} share no scored sentences",
            a.name, b.name
        )));
    }
    let refs = vec![(); sa.len()];
    paired_bootstrap(corpus_bleu, &sa, &sb, &refs, params)
}

/// Scores every system and marks the best-BLEU system together with every
/// system it does not significantly outperform.
pub fn evaluate_systems(
    direction: Direction,
    items: &[EvalItem],
    systems: &[SystemOutputs],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if systems.is_empty() {
        return Err(Error::invalid("no systems to evaluate"));
    }
    let sorted = sorted_items(items)?;
    let scores = systems
        .iter()
        .map(|s| system_scores(&sorted, s, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.bleu > scores[best].bleu {
            best = i;
        }
    }
    let mut marks = Vec::new();
    for (i, s) in systems.iter().enumerate() {
        let marked = i == best
            || match compare_systems(items, &systems[best], s, &opts.bootstrap) {
                Ok(r) => r.verdict != Verdict::A,
                Err(_) => false,
            };
        if marked {
            marks.push(s.name.clone());
        }
    }
    let report = EvalReport {
        direction,
        bleu_label: opts.bleu_label.clone(),
        systems: scores,
        significance_marks: marks,
    };
    report.validate()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRun {
    /// Grouped by strategy (in request order), then corpus order.
    pub outputs: Vec<SentenceOutput>,
    /// Present when every sentence has a reference.
    pub report: Option<EvalReport>,
}

impl CorpusRun {
    pub fn failed(&self) -> usize {
        self.outputs.iter().filter(|o| o.failed()).count()
    }
}

fn error_chain(e: &Error) -> String {
    e.to_string()
}

fn run_sentence(
    sentence: &crate::corpus::CorpusSentence,
    config: &RunConfig,
    strategies: &[Strategy],
    backend: &dyn Backend,
    vocab: Option<&Vocab>,
) -> Vec<SentenceOutput> {
    let fail_all = |e: &Error| {
        strategies
            .iter()
            .map(|s| SentenceOutput {
                id: sentence.id.clone(),
                system: s.label(),
                lang: config.target_lang.clone(),
                text: None,
                tokens: None,
                score: None,
                finished: false,
                provenance: None,
                pivots: Vec::new(),
                error: Some(error_chain(e)),
            })
            .collect()
    };
    let scorer = match backend.scorer_for(&sentence.id) {
        Ok(s) => s,
        Err(e) => return fail_all(&e),
    };
    let eos = scorer.eos_id();

    // Each pivot language is translated once and shared by every strategy.
    let mut needed: BTreeSet<&str> = BTreeSet::new();
    for s in strategies {
        match s {
            Strategy::Direct => {}
            Strategy::SinglePivot(l) => {
                needed.insert(l);
            }
            _ => needed.extend(config.pivots.iter().map(String::as_str)),
        }
    }
    let pivots: HashMap<&str, std::result::Result<TokenSeq, String>> = needed
        .into_iter()
        .map(|l| {
            let r = pivot_translation(
                &sentence.source,
                &config.source_lang,
                l,
                scorer.as_ref(),
                &config.pivot_decode,
            );
            (l, r.map_err(|e| e.to_string()))
        })
        .collect();

    strategies
        .iter()
        .map(|s| {
            let cfg = config.for_strategy(s);
            let run = || -> std::result::Result<Translation, String> {
                cfg.validate().map_err(|e| e.to_string())?;
                let sources = match s {
                    Strategy::Direct => {
                        SourceSet::single(cfg.source_lang.clone(), sentence.source.clone())
                    }
                    _ => {
                        let mut entries = Vec::new();
                        for l in &cfg.pivots {
                            let seq = pivots[l.as_str()].as_ref().map_err(|e| e.clone())?;
                            entries.push(SourceEntry {
                                lang: l.clone(),
                                seq: seq.clone(),
                            });
                        }
                        if cfg.include_direct_path {
                            entries.push(SourceEntry {
                                lang: cfg.source_lang.clone(),
                                seq: sentence.source.clone(),
                            });
                        }
                        SourceSet::new(entries).map_err(|e| e.to_string())?
                    }
                };
                final_decode(sources, &cfg, scorer.as_ref(), false).map_err(|e| e.to_string())
            };
            let mut out = SentenceOutput {
                id: sentence.id.clone(),
                system: s.label(),
                lang: cfg.target_lang.clone(),
                text: None,
                tokens: None,
                score: None,
                finished: false,
                provenance: None,
                pivots: Vec::new(),
                error: None,
            };
            match run() {
                Ok(t) => {
                    out.text = Some(render(&t.hypothesis.tokens, vocab, eos));
                    out.tokens = Some(t.hypothesis.tokens.ids().to_vec());
                    out.score = Some(t.hypothesis.score);
                    out.finished = t.hypothesis.finished;
                    out.provenance = t.hypothesis.provenance.clone();
                    if !matches!(s, Strategy::Direct) {
                        out.pivots = t
                            .sources
                            .entries()
                            .iter()
                            .filter(|e| e.lang != cfg.source_lang)
                            .map(|e| PivotOutput {
                                lang: e.lang.clone(),
                                tokens: e.seq.ids().to_vec(),
                                text: render(&e.seq, vocab, eos),
                            })
                            .collect();
                    }
                    if !t.hypothesis.finished {
                        out.error = Some(format!(
                            "no finished hypothesis within {} tokens",
                            cfg.final_decode.max_len
                        ));
                    }
                }
                Err(e) => out.error = Some(e),
            }
            out
        })
        .collect()
}

/// Translates a corpus with every strategy in `strategies`, in parallel over
/// sentences. Rows are grouped by strategy (request order), then corpus order.
/// Failed sentences keep a row with an error message.
pub fn translate_corpus(
    corpus: &Corpus,
    config: &RunConfig,
    strategies: &[Strategy],
    backend: &dyn Backend,
    vocab: Option<&Vocab>,
) -> Result<Vec<SentenceOutput>> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    if strategies.is_empty() {
        return Err(Error::invalid("no strategies requested"));
    }
    for s in strategies {
        config.for_strategy(s).validate()?;
    }
    let per_sentence: Vec<Vec<SentenceOutput>> = corpus
        .sentences
        .par_iter()
        .map(|s| run_sentence(s, config, strategies, backend, vocab))
        .collect();
    let mut outputs = Vec::with_capacity(strategies.len() * corpus.len());
    for k in 0..strategies.len() {
        for rows in &per_sentence {
            outputs.push(rows[k].clone());
        }
    }
    Ok(outputs)
}

/// Evaluation items of a corpus, or `None` if some sentence lacks a reference.
pub fn eval_items(corpus: &Corpus) -> Option<Vec<EvalItem>> {
    corpus
        .sentences
        .iter()
        .map(|s| {
            Some(EvalItem {
                id: s.id.clone(),
                source: s.source_text.clone(),
                reference: s.reference.clone()?,
            })
        })
        .collect()
}

/// [`translate_corpus`] followed by evaluation when references are present.
/// Failed sentences are counted, not scored, in the report.
pub fn run_corpus(
    corpus: &Corpus,
    config: &RunConfig,
    strategies: &[Strategy],
    backend: &dyn Backend,
    vocab: Option<&Vocab>,
    opts: &EvalOptions,
) -> Result<CorpusRun> {
    let outputs = translate_corpus(corpus, config, strategies, backend, vocab)?;
    let report = match eval_items(corpus) {
        Some(items) => {
            let systems: Vec<SystemOutputs> = strategies
                .iter()
                .map(|s| SystemOutputs::from_outputs(&s.label(), &outputs))
                .collect();
            let direction = Direction {
                src: corpus.src_lang.clone(),
                tgt: corpus.tgt_lang.clone(),
            };
            Some(evaluate_systems(direction, &items, &systems, opts)?)
        }
        None => None,
    };
    Ok(CorpusRun { outputs, report })
}
