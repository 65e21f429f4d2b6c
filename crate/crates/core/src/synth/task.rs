use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::channel::{channel_step, AttractorConfig, ChannelMode, ChannelModel, Confusion};
use super::cipher::CipherLanguage;
use super::{fnv1a, mix64, sentence_seed};
use crate::corpus::SentenceRecord;
use crate::decoder::{Scorer, StepQuery};
use crate::error::{Error, Result};
use crate::pipeline::Backend;
use crate::types::{DecodeParams, LengthNormalization, StepDistribution, TokenId, TokenSeq, Vocab};

pub const EOS_TOKEN: &str = "</s>";

/// Fidelity and noise of a family of honest channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSettings {
    pub fidelity: f64,
    /// Fraction of content positions where a distractor takes the residual mass.
    pub error_rate: f64,
}

/// Pivot-to-target channels. Each sentence has one confident pivot; the others
/// are weak and, on triggered sentences, fall into the attractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinalStageSettings {
    pub confident_fidelity: f64,
    pub weak_fidelity: f64,
    /// Confident pivot's mass on its first token, if different.
    pub confident_first_step: Option<f64>,
    /// Per weak pivot (in pivot order, cycled), the attractor mass at the first
    /// step of a triggered sentence.
    pub weak_first_step_attractor: Vec<f64>,
}

impl Default for FinalStageSettings {
    fn default() -> Self {
        FinalStageSettings {
            confident_fidelity: 0.9,
            weak_fidelity: 0.35,
            confident_first_step: Some(0.91),
            weak_first_step_attractor: vec![0.15, 0.14],
        }
    }
}

/// A synthetic study. Loaded from TOML; every field has a default, and the
/// defaults are the documented sticky-hallucination regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Vocabulary size including eos.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub corpus_size: usize,
    pub seed: u64,
    pub source_lang: String,
    pub target_lang: String,
    pub pivots: Vec<String>,
    pub attractor_len: usize,
    pub trigger_prob: f64,
    pub attractor_conf: f64,
    pub direct: ChannelSettings,
    pub pivot_stage: ChannelSettings,
    pub final_stage: FinalStageSettings,
    pub beam_size: usize,
    pub pivot_beam_size: usize,
    pub decode_max_len: usize,
    pub length_normalization: LengthNormalization,
    pub chrf_threshold: f64,
    pub bootstrap_resamples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            vocab_size: 48,
            min_len: 6,
            max_len: 14,
            corpus_size: 500,
            seed: 20_240_517,
            source_lang: "src".into(),
            target_lang: "tgt".into(),
            pivots: vec!["en".into(), "es".into(), "fr".into()],
            attractor_len: 8,
            trigger_prob: 0.3,
            attractor_conf: 0.45,
            direct: ChannelSettings {
                fidelity: 0.35,
                error_rate: 0.3,
            },
            pivot_stage: ChannelSettings {
                fidelity: 0.45,
                error_rate: 0.1,
            },
            final_stage: FinalStageSettings::default(),
            beam_size: 5,
            pivot_beam_size: 5,
            decode_max_len: 48,
            length_normalization: LengthNormalization::None,
            chrf_threshold: 20.0,
            bootstrap_resamples: 1000,
        }
    }
}

impl ExperimentConfig {
    /// Deterministic ciphers: every channel has fidelity 1 and nothing triggers.
    pub fn noiseless() -> Self {
        ExperimentConfig {
            trigger_prob: 0.0,
            direct: ChannelSettings {
                fidelity: 1.0,
                error_rate: 0.0,
            },
            pivot_stage: ChannelSettings {
                fidelity: 1.0,
                error_rate: 0.0,
            },
            final_stage: FinalStageSettings {
                confident_fidelity: 1.0,
                weak_fidelity: 1.0,
                confident_first_step: None,
                weak_first_step_attractor: Vec::new(),
            },
            ..Default::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::invalid("vocab_size must be at least 2"));
        }
        if self.corpus_size == 0 {
            return Err(Error::invalid("corpus_size must be at least 1"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::invalid("need 1 <= min_len <= max_len"));
        }
        if self.pivots.is_empty() {
            return Err(Error::invalid("at least one pivot language is required"));
        }
        let mut langs = vec![&self.source_lang, &self.target_lang];
        langs.extend(self.pivots.iter());
        for (i, l) in langs.iter().enumerate() {
            if langs[..i].contains(l) {
                return Err(Error::invalid(format!("language {l:?} listed twice")));
            }
        }
        if self.attractor_len == 0 {
            return Err(Error::invalid("attractor_len must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.trigger_prob) {
            return Err(Error::invalid("trigger_prob must lie in [0, 1]"));
        }
        if !(self.attractor_conf > 0.0 && self.attractor_conf < 1.0) {
            return Err(Error::invalid("attractor_conf must lie in (0, 1)"));
        }
        let fids = [
            self.direct.fidelity,
            self.pivot_stage.fidelity,
            self.final_stage.confident_fidelity,
            self.final_stage.weak_fidelity,
        ];
        if fids.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::invalid("fidelities must lie in (0, 1]"));
        }
        for r in [self.direct.error_rate, self.pivot_stage.error_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid("error rates must lie in [0, 1]"));
            }
        }
        let firsts = self
            .final_stage
            .confident_first_step
            .iter()
            .chain(&self.final_stage.weak_first_step_attractor);
        for m in firsts {
            if !(*m > 0.0 && *m < 1.0 + f64::EPSILON) {
                return Err(Error::invalid("first-step masses must lie in (0, 1]"));
            }
        }
        if self.beam_size == 0 || self.pivot_beam_size == 0 || self.decode_max_len == 0 {
            return Err(Error::invalid(
                "beam sizes and decode_max_len must be positive",
            ));
        }
        Ok(())
    }

    pub fn final_params(&self) -> DecodeParams {
        DecodeParams {
            beam_size: self.beam_size,
            max_len: self.decode_max_len,
            length_normalization: self.length_normalization,
            ..Default::default()
        }
    }

    pub fn pivot_params(&self) -> DecodeParams {
        DecodeParams {
            beam_size: self.pivot_beam_size,
            ..self.final_params()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSentence {
    pub id: String,
    /// Meaning in base (un-enciphered) token ids.
    pub base: Vec<TokenId>,
    pub source: TokenSeq,
    pub reference: TokenSeq,
    pub triggered: bool,
    /// Index into the pivot list of this sentence's confident pivot.
    pub confident_pivot: usize,
}

/// A built task: vocabulary, languages, attractor and parallel corpus.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub config: ExperimentConfig,
    pub vocab: Vocab,
    languages: HashMap<String, CipherLanguage>,
    pub attractor: TokenSeq,
    pub sentences: Vec<TaskSentence>,
    by_id: HashMap<String, usize>,
}

fn random_word<R: Rng>(rng: &mut R) -> String {
    let len = rng.random_range(3..=6);
    (0..len)
        .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
        .collect()
}

/// Builds the task described by `config`.
///
/// Generation order, all from `ChaCha8Rng::seed_from_u64(config.seed)`:
/// content words, then one permutation per language (source, target, pivots),
/// then the attractor. Sentence `j` has id `s{j:05}` and its own stream
/// `ChaCha8Rng::seed_from_u64(sentence_seed(seed, id))`, drawn in this order:
/// length in `min_len..=max_len`, that many base tokens, the trigger flag, the
/// confident pivot index.
pub fn build_task(config: &ExperimentConfig) -> Result<SyntheticTask> {
    config.validate()?;
    let v = config.vocab_size;
    let eos = (v - 1) as TokenId;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut words: Vec<String> = Vec::with_capacity(v);
    while words.len() < v - 1 {
        let w = random_word(&mut rng);
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words.push(EOS_TOKEN.into());
    let vocab = Vocab::new(words, eos, None)?;

    let mut languages = HashMap::new();
    let mut order = vec![config.source_lang.clone(), config.target_lang.clone()];
    order.extend(config.pivots.iter().cloned());
    for lang in &order {
        languages.insert(
            lang.clone(),
            CipherLanguage::random(lang.clone(), v, &mut rng),
        );
    }

    let mut attractor: Vec<TokenId> = (0..config.attractor_len)
        .map(|_| rng.random_range(0..eos))
        .collect();
    attractor.push(eos);

    let src = &languages[&config.source_lang];
    let tgt = &languages[&config.target_lang];
    let mut sentences = Vec::with_capacity(config.corpus_size);
    let mut by_id = HashMap::new();
    for j in 0..config.corpus_size {
        let id = format!("s{j:05}");
        let mut srng = ChaCha8Rng::seed_from_u64(sentence_seed(config.seed, &id));
        let len = srng.random_range(config.min_len..=config.max_len);
        let base: Vec<TokenId> = (0..len).map(|_| srng.random_range(0..eos)).collect();
        let triggered = srng.random_bool(config.trigger_prob);
        let confident_pivot = srng.random_range(0..config.pivots.len());
        let encode = |l: &CipherLanguage| {
            let mut ids: Vec<TokenId> = base.iter().map(|&b| l.encipher(b)).collect();
            ids.push(eos);
            TokenSeq(ids)
        };
        by_id.insert(id.clone(), j);
        sentences.push(TaskSentence {
            id,
            source: encode(src),
            reference: encode(tgt),
            base,
            triggered,
            confident_pivot,
        });
    }

    Ok(SyntheticTask {
        config: config.clone(),
        vocab,
        languages,
        attractor: TokenSeq(attractor),
        sentences,
        by_id,
    })
}

impl SyntheticTask {
    pub fn eos(&self) -> TokenId {
        self.vocab.eos_id()
    }

    pub fn language(&self, lang: &str) -> Option<&CipherLanguage> {
        self.languages.get(lang)
    }

    pub fn sentence(&self, id: &str) -> Option<&TaskSentence> {
        self.by_id.get(id).map(|&i| &self.sentences[i])
    }

    /// Source and reference records in the JSONL sentence format.
    pub fn corpus_records(&self) -> Vec<SentenceRecord> {
        let mut out = Vec::with_capacity(2 * self.sentences.len());
        for s in &self.sentences {
            for (lang, seq) in [
                (&self.config.source_lang, &s.source),
                (&self.config.target_lang, &s.reference),
            ] {
                out.push(SentenceRecord {
                    id: s.id.clone(),
                    lang: lang.clone(),
                    text: Some(self.vocab.decode(seq)),
                    tokens: Some(seq.ids().to_vec()),
                });
            }
        }
        out
    }

    /// The sentence's pivot translation if every channel were perfect.
    pub fn pivot_reference(&self, sentence: &TaskSentence, pivot: &str) -> Option<TokenSeq> {
        let l = self.languages.get(pivot)?;
        let mut ids: Vec<TokenId> = sentence.base.iter().map(|&b| l.encipher(b)).collect();
        ids.push(self.eos());
        Some(TokenSeq(ids))
    }

    /// Ground-truth hallucination: a triggered sentence whose output agrees
    /// with the attractor at no fewer than half of the attractor's positions.
    pub fn is_hallucination(&self, sentence: &TaskSentence, output: &TokenSeq) -> bool {
        if !sentence.triggered {
            return false;
        }
        let attr = self.attractor.body(self.eos());
        let out = output.body(self.eos());
        let hits = attr.iter().zip(out).filter(|(a, o)| a == o).count();
        2 * hits >= attr.len()
    }

    fn attractor_config(&self) -> AttractorConfig {
        AttractorConfig {
            attractor_seq: self.attractor.clone(),
            trigger_prob: self.config.trigger_prob,
            attractor_conf: self.config.attractor_conf,
        }
    }

    /// The channel (and its mode) serving `src_lang -> tgt_lang` for one
    /// sentence.
    pub fn channel_for(
        &self,
        sentence: &TaskSentence,
        src_lang: &str,
        tgt_lang: &str,
    ) -> Result<(ChannelModel, ChannelMode)> {
        let cfg = &self.config;
        let from = self
            .languages
            .get(src_lang)
            .ok_or_else(|| Error::invalid(format!("unknown language {src_lang:?}")))?;
        let to = self
            .languages
            .get(tgt_lang)
            .ok_or_else(|| Error::invalid(format!("unknown language {tgt_lang:?}")))?;
        let pivot_index = |l: &str| cfg.pivots.iter().position(|p| p == l);

        let mut ch = ChannelModel {
            src_lang: src_lang.into(),
            tgt_lang: tgt_lang.into(),
            mapping: from.mapping_to(to),
            eos: self.eos(),
            fidelity: 1.0,
            confusion: Confusion::Uniform,
            attractor: self.attractor_config(),
            first_step_mass: None,
            noise_key: cfg.seed
                ^ mix64(fnv1a(src_lang.as_bytes()) ^ mix64(fnv1a(tgt_lang.as_bytes()))),
        };
        let mut mode = ChannelMode::Honest;

        if src_lang == cfg.source_lang && tgt_lang == cfg.target_lang {
            ch.fidelity = cfg.direct.fidelity;
            ch.confusion = Confusion::Distractor {
                rate: cfg.direct.error_rate,
            };
            if sentence.triggered {
                mode = ChannelMode::Triggered;
            }
        } else if src_lang == cfg.source_lang && pivot_index(tgt_lang).is_some() {
            ch.fidelity = cfg.pivot_stage.fidelity;
            ch.confusion = Confusion::Distractor {
                rate: cfg.pivot_stage.error_rate,
            };
        } else if let (Some(k), true) = (pivot_index(src_lang), tgt_lang == cfg.target_lang) {
            let fs = &cfg.final_stage;
            if k == sentence.confident_pivot {
                ch.fidelity = fs.confident_fidelity;
                ch.first_step_mass = fs.confident_first_step;
                if sentence.triggered {
                    ch.confusion = Confusion::Sticky;
                }
            } else {
                ch.fidelity = fs.weak_fidelity;
                if sentence.triggered {
                    mode = ChannelMode::Triggered;
                    let weak_rank = if k < sentence.confident_pivot {
                        k
                    } else {
                        k - 1
                    };
                    if !fs.weak_first_step_attractor.is_empty() {
                        let m = fs.weak_first_step_attractor
                            [weak_rank % fs.weak_first_step_attractor.len()];
                        ch.first_step_mass = Some(m);
                    }
                }
            }
        } else {
            return Err(Error::invalid(format!(
                "no synthetic channel for {src_lang} -> {tgt_lang}"
            )));
        }
        Ok((ch, mode))
    }

    /// Scorer bound to one sentence of this task.
    pub fn scorer(self: &Arc<Self>, sentence_id: &str) -> Result<SyntheticScorer> {
        let index = *self
            .by_id
            .get(sentence_id)
            .ok_or_else(|| Error::invalid(format!("unknown sentence id {sentence_id:?}")))?;
        Ok(SyntheticScorer {
            task: Arc::clone(self),
            index,
        })
    }
}

/// Realizes the scorer contract over the channels of one sentence.
#[derive(Debug, Clone)]
pub struct SyntheticScorer {
    task: Arc<SyntheticTask>,
    index: usize,
}

impl SyntheticScorer {
    pub fn sentence(&self) -> &TaskSentence {
        &self.task.sentences[self.index]
    }
}

impl Scorer for SyntheticScorer {
    fn vocab_size(&self) -> usize {
        self.task.vocab.size()
    }

    fn eos_id(&self) -> TokenId {
        self.task.eos()
    }

    fn score_batch(&self, queries: &[StepQuery<'_>]) -> Result<Vec<StepDistribution>> {
        let sentence = self.sentence();
        let mut cache: HashMap<(&str, &str), (ChannelModel, ChannelMode)> = HashMap::new();
        queries
            .iter()
            .map(|q| {
                let key = (q.src_lang, q.tgt_lang);
                if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(key) {
                    let ch = self.task.channel_for(sentence, q.src_lang, q.tgt_lang)?;
                    e.insert(ch);
                }
                let (ch, mode) = &cache[&key];
                channel_step(ch, q.source, q.prefix, *mode)
            })
            .collect()
    }
}

/// Backend over an `Arc<SyntheticTask>`: one scorer per sentence id.
#[derive(Debug, Clone)]
pub struct SyntheticBackend(pub Arc<SyntheticTask>);

impl Backend for SyntheticBackend {
    fn scorer_for(&self, sentence_id: &str) -> Result<Arc<dyn Scorer>> {
        Ok(Arc::new(self.0.scorer(sentence_id)?))
    }
}
