//! Beam search over a pluggable scorer.
//!
//! At every step each live hypothesis is scored once per conditioning source,
//! all with the same target prefix, and the resulting distributions are merged
//! by the configured [`Combiner`]. All `K * beam` queries of a step go to the
//! scorer as one batch.
//!
//! Pruning keeps the `beam_size` best candidates by (score desc, token id asc,
//! parent order asc). Candidates ending in eos move to a finished pool capped at
//! `beam_size`. Search stops when no live hypothesis remains, when `max_len`
//! tokens have been generated, or when the pool is full and the best live score
//! can no longer beat the worst pooled one. All combiners produce scores `<= 0`
//! per token, so without length normalization that last rule is exact.

use std::cmp::Ordering;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::combiners::{combine, Combined};
use crate::error::{Error, Result};
use crate::types::{
    CombinedStep, Combiner, DecodeParams, Hypothesis, LengthNormalization, SourceSet,
    StepDistribution, TokenId, TokenSeq,
};

/// One next-token query: a conditioning source plus the target prefix so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepQuery<'a> {
    pub source: &'a TokenSeq,
    pub src_lang: &'a str,
    pub tgt_lang: &'a str,
    pub prefix: &'a [TokenId],
}

/// Provider of next-token distributions.
///
/// Implementations must be deterministic within a session: the same
/// `(source, languages, prefix)` always yields the same distribution.
pub trait Scorer: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn eos_id(&self) -> TokenId;

    /// One distribution per query, in query order.
    fn score_batch(&self, queries: &[StepQuery<'_>]) -> Result<Vec<StepDistribution>>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos_id(&self) -> TokenId {
        (**self).eos_id()
    }
    fn score_batch(&self, queries: &[StepQuery<'_>]) -> Result<Vec<StepDistribution>> {
        (**self).score_batch(queries)
    }
}

impl<S: Scorer + ?Sized> Scorer for Arc<S> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos_id(&self) -> TokenId {
        (**self).eos_id()
    }
    fn score_batch(&self, queries: &[StepQuery<'_>]) -> Result<Vec<StepDistribution>> {
        (**self).score_batch(queries)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos_id(&self) -> TokenId {
        (**self).eos_id()
    }
    fn score_batch(&self, queries: &[StepQuery<'_>]) -> Result<Vec<StepDistribution>> {
        (**self).score_batch(queries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBeam {
    pub tokens: Vec<TokenId>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceChoice {
    pub parent: usize,
    pub token: TokenId,
    pub score: f64,
}

/// Everything the search saw and decided at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    /// Live hypotheses entering the step.
    pub beams: Vec<TraceBeam>,
    /// Combined scores per live hypothesis; every finite entry was a candidate.
    pub combined: Vec<CombinedStep>,
    /// Max-ensemble winner per token, per live hypothesis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Vec<Vec<usize>>>,
    /// Surviving expansions in rank order.
    pub chosen: Vec<TraceChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub eos_id: TokenId,
    pub params: DecodeParams,
    pub steps: Vec<StepTrace>,
}

impl DecodeTrace {
    /// Rebuilds the returned hypotheses from the recorded choices alone.
    pub fn replay(&self) -> Result<Vec<Hypothesis>> {
        let mut live = vec![Beam::root()];
        let mut pool = Pool::new(self.params);
        let mut order = 0usize;
        for st in &self.steps {
            if st.beams.len() != live.len() {
                return Err(Error::invalid(format!(
                    "trace step {} lists {} beams, replay has {}",
                    st.step,
                    st.beams.len(),
                    live.len()
                )));
            }
            for (b, tb) in live.iter().zip(&st.beams) {
                if b.tokens != tb.tokens || b.score.to_bits() != tb.score.to_bits() {
                    return Err(Error::invalid(format!(
                        "trace step {} diverges from replay",
                        st.step
                    )));
                }
            }
            let mut next = Vec::new();
            for c in &st.chosen {
                let parent = live.get(c.parent).ok_or_else(|| {
                    Error::invalid(format!("trace choice refers to missing beam {}", c.parent))
                })?;
                let step = st
                    .combined
                    .get(c.parent)
                    .ok_or_else(|| Error::invalid("trace is missing combined scores"))?;
                let prov = st
                    .provenance
                    .as_ref()
                    .map(|p| p[c.parent][c.token as usize]);
                let child = parent.extend(c.token, step.logscores[c.token as usize], prov, order);
                order += 1;
                if child.score.to_bits() != c.score.to_bits() {
                    return Err(Error::invalid(format!(
                        "trace step {}: recorded score {} but replay gives {}",
                        st.step, c.score, child.score
                    )));
                }
                if c.token == self.eos_id {
                    pool.push(child);
                } else {
                    next.push(child);
                }
            }
            live = next;
        }
        Ok(finish(pool, live, self.params, self.eos_id))
    }

    /// One JSON object per step, newline-delimited.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for st in &self.steps {
            serde_json::to_writer(&mut w, st)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R, eos_id: TokenId, params: DecodeParams) -> Result<Self> {
        let mut steps = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            steps.push(serde_json::from_str(&line)?);
        }
        Ok(DecodeTrace {
            eos_id,
            params,
            steps,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// Best first. Finished hypotheses if any were found, otherwise the best
    /// unfinished ones (flagged `finished == false`).
    pub hypotheses: Vec<Hypothesis>,
    pub trace: Option<DecodeTrace>,
}

impl DecodeOutput {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    pub fn all_unfinished(&self) -> bool {
        self.hypotheses.iter().all(|h| !h.finished)
    }
}

#[derive(Debug, Clone)]
struct Beam {
    tokens: Vec<TokenId>,
    score: f64,
    provenance: Option<Vec<usize>>,
    order: usize,
}

impl Beam {
    fn root() -> Self {
        Beam {
            tokens: Vec::new(),
            score: 0.0,
            provenance: None,
            order: 0,
        }
    }

    fn extend(&self, token: TokenId, logscore: f64, prov: Option<usize>, order: usize) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.push(token);
        let provenance = prov.map(|p| {
            let mut v = self.provenance.clone().unwrap_or_default();
            v.push(p);
            v
        });
        Beam {
            tokens,
            score: self.score + logscore,
            provenance,
            order,
        }
    }

    fn into_hypothesis(self, eos: TokenId) -> Hypothesis {
        let finished = self.tokens.last() == Some(&eos);
        Hypothesis {
            tokens: TokenSeq(self.tokens),
            score: self.score,
            finished,
            provenance: self.provenance,
        }
    }
}

fn rank_score(score: f64, len: usize, norm: LengthNormalization) -> f64 {
    match norm {
        LengthNormalization::None => score,
        LengthNormalization::ByLength => score / len.max(1) as f64,
    }
}

fn by_rank(params: DecodeParams) -> impl Fn(&Beam, &Beam) -> Ordering {
    move |a, b| {
        let ra = rank_score(a.score, a.tokens.len(), params.length_normalization);
        let rb = rank_score(b.score, b.tokens.len(), params.length_normalization);
        rb.total_cmp(&ra).then(a.order.cmp(&b.order))
    }
}

struct Pool {
    params: DecodeParams,
    items: Vec<Beam>,
}

impl Pool {
    fn new(params: DecodeParams) -> Self {
        Pool {
            params,
            items: Vec::new(),
        }
    }

    fn push(&mut self, b: Beam) {
        self.items.push(b);
        self.items.sort_by(by_rank(self.params));
        self.items.truncate(self.params.beam_size);
    }

    fn is_full(&self) -> bool {
        self.items.len() >= self.params.beam_size
    }

    fn worst_rank(&self) -> Option<f64> {
        self.items
            .last()
            .map(|b| rank_score(b.score, b.tokens.len(), self.params.length_normalization))
    }
}

fn finish(pool: Pool, mut live: Vec<Beam>, params: DecodeParams, eos: TokenId) -> Vec<Hypothesis> {
    if !pool.items.is_empty() {
        return pool
            .items
            .into_iter()
            .map(|b| b.into_hypothesis(eos))
            .collect();
    }
    live.sort_by(by_rank(params));
    live.truncate(params.beam_size);
    live.into_iter().map(|b| b.into_hypothesis(eos)).collect()
}

fn validate_inputs(sources: &SourceSet, scorer: &dyn Scorer, params: &DecodeParams) -> Result<()> {
    params.validate()?;
    if params.combiner == Combiner::Direct && sources.k() != 1 {
        return Err(Error::invalid(format!(
            "direct scoring needs exactly one source, got {}",
            sources.k()
        )));
    }
    let v = scorer.vocab_size();
    if (scorer.eos_id() as usize) >= v {
        return Err(Error::invalid("scorer eos id outside its vocabulary"));
    }
    for e in sources.entries() {
        e.seq.check_range(v)?;
    }
    Ok(())
}

/// Queries all sources for every prefix and combines per prefix. Each group of
/// `K` consecutive queries shares one prefix.
fn score_prefixes(
    sources: &SourceSet,
    tgt_lang: &str,
    scorer: &dyn Scorer,
    prefixes: &[&[TokenId]],
    params: &DecodeParams,
) -> Result<Vec<Combined>> {
    let k = sources.k();
    let mut queries = Vec::with_capacity(prefixes.len() * k);
    for prefix in prefixes {
        for e in sources.entries() {
            queries.push(StepQuery {
                source: &e.seq,
                src_lang: &e.lang,
                tgt_lang,
                prefix,
            });
        }
    }
    let dists = scorer.score_batch(&queries)?;
    if dists.len() != queries.len() {
        return Err(Error::protocol(
            None,
            format!(
                "{} distributions for {} queries",
                dists.len(),
                queries.len()
            ),
        ));
    }
    let v = scorer.vocab_size();
    if let Some(i) = dists.iter().position(|d| d.len() != v) {
        return Err(Error::protocol(
            Some(i),
            format!(
                "distribution of length {} for vocab of size {v}",
                dists[i].len()
            ),
        ));
    }
    dists
        .chunks(k)
        .map(|group| combine(params.combiner, group, params.renormalize_maxens))
        .collect()
}

/// Beam search conditioned on every entry of `sources`.
pub fn beam_search(
    sources: &SourceSet,
    tgt_lang: &str,
    scorer: &dyn Scorer,
    params: &DecodeParams,
    record_trace: bool,
) -> Result<DecodeOutput> {
    validate_inputs(sources, scorer, params)?;
    let eos = scorer.eos_id();
    let params = *params;
    let mut live = vec![Beam::root()];
    let mut pool = Pool::new(params);
    let mut trace = record_trace.then(|| DecodeTrace {
        eos_id: eos,
        params,
        steps: Vec::new(),
    });
    let mut order = 0usize;

    for step in 0..params.max_len {
        if live.is_empty() {
            break;
        }
        if pool.is_full() {
            let best_live = live
                .iter()
                .map(|b| rank_score(b.score, b.tokens.len(), params.length_normalization))
                .fold(f64::NEG_INFINITY, f64::max);
            if best_live <= pool.worst_rank().unwrap_or(f64::NEG_INFINITY) {
                break;
            }
        }

        let prefixes: Vec<&[TokenId]> = live.iter().map(|b| b.tokens.as_slice()).collect();
        let combined =
            score_prefixes(sources, tgt_lang, scorer, &prefixes, &params).map_err(|e| {
                Error::Decode {
                    step,
                    source: Box::new(e),
                }
            })?;

        // (rank, token, parent, raw score)
        let mut cands: Vec<(f64, TokenId, usize, f64)> = Vec::new();
        for (p, (beam, c)) in live.iter().zip(&combined).enumerate() {
            for (y, &s) in c.step.logscores.iter().enumerate() {
                if s == f64::NEG_INFINITY {
                    continue;
                }
                let total = beam.score + s;
                let rank = rank_score(total, beam.tokens.len() + 1, params.length_normalization);
                cands.push((rank, y as TokenId, p, s));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(params.beam_size);

        let mut next = Vec::with_capacity(cands.len());
        let mut chosen = Vec::with_capacity(cands.len());
        for &(_, y, p, s) in &cands {
            let prov = combined[p].provenance.as_ref().map(|v| v[y as usize]);
            let child = live[p].extend(y, s, prov, order);
            order += 1;
            chosen.push(TraceChoice {
                parent: p,
                token: y,
                score: child.score,
            });
            if y == eos {
                pool.push(child);
            } else {
                next.push(child);
            }
        }

        if let Some(t) = trace.as_mut() {
            let has_prov = combined.iter().any(|c| c.provenance.is_some());
            t.steps.push(StepTrace {
                step,
                beams: live
                    .iter()
                    .map(|b| TraceBeam {
                        tokens: b.tokens.clone(),
                        score: b.score,
                    })
                    .collect(),
                provenance: has_prov.then(|| {
                    combined
                        .iter()
                        .map(|c| c.provenance.clone().unwrap_or_default())
                        .collect()
                }),
                combined: combined.into_iter().map(|c| c.step).collect(),
                chosen,
            });
        }
        live = next;
    }

    Ok(DecodeOutput {
        hypotheses: finish(pool, live, params, eos),
        trace,
    })
}

/// Forced decoding: the combined score of a given complete sequence.
pub fn score_fixed_sequence(
    target: &TokenSeq,
    sources: &SourceSet,
    tgt_lang: &str,
    scorer: &dyn Scorer,
    params: &DecodeParams,
) -> Result<f64> {
    validate_inputs(sources, scorer, params)?;
    target.check_range(scorer.vocab_size())?;
    let eos = scorer.eos_id();
    if !target.is_complete(eos) {
        return Err(Error::invalid(
            "forced scoring needs a complete sequence ending in eos",
        ));
    }
    let ids = target.ids();
    let prefixes: Vec<&[TokenId]> = (0..ids.len()).map(|i| &ids[..i]).collect();
    let combined = score_prefixes(sources, tgt_lang, scorer, &prefixes, params).map_err(|e| {
        Error::Decode {
            step: 0,
            source: Box::new(e),
        }
    })?;
    let mut score = 0.0;
    for (c, &y) in combined.iter().zip(ids) {
        score += c.step.logscores[y as usize];
    }
    Ok(score)
}
