//! Shared domain types: vocabularies, token sequences, per-step distributions,
//! hypotheses and decoding parameters.
//!
//! All log values are natural logarithms. A probability of exactly zero is
//! stored as `f64::NEG_INFINITY`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{log_sum_exp, logvec};

pub type TokenId = u32;

/// Tolerance on `log_sum_exp` for anything claiming to be a distribution.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// An ordered token inventory. Indices are dense in `[0, size)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos_id: TokenId,
    bos_id: Option<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    eos_id: TokenId,
    #[serde(default)]
    bos_id: Option<TokenId>,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = Error;
    fn try_from(r: VocabRepr) -> Result<Self> {
        Vocab::new(r.tokens, r.eos_id, r.bos_id)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            tokens: v.tokens,
            eos_id: v.eos_id,
            bos_id: v.bos_id,
        }
    }
}

impl Vocab {
    pub fn new(tokens: Vec<String>, eos_id: TokenId, bos_id: Option<TokenId>) -> Result<Self> {
        let size = tokens.len();
        if eos_id as usize >= size {
            return Err(Error::invalid(format!(
                "eos_id {eos_id} out of range for vocab of size {size}"
            )));
        }
        if let Some(b) = bos_id {
            if b as usize >= size {
                return Err(Error::invalid(format!("bos_id {b} out of range")));
            }
        }
        let mut index = HashMap::with_capacity(size);
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::invalid(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab {
            tokens,
            index,
            eos_id,
            bos_id,
        })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn bos_id(&self) -> Option<TokenId> {
        self.bos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Whitespace tokenizer. Appends eos; unknown words are an error.
    pub fn encode(&self, text: &str) -> Result<TokenSeq> {
        let mut ids = text
            .split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| Error::invalid(format!("unknown token {w:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ids.retain(|&i| i != self.eos_id);
        ids.push(self.eos_id);
        Ok(TokenSeq(ids))
    }

    /// Inverse of [`Vocab::encode`]: joins the body tokens with single spaces.
    pub fn decode(&self, seq: &TokenSeq) -> String {
        let mut out = String::new();
        for &id in seq.body(self.eos_id) {
            if Some(id) == self.bos_id {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.token(id).unwrap_or("<unk>"));
        }
        out
    }

    pub fn check(&self, seq: &TokenSeq) -> Result<()> {
        seq.check_range(self.size())
    }
}

/// A sequence of token ids. A complete sequence ends in eos and contains it
/// nowhere else.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<TokenId>);

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSeq(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_complete(&self, eos: TokenId) -> bool {
        match self.0.split_last() {
            Some((&last, rest)) => last == eos && !rest.contains(&eos),
            None => false,
        }
    }

    /// Tokens before the first eos (or all tokens if there is none).
    pub fn body(&self, eos: TokenId) -> &[TokenId] {
        match self.0.iter().position(|&t| t == eos) {
            Some(p) => &self.0[..p],
            None => &self.0,
        }
    }

    pub fn check_range(&self, vocab_size: usize) -> Result<()> {
        match self.0.iter().find(|&&t| t as usize >= vocab_size) {
            Some(t) => Err(Error::invalid(format!(
                "token id {t} out of range for vocab of size {vocab_size}"
            ))),
            None => Ok(()),
        }
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(v: Vec<TokenId>) -> Self {
        TokenSeq(v)
    }
}

fn check_log_entries(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid("empty log-probability vector"));
    }
    if let Some(x) = v.iter().find(|x| x.is_nan() || **x == f64::INFINITY) {
        return Err(Error::invalid(format!("log value {x} is not allowed")));
    }
    Ok(())
}

/// Next-token log-probabilities over the full vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepRepr", into = "StepRepr")]
pub struct StepDistribution {
    logprobs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StepRepr {
    #[serde(with = "logvec")]
    logprobs: Vec<f64>,
}

impl TryFrom<StepRepr> for StepDistribution {
    type Error = Error;
    fn try_from(r: StepRepr) -> Result<Self> {
        StepDistribution::new(r.logprobs)
    }
}

impl From<StepDistribution> for StepRepr {
    fn from(d: StepDistribution) -> Self {
        StepRepr {
            logprobs: d.logprobs,
        }
    }
}

impl StepDistribution {
    /// Validates entries and normalization (`|lse| <= 1e-6`).
    pub fn new(logprobs: Vec<f64>) -> Result<Self> {
        check_log_entries(&logprobs)?;
        let lse = log_sum_exp(&logprobs);
        if !(lse.abs() <= NORMALIZATION_TOL) {
            return Err(Error::invalid(format!(
                "log-probabilities are not normalized (log-sum-exp = {lse})"
            )));
        }
        Ok(StepDistribution { logprobs })
    }

    /// Accepts a vector whose log-sum-exp is within `tol` of zero and shifts it
    /// so that it is normalized as exactly as floating point allows.
    pub fn renormalized(mut logprobs: Vec<f64>, tol: f64) -> Result<Self> {
        check_log_entries(&logprobs)?;
        let lse = log_sum_exp(&logprobs);
        if !(lse.abs() <= tol) {
            return Err(Error::invalid(format!(
                "log-sum-exp {lse} outside tolerance {tol}"
            )));
        }
        for x in &mut logprobs {
            *x -= lse;
        }
        StepDistribution::new(logprobs)
    }

    /// Builds from plain probabilities; zeros become negative infinity.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid(format!("invalid probability {p}")));
        }
        StepDistribution::new(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn uniform(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("empty vocabulary"));
        }
        StepDistribution::new(vec![-(size as f64).ln(); size])
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.logprobs
    }
}

/// Output of a combiner: per-token log-scores, normalized or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedStep {
    #[serde(with = "logvec")]
    pub logscores: Vec<f64>,
    pub normalized: bool,
}

impl CombinedStep {
    pub fn len(&self) -> usize {
        self.logscores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logscores.is_empty()
    }
}

impl From<StepDistribution> for CombinedStep {
    fn from(d: StepDistribution) -> Self {
        CombinedStep {
            logscores: d.logprobs,
            normalized: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub lang: String,
    pub seq: TokenSeq,
}

/// The conditioning sources of one ensemble decode, in pivot order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SourceEntry>", into = "Vec<SourceEntry>")]
pub struct SourceSet {
    entries: Vec<SourceEntry>,
}

impl TryFrom<Vec<SourceEntry>> for SourceSet {
    type Error = Error;
    fn try_from(v: Vec<SourceEntry>) -> Result<Self> {
        SourceSet::new(v)
    }
}

impl From<SourceSet> for Vec<SourceEntry> {
    fn from(s: SourceSet) -> Self {
        s.entries
    }
}

impl SourceSet {
    pub fn new(entries: Vec<SourceEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("a source set needs at least one entry"));
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.lang == e.lang) {
                return Err(Error::invalid(format!(
                    "language {:?} appears twice in source set",
                    e.lang
                )));
            }
        }
        Ok(SourceSet { entries })
    }

    pub fn single(lang: impl Into<String>, seq: TokenSeq) -> Self {
        SourceSet {
            entries: vec![SourceEntry {
                lang: lang.into(),
                seq,
            }],
        }
    }

    pub fn entries(&self) -> &[SourceEntry] {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }
}

/// A partial or complete target sequence with its accumulated log-score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: TokenSeq,
    pub score: f64,
    pub finished: bool,
    /// For max-ensemble decoding, the pivot index that supplied the score of
    /// each generated token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Vec<usize>>,
}

impl Hypothesis {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    Direct,
    MultiAvg,
    MaxEns,
    LogAvg,
}

impl Combiner {
    pub const ALL: [Combiner; 4] = [
        Combiner::Direct,
        Combiner::MultiAvg,
        Combiner::MaxEns,
        Combiner::LogAvg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Combiner::Direct => "direct",
            Combiner::MultiAvg => "multiavg",
            Combiner::MaxEns => "maxens",
            Combiner::LogAvg => "logavg",
        }
    }
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Combiner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Combiner::Direct),
            "multiavg" => Ok(Combiner::MultiAvg),
            "maxens" => Ok(Combiner::MaxEns),
            "logavg" => Ok(Combiner::LogAvg),
            other => Err(Error::invalid(format!("unknown combiner {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthNormalization {
    #[default]
    None,
    ByLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub beam_size: usize,
    pub max_len: usize,
    pub combiner: Combiner,
    pub length_normalization: LengthNormalization,
    /// Shift max-ensemble scores back to a distribution at every step.
    /// Off by default: raw maxima are what the objective sums.
    pub renormalize_maxens: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            beam_size: 5,
            max_len: 256,
            combiner: Combiner::Direct,
            length_normalization: LengthNormalization::None,
            renormalize_maxens: false,
        }
    }
}

impl DecodeParams {
    pub fn with_combiner(combiner: Combiner) -> Self {
        DecodeParams {
            combiner,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::invalid("beam_size must be at least 1"));
        }
        if self.max_len == 0 {
            return Err(Error::invalid("max_len must be at least 1"));
        }
        Ok(())
    }
}

/// Re-sums a hypothesis score from its per-step combined scores.
pub fn recompute_score(hyp: &Hypothesis, steps: &[CombinedStep]) -> Result<f64> {
    let ids = hyp.tokens.ids();
    if ids.len() != steps.len() {
        return Err(Error::invalid(format!(
            "{} steps for {} tokens",
            steps.len(),
            ids.len()
        )));
    }
    let mut score = 0.0;
    for (i, (&y, step)) in ids.iter().zip(steps).enumerate() {
        let s = step.logscores.get(y as usize).ok_or_else(|| {
            Error::invalid(format!(
                "token {y} at step {i} outside step of size {}",
                step.len()
            ))
        })?;
        score += s;
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(v: Vec<f64>) -> CombinedStep {
        CombinedStep {
            logscores: v,
            normalized: false,
        }
    }

    fn hyp(ids: Vec<TokenId>, score: f64) -> Hypothesis {
        Hypothesis {
            tokens: TokenSeq(ids),
            score,
            finished: false,
            provenance: None,
        }
    }

    #[test]
    fn recompute_empty() {
        assert_eq!(recompute_score(&hyp(vec![], 0.0), &[]).unwrap(), 0.0);
    }

    #[test]
    fn recompute_single() {
        let s = recompute_score(&hyp(vec![2], -0.5), &[step(vec![-3.0, -2.0, -0.5])]).unwrap();
        assert_eq!(s, -0.5);
    }

    #[test]
    fn recompute_three_steps() {
        let steps = vec![
            step(vec![-0.7, -1.3, -2.9]),
            step(vec![-0.11, -4.2, -0.05]),
            step(vec![-1.75, -0.25, -8.0]),
        ];
        // tokens 1, 2, 0 pick -1.3, -0.05, -1.75
        let expected = -1.3 + -0.05 + -1.75;
        let got = recompute_score(&hyp(vec![1, 2, 0], expected), &steps).unwrap();
        assert!((got - (-3.1)).abs() < 1e-12);
        assert_eq!(got, expected);
    }

    #[test]
    fn recompute_length_mismatch() {
        let err = recompute_score(&hyp(vec![1, 2], 0.0), &[step(vec![0.0, 0.0, 0.0])]);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn vocab_validation() {
        let toks = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(Vocab::new(toks(&["a", "b"]), 2, None).is_err());
        assert!(Vocab::new(toks(&["a", "a"]), 0, None).is_err());
        let v = Vocab::new(toks(&["a", "b", "</s>"]), 2, None).unwrap();
        let seq = v.encode("b a  b").unwrap();
        assert_eq!(seq.ids(), &[1, 0, 1, 2]);
        assert!(seq.is_complete(2));
        assert_eq!(v.decode(&seq), "b a b");
        assert!(v.encode("c").is_err());
    }

    #[test]
    fn completeness() {
        assert!(TokenSeq(vec![1, 0]).is_complete(0));
        assert!(!TokenSeq(vec![0, 1, 0]).is_complete(0));
        assert!(!TokenSeq(vec![]).is_complete(0));
        assert_eq!(TokenSeq(vec![3, 4, 0, 5]).body(0), &[3, 4]);
    }

    #[test]
    fn step_distribution_checks() {
        assert!(StepDistribution::from_probs(&[0.5, 0.5]).is_ok());
        assert!(StepDistribution::from_probs(&[0.5, 0.6]).is_err());
        assert!(StepDistribution::new(vec![f64::NAN, 0.0]).is_err());
        let d = StepDistribution::from_probs(&[1.0, 0.0]).unwrap();
        assert_eq!(d.logprobs()[1], f64::NEG_INFINITY);
        let r = StepDistribution::renormalized(vec![0.5f64.ln() + 5e-5, 0.5f64.ln() + 5e-5], 1e-4)
            .unwrap();
        assert!((r.logprobs()[0] - 0.5f64.ln()).abs() < 1e-15);
        assert!(StepDistribution::renormalized(vec![0.0, 0.0], 1e-4).is_err());
    }

    #[test]
    fn source_set_rules() {
        let e = |l: &str| SourceEntry {
            lang: l.into(),
            seq: TokenSeq(vec![0]),
        };
        assert!(SourceSet::new(vec![]).is_err());
        assert!(SourceSet::new(vec![e("en"), e("en")]).is_err());
        assert_eq!(SourceSet::new(vec![e("en"), e("fr")]).unwrap().k(), 2);
    }

    #[test]
    fn decode_params_defaults() {
        let p = DecodeParams::default();
        assert_eq!(p.beam_size, 5);
        assert_eq!(p.max_len, 256);
        assert_eq!(p.length_normalization, LengthNormalization::None);
        assert!(!p.renormalize_maxens);
        assert!(DecodeParams { beam_size: 0, ..p }.validate().is_err());
        assert!(DecodeParams { max_len: 0, ..p }.validate().is_err());
    }
}
