use serde::{Deserialize, Serialize};

use super::{fnv1a, mix64, unit};
use crate::error::{Error, Result};
use crate::types::{StepDistribution, TokenId, TokenSeq};

/// Where the probability mass not given to the primary token goes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Confusion {
    /// Spread evenly over every other token.
    Uniform,
    /// All of it on the attractor's token for this position (uniform when that
    /// token is the primary one).
    Sticky,
    /// At a hash-chosen fraction `rate` of source positions all of it goes to
    /// one hash-chosen wrong content token; elsewhere uniform. Only applies in
    /// honest mode and only to content positions.
    Distractor { rate: f64 },
}

/// The shared hallucination and how often it takes over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorConfig {
    /// Complete (eos-terminated) sequence in target-language tokens.
    pub attractor_seq: TokenSeq,
    pub trigger_prob: f64,
    pub attractor_conf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    Honest,
    Triggered,
}

/// A prefix-deterministic synthetic translation channel. The emission at
/// target position `i` depends only on `i` and the source, never on which
/// tokens the prefix holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub src_lang: String,
    pub tgt_lang: String,
    /// Source token to correct target token.
    pub mapping: Vec<TokenId>,
    pub eos: TokenId,
    pub fidelity: f64,
    pub confusion: Confusion,
    pub attractor: AttractorConfig,
    /// Overrides the primary-token mass at position 0 (fidelity in honest
    /// mode, attractor confidence in triggered mode).
    #[serde(default)]
    pub first_step_mass: Option<f64>,
    /// Salt for the distractor hash.
    #[serde(default)]
    pub noise_key: u64,
}

impl ChannelModel {
    pub fn vocab_size(&self) -> usize {
        self.mapping.len()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vocab_size();
        if v < 2 {
            return Err(Error::invalid("channel vocabulary needs at least 2 tokens"));
        }
        if self.eos as usize >= v {
            return Err(Error::invalid("eos outside channel vocabulary"));
        }
        if !(self.fidelity > 0.0 && self.fidelity <= 1.0) {
            return Err(Error::invalid(format!(
                "fidelity {} not in (0, 1]",
                self.fidelity
            )));
        }
        let a = &self.attractor;
        if !(0.0..=1.0).contains(&a.trigger_prob) {
            return Err(Error::invalid("trigger_prob not in [0, 1]"));
        }
        if !(a.attractor_conf > 0.0 && a.attractor_conf < 1.0) {
            return Err(Error::invalid("attractor_conf not in (0, 1)"));
        }
        if !a.attractor_seq.is_complete(self.eos) {
            return Err(Error::invalid("attractor sequence must end in eos"));
        }
        a.attractor_seq.check_range(v)?;
        if let Some(m) = self.first_step_mass {
            if !(m > 0.0 && m <= 1.0) {
                return Err(Error::invalid("first_step_mass not in (0, 1]"));
            }
        }
        if let Confusion::Distractor { rate } = self.confusion {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::invalid("distractor rate not in [0, 1]"));
            }
        }
        Ok(())
    }

    fn attractor_token(&self, i: usize) -> TokenId {
        self.attractor
            .attractor_seq
            .ids()
            .get(i)
            .copied()
            .unwrap_or(self.eos)
    }
}

fn seq_hash(ids: &[TokenId]) -> u64 {
    let bytes: Vec<u8> = ids.iter().flat_map(|t| t.to_le_bytes()).collect();
    fnv1a(&bytes)
}

/// Next-token distribution of `channel` for `source` after `prefix`.
///
/// Honest mode puts `fidelity` on the correct next token: the mapped source
/// token at this position, or eos once the source body is exhausted (so a
/// prefix running past the source yields an eos-dominated distribution).
/// Triggered mode puts `attractor_conf` on the attractor's token at this
/// position. The rest follows [`Confusion`].
pub fn channel_step(
    channel: &ChannelModel,
    source: &TokenSeq,
    prefix: &[TokenId],
    mode: ChannelMode,
) -> Result<StepDistribution> {
    channel.validate()?;
    let v = channel.vocab_size();
    source.check_range(v)?;
    let i = prefix.len();
    let body = source.body(channel.eos);

    let (primary, base_mass) = match mode {
        ChannelMode::Honest => {
            let t = body
                .get(i)
                .map(|&s| channel.mapping[s as usize])
                .unwrap_or(channel.eos);
            (t, channel.fidelity)
        }
        ChannelMode::Triggered => (channel.attractor_token(i), channel.attractor.attractor_conf),
    };
    let mass = if i == 0 {
        channel.first_step_mass.unwrap_or(base_mass)
    } else {
        base_mass
    };
    let rest = 1.0 - mass;

    let mut probs = vec![0.0; v];
    probs[primary as usize] = mass;

    let target = match (channel.confusion, mode) {
        (Confusion::Sticky, _) => {
            let a = channel.attractor_token(i);
            (a != primary).then_some(a)
        }
        (Confusion::Distractor { rate }, ChannelMode::Honest) if i < body.len() => {
            let h = mix64(channel.noise_key ^ mix64(seq_hash(body) ^ (i as u64 + 1)));
            let others: Vec<TokenId> = (0..v as TokenId)
                .filter(|&t| t != channel.eos && t != primary)
                .collect();
            if unit(h) < rate && !others.is_empty() {
                Some(others[(mix64(h) % others.len() as u64) as usize])
            } else {
                None
            }
        }
        _ => None,
    };

    match target {
        Some(t) => probs[t as usize] += rest,
        None => {
            let share = rest / (v - 1) as f64;
            for (t, p) in probs.iter_mut().enumerate() {
                if t != primary as usize {
                    *p += share;
                }
            }
        }
    }
    StepDistribution::from_probs(&probs)
}
