use std::collections::HashMap;
use std::hash::Hash;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLEU_ORDER: usize = 4;

/// Sufficient statistics for corpus BLEU. Summing per-sentence stats and
/// scoring the sum gives the corpus score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; BLEU_ORDER],
    pub totals: [u64; BLEU_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..BLEU_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

impl Add for BleuStats {
    type Output = BleuStats;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

fn ngram_counts<T: Eq + Hash>(toks: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub fn bleu_stats<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> BleuStats {
    let mut s = BleuStats {
        hyp_len: hyp.len() as u64,
        ref_len: reference.len() as u64,
        ..Default::default()
    };
    for n in 1..=BLEU_ORDER {
        let hc = ngram_counts(hyp, n);
        let rc = ngram_counts(reference, n);
        s.matches[n - 1] = hc
            .iter()
            .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
            .sum();
        s.totals[n - 1] = (hyp.len() + 1).saturating_sub(n) as u64;
    }
    s
}

/// BLEU-4 in `[0, 100]` from accumulated statistics.
///
/// Zero match counts use exponential smoothing: the k-th order with no matches
/// gets precision `1 / (2^k * total)`. An order with no hypothesis n-grams at
/// all (or an empty hypothesis) yields 0.
pub fn bleu_from_stats(s: &BleuStats) -> f64 {
    if s.hyp_len == 0 {
        return 0.0;
    }
    let mut smooth = 1.0;
    let mut log_sum = 0.0;
    for n in 0..BLEU_ORDER {
        if s.totals[n] == 0 {
            return 0.0;
        }
        let p = if s.matches[n] == 0 {
            smooth *= 2.0;
            1.0 / (smooth * s.totals[n] as f64)
        } else {
            s.matches[n] as f64 / s.totals[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if s.hyp_len < s.ref_len {
        (1.0 - s.ref_len as f64 / s.hyp_len as f64).exp()
    } else {
        1.0
    };
    100.0 * bp * (log_sum / BLEU_ORDER as f64).exp()
}

/// Corpus BLEU over caller-tokenized sentences.
pub fn bleu<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::invalid("BLEU of an empty corpus"));
    }
    if let Some(i) = refs.iter().position(|r| r.is_empty()) {
        return Err(Error::invalid(format!("reference {i} is empty")));
    }
    let total = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| bleu_stats(h, r))
        .fold(BleuStats::default(), Add::add);
    Ok(bleu_from_stats(&total))
}
