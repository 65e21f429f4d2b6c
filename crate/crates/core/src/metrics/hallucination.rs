use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::chrf::{chrf, ChrfParams};
use crate::error::{Error, Result};

/// Sentences scoring below this chrF are counted as hallucinations.
pub const DEFAULT_CHRF_THRESHOLD: f64 = 20.0;

/// Top n-gram detector settings: flag when the hypothesis repeats its most
/// frequent n-gram at least `t` more times than the source does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TngParams {
    pub n: usize,
    pub t: usize,
}

impl Default for TngParams {
    fn default() -> Self {
        TngParams { n: 4, t: 2 }
    }
}

/// Percentage of pairs whose chrF falls strictly below `threshold`.
pub fn hallucination_rate_chrf<H, R>(
    pairs: &[(H, R)],
    threshold: f64,
    params: &ChrfParams,
) -> Result<f64>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    if pairs.is_empty() {
        return Err(Error::invalid("hallucination rate of an empty set"));
    }
    let mut flagged = 0usize;
    for (h, r) in pairs {
        if chrf(h.as_ref(), r.as_ref(), params)? < threshold {
            flagged += 1;
        }
    }
    Ok(100.0 * flagged as f64 / pairs.len() as f64)
}

/// Count of the most frequent n-gram; 0 when the sequence is shorter than `n`.
pub fn top_ngram_count<T: Eq + Hash>(toks: &[T], n: usize) -> usize {
    if n == 0 || toks.len() < n {
        return 0;
    }
    let mut m: HashMap<&[T], usize> = HashMap::new();
    for w in toks.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m.into_values().max().unwrap_or(0)
}

pub fn tng_flag<T: Eq + Hash>(src: &[T], hyp: &[T], params: &TngParams) -> bool {
    let ch = top_ngram_count(hyp, params.n);
    let cs = top_ngram_count(src, params.n);
    ch >= cs + params.t
}

/// Percentage of `(source, hypothesis)` pairs flagged by [`tng_flag`].
pub fn tng_rate<T: Eq + Hash>(pairs: &[(Vec<T>, Vec<T>)], params: &TngParams) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("TNG rate of an empty set"));
    }
    let flagged = pairs.iter().filter(|(s, h)| tng_flag(s, h, params)).count();
    Ok(100.0 * flagged as f64 / pairs.len() as f64)
}
