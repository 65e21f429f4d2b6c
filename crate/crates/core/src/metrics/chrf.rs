use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Character n-gram F-score settings. Defaults give chrF3 with orders 1..=6.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChrfParams {
    pub char_order: usize,
    pub beta: f64,
    pub strip_whitespace: bool,
}

impl Default for ChrfParams {
    fn default() -> Self {
        ChrfParams {
            char_order: 6,
            beta: 3.0,
            strip_whitespace: true,
        }
    }
}

impl ChrfParams {
    pub fn validate(&self) -> Result<()> {
        if self.char_order == 0 {
            return Err(Error::invalid("char_order must be at least 1"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        Ok(())
    }
}

/// Clipped match counts for one n-gram order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChrfStats {
    pub hyp_total: usize,
    pub ref_total: usize,
    pub matches: usize,
}

fn chars(text: &str, strip: bool) -> Vec<char> {
    if strip {
        text.chars().filter(|c| !c.is_whitespace()).collect()
    } else {
        text.chars().collect()
    }
}

fn counts(cs: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut m = HashMap::new();
    if cs.len() >= n {
        for w in cs.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Per-order statistics, index `n - 1` for order `n`.
pub fn chrf_stats(hyp: &str, reference: &str, params: &ChrfParams) -> Vec<ChrfStats> {
    let h = chars(hyp, params.strip_whitespace);
    let r = chars(reference, params.strip_whitespace);
    (1..=params.char_order)
        .map(|n| {
            let hc = counts(&h, n);
            let rc = counts(&r, n);
            let matches = hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum();
            ChrfStats {
                hyp_total: h.len().saturating_sub(n - 1),
                ref_total: r.len().saturating_sub(n - 1),
                matches,
            }
        })
        .collect()
}

fn f_beta(s: &ChrfStats, beta: f64) -> f64 {
    let p = if s.hyp_total > 0 {
        s.matches as f64 / s.hyp_total as f64
    } else {
        0.0
    };
    let r = if s.ref_total > 0 {
        s.matches as f64 / s.ref_total as f64
    } else {
        0.0
    };
    let b2 = beta * beta;
    let denom = b2 * p + r;
    if denom > 0.0 {
        (1.0 + b2) * p * r / denom
    } else {
        0.0
    }
}

/// Sentence chrF in `[0, 100]`: the mean over orders of the per-order F-beta.
/// Orders for which neither side has any n-gram are left out of the mean.
pub fn chrf(hyp: &str, reference: &str, params: &ChrfParams) -> Result<f64> {
    params.validate()?;
    if chars(reference, params.strip_whitespace).is_empty() {
        return Err(Error::invalid("chrF needs a non-empty reference"));
    }
    let stats = chrf_stats(hyp, reference, params);
    let mut sum = 0.0;
    let mut used = 0usize;
    for s in &stats {
        if s.hyp_total == 0 && s.ref_total == 0 {
            continue;
        }
        sum += f_beta(s, params.beta);
        used += 1;
    }
    Ok(100.0 * sum / used as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Counts every n-gram by rescanning both strings; no hashing.
    fn oracle(hyp: &str, reference: &str, order: usize, beta: f64) -> f64 {
        let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
        let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
        let grams = |s: &[char], n: usize| -> Vec<String> {
            let mut out = Vec::new();
            let mut i = 0;
            while i + n <= s.len() {
                out.push(s[i..i + n].iter().collect());
                i += 1;
            }
            out
        };
        let mut total = 0.0;
        let mut used = 0;
        for n in 1..=order {
            let hg = grams(&h, n);
            let rg = grams(&r, n);
            if hg.is_empty() && rg.is_empty() {
                continue;
            }
            let mut seen: Vec<&String> = Vec::new();
            let mut m = 0usize;
            for g in &hg {
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                let ch = hg.iter().filter(|x| *x == g).count();
                let cr = rg.iter().filter(|x| *x == g).count();
                m += ch.min(cr);
            }
            let p = if hg.is_empty() {
                0.0
            } else {
                m as f64 / hg.len() as f64
            };
            let rc = if rg.is_empty() {
                0.0
            } else {
                m as f64 / rg.len() as f64
            };
            let b2 = beta * beta;
            let f = if b2 * p + rc > 0.0 {
                (1.0 + b2) * p * rc / (b2 * p + rc)
            } else {
                0.0
            };
            total += f;
            used += 1;
        }
        100.0 * total / used as f64
    }

    fn random_text(rng: &mut ChaCha8Rng) -> String {
        let alphabet: Vec<char> = "abcde fgh ñé".chars().collect();
        let len = rng.random_range(1..30);
        let s: String = (0..len)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())])
            .collect();
        if s.trim().is_empty() {
            "a".into()
        } else {
            s
        }
    }

    #[test]
    fn perfect_and_disjoint() {
        let p = ChrfParams::default();
        assert_eq!(chrf("the cat sat", "the cat sat", &p).unwrap(), 100.0);
        assert_eq!(chrf("ab", "ab", &p).unwrap(), 100.0);
        assert_eq!(chrf("xyz qq", "abc de", &p).unwrap(), 0.0);
        assert_eq!(chrf("", "abc", &p).unwrap(), 0.0);
        assert!(chrf("abc", "", &p).is_err());
        assert!(chrf("abc", "   ", &p).is_err());
    }

    #[test]
    fn whitespace_is_ignored() {
        let p = ChrfParams::default();
        assert_eq!(chrf("a b c", "abc", &p).unwrap(), 100.0);
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = ChrfParams::default();
        for _ in 0..100 {
            let h = random_text(&mut rng);
            let r = random_text(&mut rng);
            let got = chrf(&h, &r, &p).unwrap();
            let want = oracle(&h, &r, 6, 3.0);
            assert!((got - want).abs() < 1e-9, "{h:?} vs {r:?}: {got} != {want}");
            assert!((0.0..=100.0).contains(&got));
        }
    }

    #[test]
    fn large_beta_tends_to_recall() {
        // hyp is a strict prefix of ref: precision 1, recall < 1 per order.
        let h = "abcab";
        let r = "abcabzzqw";
        let big = ChrfParams {
            beta: 1e6,
            ..Default::default()
        };
        let got = chrf(h, r, &big).unwrap();
        let recall_only: f64 = chrf_stats(h, r, &big)
            .iter()
            .filter(|s| s.hyp_total + s.ref_total > 0)
            .map(|s| s.matches as f64 / s.ref_total as f64)
            .sum::<f64>()
            / 6.0;
        assert!((got - 100.0 * recall_only).abs() < 1e-6);
        assert!((got - oracle(h, r, 6, 1e6)).abs() < 1e-9);
    }
}
