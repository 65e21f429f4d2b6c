use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapParams {
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        BootstrapParams {
            resamples: 1000,
            alpha: 0.05,
            seed: 12345,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub score_a: f64,
    pub score_b: f64,
    /// The system with the higher full-sample score; `Tie` when equal.
    pub apparent_winner: Verdict,
    /// Fraction of resamples in which the apparent loser scored at least as
    /// high as the apparent winner. 1.0 for a tie.
    pub p_value: f64,
    pub significant: bool,
    /// `apparent_winner` when significant, otherwise `Tie`.
    pub verdict: Verdict,
}

/// Paired bootstrap resampling.
///
/// `metric` scores a system on a subset of the corpus given as aligned slices
/// of outputs and references. Both systems are scored on the same resampled
/// index lists, drawn with replacement from a ChaCha8 stream seeded with
/// `params.seed`.
pub fn paired_bootstrap<H, R, F>(
    metric: F,
    sys_a: &[H],
    sys_b: &[H],
    refs: &[R],
    params: &BootstrapParams,
) -> Result<BootstrapResult>
where
    F: Fn(&[&H], &[&R]) -> Result<f64>,
{
    let n = refs.len();
    if sys_a.len() != n || sys_b.len() != n {
        return Err(Error::invalid(format!(
            "misaligned inputs: {} / {} outputs for {} references",
            sys_a.len(),
            sys_b.len(),
            n
        )));
    }
    if n == 0 {
        return Err(Error::invalid("bootstrap over an empty corpus"));
    }
    if params.resamples < 100 {
        return Err(Error::invalid("at least 100 resamples are required"));
    }
    if !(params.alpha > 0.0 && params.alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }

    let all_a: Vec<&H> = sys_a.iter().collect();
    let all_b: Vec<&H> = sys_b.iter().collect();
    let all_r: Vec<&R> = refs.iter().collect();
    let score_a = metric(&all_a, &all_r)?;
    let score_b = metric(&all_b, &all_r)?;

    let apparent = if score_a > score_b {
        Verdict::A
    } else if score_b > score_a {
        Verdict::B
    } else {
        Verdict::Tie
    };
    if apparent == Verdict::Tie {
        return Ok(BootstrapResult {
            score_a,
            score_b,
            apparent_winner: Verdict::Tie,
            p_value: 1.0,
            significant: false,
            verdict: Verdict::Tie,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut idx = vec![0usize; n];
    let mut sa = Vec::with_capacity(n);
    let mut sb = Vec::with_capacity(n);
    let mut sr = Vec::with_capacity(n);
    let mut upsets = 0usize;
    for _ in 0..params.resamples {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..n);
        }
        sa.clear();
        sb.clear();
        sr.clear();
        for &i in &idx {
            sa.push(&sys_a[i]);
            sb.push(&sys_b[i]);
            sr.push(&refs[i]);
        }
        let a = metric(&sa, &sr)?;
        let b = metric(&sb, &sr)?;
        let upset = match apparent {
            Verdict::A => b >= a,
            _ => a >= b,
        };
        if upset {
            upsets += 1;
        }
    }
    let p_value = upsets as f64 / params.resamples as f64;
    let significant = p_value < params.alpha;
    Ok(BootstrapResult {
        score_a,
        score_b,
        apparent_winner: apparent,
        p_value,
        significant,
        verdict: if significant { apparent } else { Verdict::Tie },
    })
}
