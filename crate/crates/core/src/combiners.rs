//! Per-step score combination across conditioning sources.
//!
//! Every combiner takes one next-token distribution per source (all sharing the
//! same target prefix) and produces a per-token log-score vector:
//!
//! | combiner   | entry for token `y`                         | normalized |
//! |------------|---------------------------------------------|------------|
//! | `direct`   | `log p(y)` of the single source             | yes        |
//! | `multiavg` | `log( (1/K) * sum_k p_k(y) )`               | yes        |
//! | `maxens`   | `max_k log p_k(y)`                          | no         |
//! | `logavg`   | `(1/K) * sum_k log p_k(y)`                  | no         |
//!
//! For any inputs the per-token ordering `maxens >= multiavg >= logavg` holds.
//! The implementations below are written so that it also holds exactly in
//! floating point: each works on offsets `d_k = log p_k(y) - m` from the
//! per-token maximum `m`, which are all `<= 0`.

use crate::error::{Error, Result};
use crate::logspace::log_sum_exp;
use crate::types::{CombinedStep, Combiner, StepDistribution};

/// A combined step plus, for `maxens`, the winning source per token.
#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub step: CombinedStep,
    pub provenance: Option<Vec<usize>>,
}

fn check_shapes(dists: &[StepDistribution]) -> Result<usize> {
    let first = dists
        .first()
        .ok_or_else(|| Error::invalid("no distributions to combine"))?;
    let v = first.len();
    if let Some((i, d)) = dists.iter().enumerate().find(|(_, d)| d.len() != v) {
        return Err(Error::invalid(format!(
            "distribution {i} has length {} but distribution 0 has length {v}",
            d.len()
        )));
    }
    Ok(v)
}

fn column_max(dists: &[StepDistribution], y: usize) -> f64 {
    dists
        .iter()
        .map(|d| d.logprobs()[y])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Offsets from the column maximum in ascending order, so that sums over
/// sources do not depend on source order.
fn sorted_offsets(dists: &[StepDistribution], y: usize, m: f64) -> impl Iterator<Item = f64> {
    let mut d: Vec<f64> = dists.iter().map(|d| d.logprobs()[y] - m).collect();
    d.sort_by(f64::total_cmp);
    d.into_iter()
}

pub fn combine_direct(dists: &[StepDistribution]) -> Result<CombinedStep> {
    if dists.len() != 1 {
        return Err(Error::invalid(format!(
            "direct scoring takes exactly one source, got {}",
            dists.len()
        )));
    }
    Ok(dists[0].clone().into())
}

/// Probability-space average, evaluated as
/// `m + ln_1p( sum_k expm1(d_k) / K )`.
pub fn combine_multiavg(dists: &[StepDistribution]) -> Result<CombinedStep> {
    let v = check_shapes(dists)?;
    let k = dists.len() as f64;
    let logscores = (0..v)
        .map(|y| {
            let m = column_max(dists, y);
            if m == f64::NEG_INFINITY {
                return m;
            }
            let s: f64 = sorted_offsets(dists, y, m).map(f64::exp_m1).sum();
            // s <= 0 term by term, so the shift is <= 0 and the result <= m.
            m + (s / k).ln_1p().min(0.0)
        })
        .collect();
    Ok(CombinedStep {
        logscores,
        normalized: true,
    })
}

/// Element-wise maximum with the index of the winning source. Exact ties go to
/// the lowest index.
pub fn combine_maxens(dists: &[StepDistribution]) -> Result<(CombinedStep, Vec<usize>)> {
    let v = check_shapes(dists)?;
    let mut logscores = Vec::with_capacity(v);
    let mut provenance = Vec::with_capacity(v);
    for y in 0..v {
        let mut best = 0;
        let mut best_val = dists[0].logprobs()[y];
        for (k, d) in dists.iter().enumerate().skip(1) {
            if d.logprobs()[y] > best_val {
                best = k;
                best_val = d.logprobs()[y];
            }
        }
        logscores.push(best_val);
        provenance.push(best);
    }
    Ok((
        CombinedStep {
            logscores,
            normalized: false,
        },
        provenance,
    ))
}

/// Mean of log-probabilities (geometric mean of probabilities).
pub fn combine_logavg(dists: &[StepDistribution]) -> Result<CombinedStep> {
    let v = check_shapes(dists)?;
    let k = dists.len() as f64;
    let logscores = (0..v)
        .map(|y| {
            let m = column_max(dists, y);
            if m == f64::NEG_INFINITY {
                return m;
            }
            let s: f64 = sorted_offsets(dists, y, m).sum();
            m + s / k
        })
        .collect();
    Ok(CombinedStep {
        logscores,
        normalized: false,
    })
}

/// Shifts a combined step so that it sums to one in probability space.
pub fn renormalize(step: &CombinedStep) -> CombinedStep {
    let lse = log_sum_exp(&step.logscores);
    if !lse.is_finite() {
        return step.clone();
    }
    CombinedStep {
        logscores: step.logscores.iter().map(|x| x - lse).collect(),
        normalized: true,
    }
}

/// Dispatches on `combiner`. `renormalize_maxens` only affects `maxens`.
pub fn combine(
    combiner: Combiner,
    dists: &[StepDistribution],
    renormalize_maxens: bool,
) -> Result<Combined> {
    Ok(match combiner {
        Combiner::Direct => Combined {
            step: combine_direct(dists)?,
            provenance: None,
        },
        Combiner::MultiAvg => Combined {
            step: combine_multiavg(dists)?,
            provenance: None,
        },
        Combiner::MaxEns => {
            let (step, prov) = combine_maxens(dists)?;
            let step = if renormalize_maxens {
                renormalize(&step)
            } else {
                step
            };
            Combined {
                step,
                provenance: Some(prov),
            }
        }
        Combiner::LogAvg => Combined {
            step: combine_logavg(dists)?,
            provenance: None,
        },
    })
}
