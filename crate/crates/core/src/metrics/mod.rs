//! Evaluation: chrF, corpus BLEU, hallucination estimators and paired
//! bootstrap significance testing.

mod bleu;
mod bootstrap;
mod chrf;
mod hallucination;
mod report;

pub use bleu::{bleu, bleu_from_stats, bleu_stats, BleuStats, BLEU_ORDER};
pub use bootstrap::{paired_bootstrap, BootstrapParams, BootstrapResult, Verdict};
pub use chrf::{chrf, chrf_stats, ChrfParams, ChrfStats};
pub use hallucination::{
    hallucination_rate_chrf, tng_flag, tng_rate, top_ngram_count, TngParams, DEFAULT_CHRF_THRESHOLD,
};
pub use report::{Direction, EvalReport, SystemScores};
