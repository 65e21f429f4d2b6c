//! Synthetic cipher-language translation tasks.
//!
//! Every language is a permutation of one shared content vocabulary, so a
//! perfect translation is a token-by-token re-encipherment. Channels emit a
//! controllable amount of probability on the correct token and spread the rest
//! according to a confusion rule. A per-sentence trigger switches some
//! channels into a mode where a fixed attractor sequence is moderately
//! probable under every path; this is how the harness models hallucinations
//! that persist across pivots.
//!
//! Everything is seeded. Per-sentence randomness comes from a stream derived
//! from `(seed, sentence id)`, never from shared generator state.

mod channel;
mod cipher;
mod experiment;
mod task;

pub use channel::{channel_step, AttractorConfig, ChannelMode, ChannelModel, Confusion};
pub use cipher::CipherLanguage;
pub use experiment::{
    experiment_eval_options, experiment_run_config, experiment_strategies, run_experiment,
    ConfidentPivotCheck, DumpOutput, ExperimentReport, ProxyCalibration, SentenceDump,
};
pub use task::{
    build_task, ChannelSettings, ExperimentConfig, FinalStageSettings, SyntheticBackend,
    SyntheticScorer, SyntheticTask, TaskSentence, EOS_TOKEN,
};

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed of the random stream owned by one sentence.
pub fn sentence_seed(seed: u64, sentence_id: &str) -> u64 {
    mix64(seed ^ fnv1a(sentence_id.as_bytes()))
}

/// Uniform draw in `[0, 1)` from a hash.
pub(crate) fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}
