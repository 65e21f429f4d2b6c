//! Multi-pivot ensemble decoding for machine translation.
//!
//! A sentence is first translated into several pivot languages; the target is
//! then decoded once while conditioning on all pivot translations, merging
//! their next-token predictions at every step (see [`combiners`]). The crate
//! also carries the evaluation stack used to compare strategies ([`metrics`]),
//! a synthetic cipher-language harness for desk-scale experiments
//! ([`synth`]), corpus orchestration ([`pipeline`]) and an HTTP client for
//! remote next-token servers ([`modelwire`]).

pub mod combiners;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod logspace;
pub mod metrics;
pub mod modelwire;
pub mod pipeline;
pub mod synth;
pub mod types;

pub use combiners::{combine, combine_direct, combine_logavg, combine_maxens, combine_multiavg};
pub use decoder::{
    beam_search, score_fixed_sequence, DecodeOutput, DecodeTrace, Scorer, StepQuery,
};
pub use error::{Error, Result};
pub use types::{
    recompute_score, CombinedStep, Combiner, DecodeParams, Hypothesis, LengthNormalization,
    SourceEntry, SourceSet, StepDistribution, TokenId, TokenSeq, Vocab,
};
