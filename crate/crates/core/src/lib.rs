//! Binary latent variable models of retinal population activity.
//!
//! Spike words `y` over `N` cells are explained by `M` binary latent units
//! (cell assemblies) through a noisy-OR likelihood. The crate covers the
//! model itself, approximate MAP inference, online EM learning, synthetic
//! ground truth, summary statistics and evaluation metrics.

pub mod cli;
pub mod error;
pub mod eval;
pub mod inference;
pub mod io;
pub mod learning;
pub mod model;
pub mod stats;
pub mod synthesis;

pub use error::{BlvError, Result};
pub use inference::{exhaustive_infer, greedy_infer, infer_corpus, InferenceConfig};
pub use learning::{em_step, train, LearnConfig, TrainOutcome};
pub use model::{HEState, LatentVector, ModelParams, Prior, PriorKind, SpikeWord};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    mod synthesis {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli-and-formats.md")]
    mod cli_and_formats {}
}
