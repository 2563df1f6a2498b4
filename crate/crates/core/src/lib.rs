// SPDX-License-Identifier: MIT OR Apache-2.0

//! Contrastive input saliency for causal language models.
//!
//! Saliency comes from how the next-token distribution at each position
//! shifts between a target and an alternative token as the prompt grows
//! (forward), shrinks from the front (backward), or both (bidirectional).
//! Around that engine sit baseline methods, a perturbation-based
//! faithfulness harness, prompt steering pipelines and a logit-lens
//! convergence analysis, all written against the [`backend::Backend`]
//! trait.

pub mod backend;
pub mod baselines;
pub mod engine;
pub mod error;
pub mod eval;
pub mod lens;
pub mod report;
pub mod steering;
pub mod types;

pub use backend::{Backend, BackendDescriptor, RemoteBackend, Sampling, ToyBackend, ToyConfig};
pub use error::{Error, Result};
pub use types::{
    contrastive_confidence, ContrastiveSpec, DistributionMatrix, DistributionRow, SaliencyResult,
    TokenId, TokenSequence, Variant,
};
