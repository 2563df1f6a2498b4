// SPDX-License-Identifier: MIT OR Apache-2.0

use std::sync::atomic::{AtomicUsize, Ordering};

use super::{
    AttentionStack, Backend, BackendDescriptor, LayerDistributionStack, LogitMatrix, Sampling,
};
use crate::error::Result;
use crate::types::{DistributionMatrix, TokenId, TokenSequence};

/// Snapshot of how many model evaluations went through a [`CountingBackend`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub logits: usize,
    pub distributions: usize,
    pub attentions: usize,
    pub layer_distributions: usize,
    pub generate: usize,
    pub tokenize: usize,
}

impl CallCounts {
    /// Forward passes of any kind.
    pub fn forward(&self) -> usize {
        self.logits + self.distributions + self.attentions + self.layer_distributions
    }
}

/// Wrapper that counts calls made to the backend it wraps.
#[derive(Debug, Default)]
pub struct CountingBackend<B> {
    inner: B,
    logits: AtomicUsize,
    distributions: AtomicUsize,
    attentions: AtomicUsize,
    layer_distributions: AtomicUsize,
    generate: AtomicUsize,
    tokenize: AtomicUsize,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            logits: AtomicUsize::new(0),
            distributions: AtomicUsize::new(0),
            attentions: AtomicUsize::new(0),
            layer_distributions: AtomicUsize::new(0),
            generate: AtomicUsize::new(0),
            tokenize: AtomicUsize::new(0),
        }
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            logits: self.logits.load(Ordering::SeqCst),
            distributions: self.distributions.load(Ordering::SeqCst),
            attentions: self.attentions.load(Ordering::SeqCst),
            layer_distributions: self.layer_distributions.load(Ordering::SeqCst),
            generate: self.generate.load(Ordering::SeqCst),
            tokenize: self.tokenize.load(Ordering::SeqCst),
        }
    }

    pub fn reset(&self) {
        for c in [
            &self.logits,
            &self.distributions,
            &self.attentions,
            &self.layer_distributions,
            &self.generate,
            &self.tokenize,
        ] {
            c.store(0, Ordering::SeqCst);
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

fn bump(c: &AtomicUsize) {
    c.fetch_add(1, Ordering::SeqCst);
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn logits(&self, tokens: &TokenSequence) -> Result<LogitMatrix> {
        bump(&self.logits);
        self.inner.logits(tokens)
    }

    fn distributions(&self, tokens: &TokenSequence) -> Result<DistributionMatrix> {
        bump(&self.distributions);
        self.inner.distributions(tokens)
    }

    fn attentions(&self, tokens: &TokenSequence) -> Result<AttentionStack> {
        bump(&self.attentions);
        self.inner.attentions(tokens)
    }

    fn layer_distributions(&self, tokens: &TokenSequence) -> Result<LayerDistributionStack> {
        bump(&self.layer_distributions);
        self.inner.layer_distributions(tokens)
    }

    fn generate(&self, t: &TokenSequence, n: usize, s: &Sampling) -> Result<TokenSequence> {
        bump(&self.generate);
        self.inner.generate(t, n, s)
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        bump(&self.tokenize);
        self.inner.tokenize(text)
    }

    fn vocab_lookup(&self, piece: &str) -> Result<Option<TokenId>> {
        self.inner.vocab_lookup(piece)
    }

    fn space_token(&self) -> Result<TokenId> {
        self.inner.space_token()
    }

    fn token_text(&self, id: TokenId) -> Option<String> {
        self.inner.token_text(id)
    }
}
