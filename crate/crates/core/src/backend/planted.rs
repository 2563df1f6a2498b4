// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ground-truth construction for saliency tests.
//!
//! [`PlantedTrigger`] wraps a backend and, at every position whose prefix
//! contains the trigger token, adds `strength` to the logits of the boosted
//! tokens and subtracts it from the suppressed ones. The trigger is then the
//! only input that moves the target/alternative margin by more than the
//! wrapped model's own noise, so a faithful saliency method must rank it
//! first.

use super::{
    sample_continuation, AttentionStack, Backend, BackendDescriptor, LayerDistributionStack,
    LogitMatrix, Sampling,
};
use crate::error::{Error, Result};
use crate::types::{DistributionMatrix, DistributionRow, TokenId, TokenSequence};

#[derive(Debug, Clone)]
pub struct PlantedTrigger<B> {
    inner: B,
    trigger: TokenId,
    boosted: Vec<TokenId>,
    suppressed: Vec<TokenId>,
    strength: f64,
}

impl<B: Backend> PlantedTrigger<B> {
    pub fn new(
        inner: B,
        trigger: TokenId,
        boosted: impl IntoIterator<Item = TokenId>,
        suppressed: impl IntoIterator<Item = TokenId>,
        strength: f64,
    ) -> Result<Self> {
        let v = inner.vocab_size();
        let boosted: Vec<_> = boosted.into_iter().collect();
        let suppressed: Vec<_> = suppressed.into_iter().collect();
        if let Some(id) = std::iter::once(&trigger)
            .chain(&boosted)
            .chain(&suppressed)
            .find(|&&id| id as usize >= v)
        {
            return Err(Error::Config(format!(
                "token {id} outside vocabulary of {v}"
            )));
        }
        if trigger == inner.space_token()? {
            return Err(Error::Config("the space token cannot be a trigger".into()));
        }
        Ok(Self {
            inner,
            trigger,
            boosted,
            suppressed,
            strength,
        })
    }

    pub fn trigger(&self) -> TokenId {
        self.trigger
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// Per-position flag: does the prefix ending here contain the trigger?
    fn armed(&self, tokens: &TokenSequence) -> Vec<bool> {
        let mut seen = false;
        tokens
            .ids()
            .iter()
            .map(|&id| {
                seen |= id == self.trigger;
                seen
            })
            .collect()
    }

    fn bias(&self, logits: &mut [f64]) {
        for &b in &self.boosted {
            logits[b as usize] += self.strength;
        }
        for &s in &self.suppressed {
            logits[s as usize] -= self.strength;
        }
    }

    fn bias_probs(&self, row: &DistributionRow) -> DistributionRow {
        let mut logits: Vec<f64> = row.probs().iter().map(|p| p.ln()).collect();
        self.bias(&mut logits);
        DistributionRow::softmax(&logits)
    }
}

impl<B: Backend> Backend for PlantedTrigger<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn logits(&self, tokens: &TokenSequence) -> Result<LogitMatrix> {
        let mut logits = self.inner.logits(tokens)?;
        for (row, armed) in logits.iter_mut().zip(self.armed(tokens)) {
            if armed {
                self.bias(row);
            }
        }
        Ok(logits)
    }

    fn attentions(&self, tokens: &TokenSequence) -> Result<AttentionStack> {
        self.inner.attentions(tokens)
    }

    fn layer_distributions(&self, tokens: &TokenSequence) -> Result<LayerDistributionStack> {
        let armed = self.armed(tokens);
        let stack = self.inner.layer_distributions(tokens)?;
        let layers = stack
            .layers()
            .iter()
            .map(|layer| {
                DistributionMatrix::new(
                    layer
                        .rows()
                        .iter()
                        .zip(&armed)
                        .map(|(row, &a)| if a { self.bias_probs(row) } else { row.clone() })
                        .collect(),
                )
            })
            .collect();
        Ok(LayerDistributionStack::new(layers))
    }

    fn generate(
        &self,
        tokens: &TokenSequence,
        max_new: usize,
        sampling: &Sampling,
    ) -> Result<TokenSequence> {
        if !self.descriptor().capabilities.generate {
            return Err(Error::UnsupportedCapability("generation"));
        }
        let new = sample_continuation(tokens, max_new, sampling, |seq| {
            Ok(self.logits(seq)?.pop().unwrap_or_default())
        })?;
        TokenSequence::new(tokens.ids().iter().copied().chain(new).collect())
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ToyBackend, ToyConfig};

    #[test]
    fn bias_applies_from_trigger_onwards() {
        let toy = ToyBackend::new(ToyConfig::small(3)).unwrap();
        let planted = PlantedTrigger::new(toy.clone(), 9, [4], [5], 3.0).unwrap();
        let w = TokenSequence::new(vec![1, 2, 9, 3]).unwrap();
        let base = toy.logits(&w).unwrap();
        let rigged = planted.logits(&w).unwrap();
        for i in 0..2 {
            assert_eq!(base[i], rigged[i]);
        }
        for i in 2..4 {
            assert!((rigged[i][4] - base[i][4] - 3.0).abs() < 1e-12);
            assert!((rigged[i][5] - base[i][5] + 3.0).abs() < 1e-12);
        }
        let stack = planted.layer_distributions(&w).unwrap();
        let dist = planted.distributions(&w).unwrap();
        for (a, b) in stack.last().rows().iter().zip(dist.rows()) {
            for (x, y) in a.probs().iter().zip(b.probs()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn space_cannot_be_trigger() {
        let toy = ToyBackend::new(ToyConfig::small(3)).unwrap();
        assert!(PlantedTrigger::new(toy, 0, [4], [5], 3.0).is_err());
    }
}
