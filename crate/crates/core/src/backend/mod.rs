// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model access.
//!
//! [`Backend`] is the single contract every saliency method, metric and
//! steering pipeline talks to. Two implementations ship with the crate:
//! [`ToyBackend`], a small seeded causal transformer that runs in-process,
//! and [`RemoteBackend`], a JSON-over-HTTP client for a model server.
//! [`PlantedTrigger`] and [`CountingBackend`] are wrappers used to build
//! ground-truth test cases and to audit call counts.

mod counting;
mod planted;
mod remote;
mod toy;
pub mod vocab;
pub mod wire;

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    DistributionMatrix, DistributionRow, TokenId, TokenSequence, ROW_SUM_TOLERANCE,
};

pub use counting::{CallCounts, CountingBackend};
pub use planted::PlantedTrigger;
pub use remote::RemoteBackend;
pub use toy::{ToyBackend, ToyConfig};

/// Raw next-token logits, one row of length `V` per position.
pub type LogitMatrix = Vec<Vec<f64>>;

/// Optional features a backend may offer beyond all-position logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub all_position_logits: bool,
    pub attentions: bool,
    pub layer_states: bool,
    pub generate: bool,
}

impl Capabilities {
    pub const ALL: Capabilities = Capabilities {
        all_position_logits: true,
        attentions: true,
        layer_states: true,
        generate: true,
    };
}

/// Static facts about a backend's model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub model_name: String,
    pub vocab_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    /// Maximum sequence length, when known.
    pub context: Option<usize>,
    pub capabilities: Capabilities,
}

/// Sampling parameters for [`Backend::generate`]. A temperature of zero
/// means greedy decoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            seed: 0,
        }
    }
}

impl Sampling {
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            ..Self::default()
        }
    }

    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Attention weights indexed `[layer][head][query][key]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionStack {
    weights: Vec<Vec<Vec<Vec<f64>>>>,
}

impl AttentionStack {
    /// Builds a stack after checking causality and row-stochasticity.
    pub fn new(weights: Vec<Vec<Vec<Vec<f64>>>>) -> Result<Self> {
        let stack = Self { weights };
        stack.check()?;
        Ok(stack)
    }

    fn check(&self) -> Result<()> {
        let n = self.seq_len();
        for (l, layer) in self.weights.iter().enumerate() {
            if layer.is_empty() {
                return Err(Error::Protocol(format!("layer {l} has no heads")));
            }
            for (h, head) in layer.iter().enumerate() {
                if head.len() != n {
                    return Err(Error::Protocol(format!(
                        "layer {l} head {h}: {} query rows, expected {n}",
                        head.len()
                    )));
                }
                for (q, row) in head.iter().enumerate() {
                    if row.len() != n {
                        return Err(Error::Protocol(format!(
                            "layer {l} head {h} query {q}: {} keys, expected {n}",
                            row.len()
                        )));
                    }
                    if row[q + 1..].iter().any(|&w| w != 0.0) {
                        return Err(Error::Protocol(format!(
                            "layer {l} head {h} query {q} attends to future keys"
                        )));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-4 {
                        return Err(Error::Protocol(format!(
                            "layer {l} head {h} query {q} sums to {sum}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> &[Vec<Vec<Vec<f64>>>] {
        &self.weights
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_heads(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn seq_len(&self) -> usize {
        self.weights
            .first()
            .and_then(|l| l.first())
            .map_or(0, Vec::len)
    }
}

/// Logit-lens distributions indexed `[layer][position]`, layers `1..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDistributionStack {
    layers: Vec<DistributionMatrix>,
}

impl LayerDistributionStack {
    pub fn new(layers: Vec<DistributionMatrix>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[DistributionMatrix] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn last(&self) -> &DistributionMatrix {
        self.layers.last().expect("at least one layer")
    }
}

/// Uniform access to a causal language model.
///
/// All methods take `&self`; implementations must give results that do
/// not depend on how concurrent calls interleave.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Final-layer logits for every position of `tokens`.
    fn logits(&self, tokens: &TokenSequence) -> Result<LogitMatrix>;

    /// Softmax of [`Backend::logits`], computed in `f64`.
    fn distributions(&self, tokens: &TokenSequence) -> Result<DistributionMatrix> {
        Ok(DistributionMatrix::from_logits(&self.logits(tokens)?))
    }

    fn attentions(&self, _tokens: &TokenSequence) -> Result<AttentionStack> {
        Err(Error::UnsupportedCapability("attentions"))
    }

    /// LM-head projection of every layer's hidden state.
    fn layer_distributions(&self, _tokens: &TokenSequence) -> Result<LayerDistributionStack> {
        Err(Error::UnsupportedCapability("layer states"))
    }

    /// Prompt followed by exactly `max_new` sampled tokens.
    fn generate(
        &self,
        _tokens: &TokenSequence,
        _max_new: usize,
        _sampling: &Sampling,
    ) -> Result<TokenSequence> {
        Err(Error::UnsupportedCapability("generation"))
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence>;

    /// Id of `piece` when it is a single entry of the vocabulary.
    fn vocab_lookup(&self, piece: &str) -> Result<Option<TokenId>> {
        let seq = match self.tokenize(piece) {
            Ok(seq) => seq,
            Err(Error::InvalidTokens(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let matches = seq.len() == 1 && seq.texts().is_none_or(|t| t[0] == piece);
        Ok(matches.then(|| seq.ids()[0]))
    }

    /// Neutral token used to blank out positions.
    fn space_token(&self) -> Result<TokenId> {
        let seq = self.tokenize(" ")?;
        Ok(seq.ids()[0])
    }

    /// Decoded text of a single id, when the backend can decode locally.
    fn token_text(&self, _id: TokenId) -> Option<String> {
        None
    }

    fn vocab_size(&self) -> usize {
        self.descriptor().vocab_size
    }
}

impl<T: Backend + ?Sized> Backend for &T {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn logits(&self, tokens: &TokenSequence) -> Result<LogitMatrix> {
        (**self).logits(tokens)
    }
    fn distributions(&self, tokens: &TokenSequence) -> Result<DistributionMatrix> {
        (**self).distributions(tokens)
    }
    fn attentions(&self, tokens: &TokenSequence) -> Result<AttentionStack> {
        (**self).attentions(tokens)
    }
    fn layer_distributions(&self, tokens: &TokenSequence) -> Result<LayerDistributionStack> {
        (**self).layer_distributions(tokens)
    }
    fn generate(&self, t: &TokenSequence, n: usize, s: &Sampling) -> Result<TokenSequence> {
        (**self).generate(t, n, s)
    }
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        (**self).tokenize(text)
    }
    fn vocab_lookup(&self, piece: &str) -> Result<Option<TokenId>> {
        (**self).vocab_lookup(piece)
    }
    fn space_token(&self) -> Result<TokenId> {
        (**self).space_token()
    }
    fn token_text(&self, id: TokenId) -> Option<String> {
        (**self).token_text(id)
    }
}

impl<T: Backend + ?Sized> Backend for Box<T> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn logits(&self, tokens: &TokenSequence) -> Result<LogitMatrix> {
        (**self).logits(tokens)
    }
    fn distributions(&self, tokens: &TokenSequence) -> Result<DistributionMatrix> {
        (**self).distributions(tokens)
    }
    fn attentions(&self, tokens: &TokenSequence) -> Result<AttentionStack> {
        (**self).attentions(tokens)
    }
    fn layer_distributions(&self, tokens: &TokenSequence) -> Result<LayerDistributionStack> {
        (**self).layer_distributions(tokens)
    }
    fn generate(&self, t: &TokenSequence, n: usize, s: &Sampling) -> Result<TokenSequence> {
        (**self).generate(t, n, s)
    }
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        (**self).tokenize(text)
    }
    fn vocab_lookup(&self, piece: &str) -> Result<Option<TokenId>> {
        (**self).vocab_lookup(piece)
    }
    fn space_token(&self) -> Result<TokenId> {
        (**self).space_token()
    }
    fn token_text(&self, id: TokenId) -> Option<String> {
        (**self).token_text(id)
    }
}

impl<T: Backend + ?Sized> Backend for Arc<T> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn logits(&self, tokens: &TokenSequence) -> Result<LogitMatrix> {
        (**self).logits(tokens)
    }
    fn distributions(&self, tokens: &TokenSequence) -> Result<DistributionMatrix> {
        (**self).distributions(tokens)
    }
    fn attentions(&self, tokens: &TokenSequence) -> Result<AttentionStack> {
        (**self).attentions(tokens)
    }
    fn layer_distributions(&self, tokens: &TokenSequence) -> Result<LayerDistributionStack> {
        (**self).layer_distributions(tokens)
    }
    fn generate(&self, t: &TokenSequence, n: usize, s: &Sampling) -> Result<TokenSequence> {
        (**self).generate(t, n, s)
    }
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        (**self).tokenize(text)
    }
    fn vocab_lookup(&self, piece: &str) -> Result<Option<TokenId>> {
        (**self).vocab_lookup(piece)
    }
    fn space_token(&self) -> Result<TokenId> {
        (**self).space_token()
    }
    fn token_text(&self, id: TokenId) -> Option<String> {
        (**self).token_text(id)
    }
}

/// Checks a matrix of probability rows against the distribution invariants.
pub fn check_rows(rows: &DistributionMatrix) -> Result<()> {
    for (i, row) in rows.rows().iter().enumerate() {
        let sum: f64 = row.probs().iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE
            || row.probs().iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Protocol(format!(
                "row {i} is not a distribution (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// Autoregressive sampling loop shared by in-process backends.
///
/// `next_logits` returns the final-position logits for a sequence. The RNG
/// is seeded from `sampling.seed`, so identical inputs give identical
/// continuations.
pub(crate) fn sample_continuation<F>(
    tokens: &TokenSequence,
    max_new: usize,
    sampling: &Sampling,
    mut next_logits: F,
) -> Result<Vec<TokenId>>
where
    F: FnMut(&TokenSequence) -> Result<Vec<f64>>,
{
    if max_new == 0 {
        return Err(Error::Config("max_new must be at least 1".into()));
    }
    let temperature_ok = sampling.temperature >= 0.0;
    let top_p_ok = sampling.top_p > 0.0 && sampling.top_p <= 1.0;
    if !temperature_ok || !top_p_ok {
        return Err(Error::Config(format!(
            "invalid sampling parameters: temperature {} top_p {}",
            sampling.temperature, sampling.top_p
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut seq = TokenSequence::new(tokens.ids().to_vec())?;
    let mut new = Vec::with_capacity(max_new);
    for _ in 0..max_new {
        let logits = next_logits(&seq)?;
        let next = if sampling.temperature == 0.0 {
            DistributionRow::softmax(&logits).argmax().0
        } else {
            let scaled: Vec<f64> = logits.iter().map(|l| l / sampling.temperature).collect();
            let row = DistributionRow::softmax(&scaled);
            let nucleus = nucleus(row.probs(), sampling.top_p);
            let weights: Vec<f64> = nucleus.iter().map(|&i| row.probs()[i]).collect();
            let dist = WeightedIndex::new(&weights)
                .map_err(|e| Error::Config(format!("degenerate sampling distribution: {e}")))?;
            nucleus[dist.sample(&mut rng)] as TokenId
        };
        new.push(next);
        let mut ids = seq.ids().to_vec();
        ids.push(next);
        seq = TokenSequence::new(ids)?;
    }
    Ok(new)
}

/// Smallest prefix of tokens (by descending probability) whose mass
/// reaches `top_p`.
fn nucleus(probs: &[f64], top_p: f64) -> Vec<usize> {
    let order = crate::types::rank_descending(probs);
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push(i);
        mass += probs[i];
        if mass >= top_p {
            break;
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nucleus_keeps_smallest_covering_prefix() {
        assert_eq!(nucleus(&[0.1, 0.6, 0.3], 0.5), vec![1]);
        assert_eq!(nucleus(&[0.1, 0.6, 0.3], 0.85), vec![1, 2]);
        assert_eq!(nucleus(&[0.1, 0.6, 0.3], 1.0).len(), 3);
    }

    #[test]
    fn attention_stack_rejects_future_keys() {
        let bad = vec![vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]]];
        assert!(AttentionStack::new(bad).is_err());
        let good = vec![vec![vec![vec![1.0, 0.0], vec![0.5, 0.5]]]];
        let stack = AttentionStack::new(good).unwrap();
        assert_eq!(
            (stack.num_layers(), stack.num_heads(), stack.seq_len()),
            (1, 1, 2)
        );
    }
}
