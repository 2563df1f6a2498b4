// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small seeded decoder-only transformer.
//!
//! GPT-2 shaped: learned positional embeddings, pre-norm blocks with causal
//! multi-head attention and a GELU MLP, a final layer norm, and an LM head
//! tied to the token embedding. Weights are drawn from N(0, 0.02²) with a
//! ChaCha RNG seeded from the config, so a config fully determines the model.
//!
//! Every per-position quantity is computed by a fixed-order loop that reads
//! only positions `0..=i`. Row `i` of the logits is therefore bitwise
//! identical whether the model sees `w[..=i]` or a longer sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    sample_continuation, vocab, AttentionStack, Backend, BackendDescriptor, Capabilities,
    LayerDistributionStack, LogitMatrix, Sampling,
};
use crate::error::{Error, Result};
use crate::types::{DistributionMatrix, TokenId, TokenSequence};

const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

/// Shape and seed of a [`ToyBackend`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dim: usize,
    pub context: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            vocab_size: 256,
            num_layers: 4,
            num_heads: 4,
            dim: 64,
            context: 128,
        }
    }
}

impl ToyConfig {
    /// The small shape used throughout the tests.
    pub fn small(seed: u64) -> Self {
        Self {
            seed,
            vocab_size: 64,
            num_layers: 2,
            num_heads: 2,
            dim: 32,
            context: 64,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size < 8 {
            return Err(Error::Config(format!(
                "vocab_size {} below minimum of 8",
                self.vocab_size
            )));
        }
        if self.num_layers < 2 {
            return Err(Error::Config(format!(
                "num_layers {} below minimum of 2",
                self.num_layers
            )));
        }
        if self.num_heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.num_heads
            )));
        }
        if self.context == 0 {
            return Err(Error::Config("context must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        Self { rows, cols, data }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `x · self` for a row vector `x`.
    fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += xr * w;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct LayerNorm {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        x.iter()
            .zip(&self.gain)
            .zip(&self.bias)
            .map(|((v, g), b)| (v - mean) * inv * g + b)
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln_attn: LayerNorm,
    qkv: Matrix,
    out: Matrix,
    ln_mlp: LayerNorm,
    fc: Matrix,
    proj: Matrix,
}

/// Everything one forward pass can produce.
struct Trace {
    logits: LogitMatrix,
    attentions: Vec<Vec<Vec<Vec<f64>>>>,
    layer_logits: Vec<LogitMatrix>,
}

/// Deterministic in-process transformer backend.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    config: ToyConfig,
    descriptor: BackendDescriptor,
    token_emb: Matrix,
    pos_emb: Matrix,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
}

impl ToyBackend {
    pub fn new(config: ToyConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let token_emb = Matrix::gaussian(config.vocab_size, d, &mut rng);
        let pos_emb = Matrix::gaussian(config.context, d, &mut rng);
        let blocks = (0..config.num_layers)
            .map(|_| Block {
                ln_attn: LayerNorm::new(d),
                qkv: Matrix::gaussian(d, 3 * d, &mut rng),
                out: Matrix::gaussian(d, d, &mut rng),
                ln_mlp: LayerNorm::new(d),
                fc: Matrix::gaussian(d, 4 * d, &mut rng),
                proj: Matrix::gaussian(4 * d, d, &mut rng),
            })
            .collect();
        let descriptor = BackendDescriptor {
            model_name: format!(
                "toy-s{}-v{}-l{}-h{}-d{}",
                config.seed, config.vocab_size, config.num_layers, config.num_heads, config.dim
            ),
            vocab_size: config.vocab_size,
            num_layers: config.num_layers,
            num_heads: config.num_heads,
            context: Some(config.context),
            capabilities: Capabilities::ALL,
        };
        Ok(Self {
            config,
            descriptor,
            token_emb,
            pos_emb,
            blocks,
            ln_final: LayerNorm::new(d),
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    fn check_input(&self, tokens: &TokenSequence) -> Result<()> {
        tokens.validate(self.config.vocab_size)?;
        if tokens.len() > self.config.context {
            return Err(Error::Capacity {
                len: tokens.len(),
                limit: self.config.context,
            });
        }
        Ok(())
    }

    fn lm_head(&self, hidden: &[f64]) -> Vec<f64> {
        let normed = self.ln_final.apply(hidden);
        (0..self.config.vocab_size)
            .map(|v| {
                self.token_emb
                    .row(v)
                    .iter()
                    .zip(&normed)
                    .map(|(e, h)| e * h)
                    .sum()
            })
            .collect()
    }

    #[allow(clippy::needless_range_loop)]
    fn forward(&self, ids: &[TokenId], want_attn: bool, want_layers: bool) -> Trace {
        let d = self.config.dim;
        let heads = self.config.num_heads;
        let head_dim = d / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let n = ids.len();

        let mut hidden: Vec<Vec<f64>> = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                self.token_emb
                    .row(id as usize)
                    .iter()
                    .zip(self.pos_emb.row(i))
                    .map(|(t, p)| t + p)
                    .collect()
            })
            .collect();

        let mut attentions = Vec::new();
        let mut layer_logits = Vec::new();
        for block in &self.blocks {
            let qkv: Vec<Vec<f64>> = hidden
                .iter()
                .map(|h| block.qkv.left_mul(&block.ln_attn.apply(h)))
                .collect();
            let mut layer_attn = vec![vec![vec![0.0; n]; n]; if want_attn { heads } else { 0 }];
            let mut mixed = vec![vec![0.0; d]; n];
            for h in 0..heads {
                let (q_off, k_off, v_off) = (h * head_dim, d + h * head_dim, 2 * d + h * head_dim);
                for i in 0..n {
                    let q = &qkv[i][q_off..q_off + head_dim];
                    let scores: Vec<f64> = (0..=i)
                        .map(|j| {
                            let k = &qkv[j][k_off..k_off + head_dim];
                            q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale
                        })
                        .collect();
                    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for (j, e) in exps.iter().enumerate() {
                        let w = e / z;
                        if want_attn {
                            layer_attn[h][i][j] = w;
                        }
                        let v = &qkv[j][v_off..v_off + head_dim];
                        for (o, vv) in mixed[i][q_off..q_off + head_dim].iter_mut().zip(v) {
                            *o += w * vv;
                        }
                    }
                }
            }
            for (h, m) in hidden.iter_mut().zip(&mixed) {
                for (x, a) in h.iter_mut().zip(block.out.left_mul(m)) {
                    *x += a;
                }
                let up: Vec<f64> = block
                    .fc
                    .left_mul(&block.ln_mlp.apply(h))
                    .into_iter()
                    .map(gelu)
                    .collect();
                for (x, m) in h.iter_mut().zip(block.proj.left_mul(&up)) {
                    *x += m;
                }
            }
            if want_attn {
                attentions.push(layer_attn);
            }
            if want_layers {
                layer_logits.push(hidden.iter().map(|h| self.lm_head(h)).collect());
            }
        }

        let logits = if want_layers {
            layer_logits.last().cloned().unwrap_or_default()
        } else {
            hidden.iter().map(|h| self.lm_head(h)).collect()
        };
        Trace {
            logits,
            attentions,
            layer_logits,
        }
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

impl Backend for ToyBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn logits(&self, tokens: &TokenSequence) -> Result<LogitMatrix> {
        self.check_input(tokens)?;
        Ok(self.forward(tokens.ids(), false, false).logits)
    }

    fn attentions(&self, tokens: &TokenSequence) -> Result<AttentionStack> {
        self.check_input(tokens)?;
        AttentionStack::new(self.forward(tokens.ids(), true, false).attentions)
    }

    fn layer_distributions(&self, tokens: &TokenSequence) -> Result<LayerDistributionStack> {
        self.check_input(tokens)?;
        let trace = self.forward(tokens.ids(), false, true);
        Ok(LayerDistributionStack::new(
            trace
                .layer_logits
                .iter()
                .map(|l| DistributionMatrix::from_logits(l))
                .collect(),
        ))
    }

    fn generate(
        &self,
        tokens: &TokenSequence,
        max_new: usize,
        sampling: &Sampling,
    ) -> Result<TokenSequence> {
        self.check_input(tokens)?;
        if tokens.len() + max_new > self.config.context {
            return Err(Error::Capacity {
                len: tokens.len() + max_new,
                limit: self.config.context,
            });
        }
        let new = sample_continuation(tokens, max_new, sampling, |seq| {
            Ok(self
                .forward(seq.ids(), false, false)
                .logits
                .pop()
                .unwrap_or_default())
        })?;
        let texts = new.iter().map(|&id| vocab::token_text(id)).collect();
        let continuation = TokenSequence::with_texts(new, texts)?;
        Ok(with_texts(tokens).concat(&continuation))
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        vocab::tokenize(text, self.config.vocab_size)
    }

    fn vocab_lookup(&self, piece: &str) -> Result<Option<TokenId>> {
        Ok(vocab::lookup(piece, self.config.vocab_size))
    }

    fn space_token(&self) -> Result<TokenId> {
        Ok(vocab::SPACE)
    }

    fn token_text(&self, id: TokenId) -> Option<String> {
        ((id as usize) < self.config.vocab_size).then(|| vocab::token_text(id))
    }
}

/// Fills in decoded texts for a sequence that lacks them.
fn with_texts(tokens: &TokenSequence) -> TokenSequence {
    if tokens.texts().is_some() {
        return tokens.clone();
    }
    let texts = tokens
        .ids()
        .iter()
        .map(|&id| vocab::token_text(id))
        .collect();
    TokenSequence::with_texts(tokens.ids().to_vec(), texts).expect("same length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::check_rows;

    fn toy() -> ToyBackend {
        ToyBackend::new(ToyConfig::small(1)).unwrap()
    }

    fn seq(ids: &[TokenId]) -> TokenSequence {
        TokenSequence::new(ids.to_vec()).unwrap()
    }

    #[test]
    fn rows_are_distributions() {
        let b = ToyBackend::new(ToyConfig {
            seed: 42,
            ..ToyConfig::small(42)
        })
        .unwrap();
        let dist = b.distributions(&seq(&[5, 9, 13])).unwrap();
        assert_eq!(dist.len(), 3);
        check_rows(&dist).unwrap();
    }

    #[test]
    fn construction_is_deterministic() {
        let w = seq(&[3, 1, 4, 1, 5]);
        assert_eq!(toy().logits(&w).unwrap(), toy().logits(&w).unwrap());
        let other = ToyBackend::new(ToyConfig::small(2)).unwrap();
        assert_ne!(toy().logits(&w).unwrap(), other.logits(&w).unwrap());
    }

    #[test]
    fn rejects_bad_shapes() {
        for cfg in [
            ToyConfig {
                dim: 33,
                ..ToyConfig::small(1)
            },
            ToyConfig {
                vocab_size: 7,
                ..ToyConfig::small(1)
            },
            ToyConfig {
                num_layers: 1,
                ..ToyConfig::small(1)
            },
        ] {
            assert!(matches!(ToyBackend::new(cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn prefix_rows_match_bitwise() {
        let b = toy();
        let w = seq(&[7, 2, 9, 11, 3, 40]);
        let full = b.distributions(&w).unwrap();
        for i in 0..w.len() {
            let prefix = b.distributions(&w.slice(0, i + 1).unwrap()).unwrap();
            assert_eq!(full.row(i), prefix.last());
        }
    }

    #[test]
    fn attentions_are_causal_and_stochastic() {
        let b = toy();
        let one = b.attentions(&seq(&[4])).unwrap();
        for layer in one.weights() {
            for head in layer {
                assert_eq!(head, &vec![vec![1.0]]);
            }
        }
        let stack = b.attentions(&seq(&[4, 8, 15, 16, 23])).unwrap();
        assert_eq!(stack.num_layers(), 2);
        assert_eq!(stack.num_heads(), 2);
        for layer in stack.weights() {
            for head in layer {
                for (q, row) in head.iter().enumerate() {
                    assert!(row[q + 1..].iter().all(|&w| w == 0.0));
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn last_layer_matches_distributions() {
        let b = toy();
        let w = seq(&[10, 20, 30]);
        let stack = b.layer_distributions(&w).unwrap();
        assert_eq!(stack.num_layers(), 2);
        assert_eq!(stack.last(), &b.distributions(&w).unwrap());
        for layer in stack.layers() {
            check_rows(layer).unwrap();
        }
    }

    #[test]
    fn generation_is_seeded() {
        let b = toy();
        let w = seq(&[1, 2, 3]);
        let s = Sampling::seeded(7);
        let a = b.generate(&w, 5, &s).unwrap();
        assert_eq!(a, b.generate(&w, 5, &s).unwrap());
        assert_eq!(a.len(), 8);
        assert_eq!(&a.ids()[..3], w.ids());
        assert_eq!(b.generate(&w, 20, &s).unwrap().len(), 23);
    }

    #[test]
    fn greedy_generation_is_argmax_loop() {
        let b = toy();
        let mut ids = vec![6, 12, 18];
        let out = b.generate(&seq(&ids), 4, &Sampling::greedy()).unwrap();
        for _ in 0..4 {
            let dist = b.distributions(&seq(&ids)).unwrap();
            ids.push(dist.last().argmax().0);
        }
        assert_eq!(out.ids(), ids.as_slice());
    }

    #[test]
    fn context_limit_is_enforced() {
        let b = toy();
        let long = seq(&vec![1; 65]);
        assert!(matches!(b.logits(&long), Err(Error::Capacity { .. })));
        let near = seq(&vec![1; 60]);
        assert!(matches!(
            b.generate(&near, 5, &Sampling::greedy()),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn out_of_vocab_ids_rejected() {
        assert!(matches!(
            toy().logits(&seq(&[64])),
            Err(Error::InvalidTokens(_))
        ));
    }
}
