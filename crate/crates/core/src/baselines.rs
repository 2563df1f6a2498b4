// SPDX-License-Identifier: MIT OR Apache-2.0

//! Comparison methods that need no gradients: attention rollout,
//! leave-one-out occlusion and seeded random scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::backend::{AttentionStack, Backend};
use crate::error::Result;
use crate::types::{
    contrastive_confidence, ContrastiveSpec, SaliencyResult, TokenSequence, Variant,
};

/// Weight of the identity in the residual mix `a·A + (1 - a)·I`.
pub const ROLLOUT_ATTENTION_WEIGHT: f64 = 0.5;

type Square = Vec<Vec<f64>>;

fn identity(n: usize) -> Square {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn matmul(a: &Square, b: &Square) -> Square {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Head-averaged, identity-mixed attention of one layer.
fn mixed_layer(layer: &[Vec<Vec<f64>>], renormalize: bool) -> Square {
    let heads = layer.len() as f64;
    let n = layer[0].len();
    let mut m = vec![vec![0.0; n]; n];
    for head in layer {
        for (i, row) in head.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                m[i][j] += w / heads;
            }
        }
    }
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let id = if i == j { 1.0 } else { 0.0 };
            *v = ROLLOUT_ATTENTION_WEIGHT * *v + (1.0 - ROLLOUT_ATTENTION_WEIGHT) * id;
        }
        if renormalize {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    m
}

/// Cumulative rollout after each layer, bottom-up: entry `l` is
/// `M_l · … · M_1`.
pub fn rollout_products(stack: &AttentionStack, renormalize: bool) -> Vec<Square> {
    let mut acc = identity(stack.seq_len());
    stack
        .weights()
        .iter()
        .map(|layer| {
            acc = matmul(&mixed_layer(layer, renormalize), &acc);
            acc.clone()
        })
        .collect()
}

/// Attribution of the final position to every input position.
pub fn rollout_saliency(stack: &AttentionStack, renormalize: bool) -> Vec<f64> {
    rollout_products(stack, renormalize)
        .pop()
        .and_then(|mut m| m.pop())
        .unwrap_or_default()
}

/// Attention rollout over the backend's attention weights, renormalizing
/// rows after the identity mix. Ignores any contrastive spec.
pub fn attention_rollout<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
) -> Result<SaliencyResult> {
    attention_rollout_with(backend, tokens, true)
}

pub fn attention_rollout_with<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
    renormalize: bool,
) -> Result<SaliencyResult> {
    tokens.validate(backend.vocab_size())?;
    if !backend.descriptor().capabilities.attentions {
        return Err(crate::Error::UnsupportedCapability("attentions"));
    }
    let stack = backend.attentions(tokens)?;
    Ok(SaliencyResult::new(
        Variant::Rollout,
        rollout_saliency(&stack, renormalize),
        Vec::new(),
    ))
}

/// Leave-one-out occlusion: `c_i = r(w) - r(w with w_i blanked)`, blanking
/// with the backend's space token. The trace holds the occluded
/// confidences.
pub fn occlusion<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
    spec: &ContrastiveSpec,
) -> Result<SaliencyResult> {
    tokens.validate(backend.vocab_size())?;
    spec.validate(backend.vocab_size())?;
    let space = backend.space_token()?;
    let confidence = |seq: &TokenSequence| -> Result<f64> {
        let dist = backend.distributions(seq)?;
        contrastive_confidence(dist.last(), spec)
    };
    let full = confidence(tokens)?;
    let occluded = (0..tokens.len())
        .into_par_iter()
        .map(|i| confidence(&tokens.replaced(i, space, Some(" "))))
        .collect::<Result<Vec<_>>>()?;
    let saliency = occluded.iter().map(|r| full - r).collect();
    Ok(SaliencyResult::new(Variant::Occlusion, saliency, occluded))
}

/// Uniform scores in `[0, 1)` drawn from a ChaCha RNG seeded with `seed`.
pub fn random_saliency(tokens: &TokenSequence, seed: u64) -> SaliencyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let saliency = (0..tokens.len()).map(|_| rng.random::<f64>()).collect();
    SaliencyResult::new(Variant::Random, saliency, Vec::new())
}
