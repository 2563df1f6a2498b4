// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer-convergence analysis over logit-lens distributions.
//!
//! Each layer's hidden states are read through the LM head and compared to
//! the final layer with `KL(p_layer ‖ p_final)` in nats.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::types::{DistributionRow, TokenId, TokenSequence};

/// `KL(p ‖ q)` in nats with `0 · ln(0 / q) = 0`. Fails if `q` has a zero
/// where `p` does not, which softmax outputs never produce.
pub fn kl_divergence(p: &DistributionRow, q: &DistributionRow) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Config(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::Protocol(
                "reference distribution assigns zero to a supported token".into(),
            ));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl)
}

/// Per-layer KL sums and the number of positions they cover.
fn kl_sums<B: Backend + ?Sized>(backend: &B, tokens: &TokenSequence) -> Result<(Vec<f64>, usize)> {
    if !backend.descriptor().capabilities.layer_states {
        return Err(Error::UnsupportedCapability("layer states"));
    }
    tokens.validate(backend.vocab_size())?;
    let stack = backend.layer_distributions(tokens)?;
    let last = stack.last();
    let sums = stack
        .layers()
        .iter()
        .map(|layer| {
            layer
                .rows()
                .iter()
                .zip(last.rows())
                .map(|(p, q)| kl_divergence(p, q))
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((sums, tokens.len()))
}

/// Mean over positions of `KL(layer ‖ final)`, one entry per layer. The
/// final entry is exactly zero.
pub fn kl_convergence<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
) -> Result<Vec<f64>> {
    let (sums, n) = kl_sums(backend, tokens)?;
    Ok(sums.into_iter().map(|s| s / n as f64).collect())
}

/// Unweighted mean over every (prompt, position) pair of a prompt set.
pub fn kl_convergence_set<B: Backend + ?Sized>(
    backend: &B,
    prompts: &[TokenSequence],
) -> Result<Vec<f64>> {
    let mut total: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for prompt in prompts {
        let (sums, n) = kl_sums(backend, prompt)?;
        count += n;
        match total.as_mut() {
            None => total = Some(sums),
            Some(t) => t.iter_mut().zip(sums).for_each(|(a, b)| *a += b),
        }
    }
    let total = total.ok_or_else(|| Error::Config("no prompts".into()))?;
    Ok(total.into_iter().map(|s| s / count as f64).collect())
}

/// Writes `layer,mean_kl` rows, layers numbered from 1.
pub fn write_kl_csv<W: Write>(kl: &[f64], mut out: W) -> Result<()> {
    writeln!(out, "layer,mean_kl")?;
    for (i, v) in kl.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, v)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopToken {
    pub id: TokenId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub prob: f64,
}

/// Most probable next token for every layer and position, `[layer][position]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopTokenTrace {
    pub layers: Vec<Vec<TopToken>>,
}

pub fn top_token_trace<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
) -> Result<TopTokenTrace> {
    if !backend.descriptor().capabilities.layer_states {
        return Err(Error::UnsupportedCapability("layer states"));
    }
    tokens.validate(backend.vocab_size())?;
    let stack = backend.layer_distributions(tokens)?;
    let layers = stack
        .layers()
        .iter()
        .map(|layer| {
            layer
                .rows()
                .iter()
                .map(|row| {
                    let (id, prob) = row.argmax();
                    TopToken {
                        id,
                        text: backend.token_text(id),
                        prob,
                    }
                })
                .collect()
        })
        .collect();
    Ok(TopTokenTrace { layers })
}
