// SPDX-License-Identifier: MIT OR Apache-2.0

//! Token-distribution-dynamics saliency.
//!
//! For a prompt `w_1..w_n` and a contrastive spec, each variant builds a
//! trace of confidences `r` and scores token `i` by how much `r` moves when
//! that token is added:
//!
//! * forward: `r_i` is read from the next-token distribution after the
//!   prefix `w_1..w_i` (all prefixes come out of one causal pass), and
//!   `c_i = r_i - r_{i-1}`, with `c_1 = r_1`;
//! * backward: `r_i` is read from the final position after feeding the
//!   suffix `w_i..w_n` as a fresh prompt, and `c_i = r_i - r_{i+1}`, with
//!   `c_n = r_n`;
//! * bidirectional: the elementwise sum of the two.
//!
//! Both traces telescope: the forward scores sum to `r_n` and the backward
//! scores to `r_1`, which is the same full-prompt confidence.

use rayon::prelude::*;

use crate::backend::Backend;
use crate::error::Result;
use crate::types::{
    contrastive_confidence, ContrastiveSpec, SaliencyResult, TokenSequence, Variant,
};

fn check_inputs<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
    spec: &ContrastiveSpec,
) -> Result<()> {
    let v = backend.vocab_size();
    tokens.validate(v)?;
    spec.validate(v)
}

/// `c_1 = r_1`, `c_i = r_i - r_{i-1}`.
pub fn forward_differences(r: &[f64]) -> Vec<f64> {
    r.iter()
        .enumerate()
        .map(|(i, &ri)| if i == 0 { ri } else { ri - r[i - 1] })
        .collect()
}

/// `c_n = r_n`, `c_i = r_i - r_{i+1}`.
pub fn backward_differences(r: &[f64]) -> Vec<f64> {
    let n = r.len();
    r.iter()
        .enumerate()
        .map(|(i, &ri)| if i + 1 == n { ri } else { ri - r[i + 1] })
        .collect()
}

/// Forward saliency from a single forward pass.
pub fn tdd_forward<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
    spec: &ContrastiveSpec,
) -> Result<SaliencyResult> {
    check_inputs(backend, tokens, spec)?;
    let dist = backend.distributions(tokens)?;
    let r = dist
        .rows()
        .iter()
        .map(|row| contrastive_confidence(row, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(SaliencyResult::new(
        Variant::Forward,
        forward_differences(&r),
        r,
    ))
}

/// Backward saliency from `n` suffix passes, evaluated in parallel.
pub fn tdd_backward<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
    spec: &ContrastiveSpec,
) -> Result<SaliencyResult> {
    check_inputs(backend, tokens, spec)?;
    let n = tokens.len();
    let r = (0..n)
        .into_par_iter()
        .map(|i| {
            let suffix = tokens.slice(i, n)?;
            let dist = backend.distributions(&suffix)?;
            contrastive_confidence(dist.last(), spec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SaliencyResult::new(
        Variant::Backward,
        backward_differences(&r),
        r,
    ))
}

/// Sum of forward and backward saliency. The result's trace is the forward
/// trace; both constituents are kept in `components`.
pub fn tdd_bidirectional<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
    spec: &ContrastiveSpec,
) -> Result<SaliencyResult> {
    let forward = tdd_forward(backend, tokens, spec)?;
    let backward = tdd_backward(backend, tokens, spec)?;
    Ok(combine(forward, backward))
}

/// Bidirectional result from already computed constituents.
pub fn combine(forward: SaliencyResult, backward: SaliencyResult) -> SaliencyResult {
    let saliency = forward
        .saliency
        .iter()
        .zip(&backward.saliency)
        .map(|(f, b)| f + b)
        .collect();
    let mut out = SaliencyResult::new(Variant::Bidirectional, saliency, forward.r_trace.clone());
    out.components = vec![forward, backward];
    out
}

/// Dispatches to one of the three variants.
pub fn tdd<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
    spec: &ContrastiveSpec,
    variant: Variant,
) -> Result<SaliencyResult> {
    match variant {
        Variant::Forward => tdd_forward(backend, tokens, spec),
        Variant::Backward => tdd_backward(backend, tokens, spec),
        Variant::Bidirectional => tdd_bidirectional(backend, tokens, spec),
        other => Err(crate::Error::Config(format!(
            "{other} is not a TDD variant"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CountingBackend, ToyBackend, ToyConfig};
    use crate::types::TokenId;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn forward_differences_by_hand() {
        assert!(close(
            &forward_differences(&[0.10, 0.40, 0.35]),
            &[0.10, 0.30, -0.05]
        ));
        assert!(close(
            &forward_differences(&[0.2, 0.2, 0.2]),
            &[0.2, 0.0, 0.0]
        ));
    }

    #[test]
    fn backward_differences_by_hand() {
        assert!(close(
            &backward_differences(&[0.5, 0.2, 0.4]),
            &[0.3, -0.2, 0.4]
        ));
        assert!(close(
            &backward_differences(&[0.7, 0.7, 0.7]),
            &[0.0, 0.0, 0.7]
        ));
    }

    #[test]
    fn combine_sums_elementwise() {
        let f = SaliencyResult::new(Variant::Forward, vec![0.10, 0.30, -0.05], vec![]);
        let b = SaliencyResult::new(Variant::Backward, vec![0.3, -0.2, 0.4], vec![]);
        let bi = combine(f, b);
        assert!(close(&bi.saliency, &[0.40, 0.10, 0.35]));
        assert_eq!(bi.components.len(), 2);
        let zero = combine(
            SaliencyResult::new(Variant::Forward, vec![0.0; 4], vec![]),
            SaliencyResult::new(Variant::Backward, vec![0.0; 4], vec![]),
        );
        assert_eq!(zero.saliency, vec![0.0; 4]);
    }

    fn seq(ids: &[TokenId]) -> TokenSequence {
        TokenSequence::new(ids.to_vec()).unwrap()
    }

    #[test]
    fn single_token_variants_agree() {
        let toy = ToyBackend::new(ToyConfig::small(5)).unwrap();
        let spec = ContrastiveSpec::pair(3, 4).unwrap();
        let w = seq(&[17]);
        let f = tdd_forward(&toy, &w, &spec).unwrap();
        let b = tdd_backward(&toy, &w, &spec).unwrap();
        let bi = tdd_bidirectional(&toy, &w, &spec).unwrap();
        assert_eq!(f.saliency, b.saliency);
        assert_eq!(bi.saliency, vec![2.0 * f.saliency[0]]);
    }

    #[test]
    fn call_counts() {
        let toy = CountingBackend::new(ToyBackend::new(ToyConfig::small(5)).unwrap());
        let spec = ContrastiveSpec::pair(3, 4).unwrap();
        let w = seq(&[9, 8, 7, 6, 5]);
        tdd_forward(&toy, &w, &spec).unwrap();
        assert_eq!(toy.counts().forward(), 1);
        toy.reset();
        tdd_backward(&toy, &w, &spec).unwrap();
        assert_eq!(toy.counts().forward(), 5);
        toy.reset();
        tdd_bidirectional(&toy, &w, &spec).unwrap();
        assert_eq!(toy.counts().forward(), 6);
    }

    #[test]
    fn telescoping_on_toy() {
        let toy = ToyBackend::new(ToyConfig::small(11)).unwrap();
        let spec = ContrastiveSpec::pair(20, 30).unwrap();
        let w = seq(&[1, 5, 9, 13, 17, 21, 25]);
        let f = tdd_forward(&toy, &w, &spec).unwrap();
        let b = tdd_backward(&toy, &w, &spec).unwrap();
        let full = *f.r_trace.last().unwrap();
        assert_eq!(b.r_trace[0], full);
        assert!((f.saliency.iter().sum::<f64>() - full).abs() < 1e-9);
        assert!((b.saliency.iter().sum::<f64>() - full).abs() < 1e-9);
    }

    #[test]
    fn rejects_out_of_range_spec_before_calling_backend() {
        let toy = CountingBackend::new(ToyBackend::new(ToyConfig::small(5)).unwrap());
        let spec = ContrastiveSpec::pair(3, 400).unwrap();
        assert!(tdd_forward(&toy, &seq(&[1, 2]), &spec).is_err());
        assert_eq!(toy.counts().forward(), 0);
    }

    #[test]
    fn rejects_non_tdd_variant() {
        let toy = ToyBackend::new(ToyConfig::small(5)).unwrap();
        let spec = ContrastiveSpec::pair(3, 4).unwrap();
        assert!(tdd(&toy, &seq(&[1]), &spec, Variant::Rollout).is_err());
    }
}
