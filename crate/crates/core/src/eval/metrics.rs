// SPDX-License-Identifier: MIT OR Apache-2.0

//! Perturbation faithfulness metrics.
//!
//! Both metrics blank tokens with the backend's space token and read the
//! relative probability of target over alternative at the final position.
//! AOPC starts from a fully blanked prompt and restores tokens most salient
//! first (higher is better). Sufficiency starts from the intact prompt and
//! blanks tokens most salient first (lower is better). At each ratio the
//! `ceil(ratio · n)` top-ranked tokens move.

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::types::{rank_descending, ContrastiveSpec, TokenSequence};

pub const DEFAULT_RATIOS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// Which perturbation ratios to evaluate and whether the unperturbed
/// endpoint enters each average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub ratios: Vec<f64>,
    /// Add a 0%-restored point (fully blanked prompt) to the AOPC curve.
    pub aopc_include_zero: bool,
    /// Add a 0%-removed point (intact prompt) to the Sufficiency curve.
    pub sufficiency_include_zero: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            ratios: DEFAULT_RATIOS.to_vec(),
            aopc_include_zero: false,
            sufficiency_include_zero: true,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(Error::Config("no perturbation ratios".into()));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::Config(format!("ratio {r} outside (0, 1]")));
        }
        Ok(())
    }

    fn points(&self, include_zero: bool) -> Vec<f64> {
        let mut pts = Vec::with_capacity(self.ratios.len() + 1);
        if include_zero {
            pts.push(0.0);
        }
        pts.extend_from_slice(&self.ratios);
        pts
    }
}

/// A metric evaluated at a list of ratios, plus the mean over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub ratios: Vec<f64>,
    pub values: Vec<f64>,
    pub average: f64,
}

impl Curve {
    pub fn new(ratios: Vec<f64>, values: Vec<f64>) -> Self {
        let average = values.iter().sum::<f64>() / values.len() as f64;
        Self {
            ratios,
            values,
            average,
        }
    }

    /// Pointwise mean of curves sharing the same ratios; the average is
    /// the mean of the per-curve averages.
    pub fn mean(curves: &[&Curve]) -> Option<Curve> {
        let first = curves.first()?;
        let k = curves.len() as f64;
        let mut values = vec![0.0; first.values.len()];
        let mut average = 0.0;
        for c in curves {
            for (v, x) in values.iter_mut().zip(&c.values) {
                *v += x;
            }
            average += c.average;
        }
        Some(Curve {
            ratios: first.ratios.clone(),
            values: values.into_iter().map(|v| v / k).collect(),
            average: average / k,
        })
    }
}

/// Number of tokens moved at `ratio`: `ceil(ratio · n)`, guarded against
/// round-off such as `0.6 · 5 = 3.0000000000000004`.
pub fn perturbation_count(ratio: f64, n: usize) -> usize {
    let exact = ratio * n as f64;
    let k = (exact - 1e-9).ceil().max(0.0) as usize;
    k.min(n)
}

/// Softmax restricted to the target and alternative logits; returns the
/// probability mass landing on the targets.
pub fn relative_probability_from_logits(logits: &[f64], spec: &ContrastiveSpec) -> Result<f64> {
    if !spec.has_contrast() {
        return Err(Error::InvalidSpec(
            "relative probability needs at least one alternative".into(),
        ));
    }
    spec.validate(logits.len())?;
    let alternatives: Vec<usize> = if spec.complement_alternatives() {
        (0..logits.len())
            .filter(|i| !spec.targets().contains(&(*i as u32)))
            .collect()
    } else {
        spec.alternatives().iter().map(|&a| a as usize).collect()
    };
    let targets: Vec<usize> = spec.targets().iter().map(|&t| t as usize).collect();
    let max = targets
        .iter()
        .chain(&alternatives)
        .map(|&i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidSpec("every contrasted logit is -inf".into()));
    }
    let mass = |ids: &[usize]| ids.iter().map(|&i| (logits[i] - max).exp()).sum::<f64>();
    let t = mass(&targets);
    let a = mass(&alternatives);
    Ok(t / (t + a))
}

/// Relative probability of the targets at the prompt's final position.
pub fn relative_probability<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
    spec: &ContrastiveSpec,
) -> Result<f64> {
    if !spec.has_contrast() {
        return Err(Error::InvalidSpec(
            "relative probability needs at least one alternative".into(),
        ));
    }
    let logits = backend.logits(tokens)?;
    relative_probability_from_logits(logits.last().expect("non-empty sequence"), spec)
}

fn check_lengths(tokens: &TokenSequence, saliency: &[f64]) -> Result<()> {
    if saliency.len() != tokens.len() {
        return Err(Error::InvalidTokens(format!(
            "saliency of length {} for {} tokens",
            saliency.len(),
            tokens.len()
        )));
    }
    Ok(())
}

/// Keep-mask with the `k` highest-saliency positions set.
fn top_k_mask(ranking: &[usize], k: usize) -> Vec<bool> {
    let mut mask = vec![false; ranking.len()];
    for &i in &ranking[..k] {
        mask[i] = true;
    }
    mask
}

/// Restores tokens most salient first into a fully blanked prompt.
pub fn aopc<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
    spec: &ContrastiveSpec,
    saliency: &[f64],
    config: &MetricConfig,
) -> Result<Curve> {
    config.validate()?;
    check_lengths(tokens, saliency)?;
    let space = backend.space_token()?;
    let ranking = rank_descending(saliency);
    let points = config.points(config.aopc_include_zero);
    let values = points
        .iter()
        .map(|&ratio| {
            let keep = top_k_mask(&ranking, perturbation_count(ratio, tokens.len()));
            relative_probability(backend, &tokens.masked(&keep, space), spec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Curve::new(points, values))
}

/// Blanks tokens most salient first, starting from the intact prompt.
pub fn sufficiency<B: Backend + ?Sized>(
    backend: &B,
    tokens: &TokenSequence,
    spec: &ContrastiveSpec,
    saliency: &[f64],
    config: &MetricConfig,
) -> Result<Curve> {
    config.validate()?;
    check_lengths(tokens, saliency)?;
    let space = backend.space_token()?;
    let ranking = rank_descending(saliency);
    let points = config.points(config.sufficiency_include_zero);
    let values = points
        .iter()
        .map(|&ratio| {
            let removed = top_k_mask(&ranking, perturbation_count(ratio, tokens.len()));
            let keep: Vec<bool> = removed.iter().map(|r| !r).collect();
            relative_probability(backend, &tokens.masked(&keep, space), spec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Curve::new(points, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_softmax() {
        let spec = ContrastiveSpec::pair(0, 1).unwrap();
        let p = relative_probability_from_logits(&[2.0, 0.0, 5.0], &spec).unwrap();
        let oracle = 2f64.exp() / (2f64.exp() + 1.0);
        assert!((p - oracle).abs() < 1e-15);
        assert!((p - 0.8808).abs() < 1e-4);
        assert_eq!(
            relative_probability_from_logits(&[1.5, 1.5], &spec).unwrap(),
            0.5
        );
        assert_eq!(
            relative_probability_from_logits(&[f64::NEG_INFINITY, 0.3], &spec).unwrap(),
            0.0
        );
    }

    #[test]
    fn multi_token_sets_aggregate_after_restricted_softmax() {
        let spec = ContrastiveSpec::new([0, 1], [2]).unwrap();
        let logits = [0.0, 1.0, 2.0, 9.0];
        let e = |x: f64| x.exp();
        let oracle = (e(0.0) + e(1.0)) / (e(0.0) + e(1.0) + e(2.0));
        let p = relative_probability_from_logits(&logits, &spec).unwrap();
        assert!((p - oracle).abs() < 1e-15);
    }

    #[test]
    fn needs_a_contrast() {
        let spec = ContrastiveSpec::target_only([0]).unwrap();
        assert!(matches!(
            relative_probability_from_logits(&[0.0, 1.0], &spec),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn counts_use_ceiling() {
        assert_eq!(perturbation_count(0.2, 3), 1);
        assert_eq!(perturbation_count(0.6, 5), 3);
        assert_eq!(perturbation_count(0.4, 10), 4);
        assert_eq!(perturbation_count(0.15, 10), 2);
        assert_eq!(perturbation_count(1.0, 7), 7);
        assert_eq!(perturbation_count(0.0, 7), 0);
    }

    #[test]
    fn config_rejects_bad_ratios() {
        let bad = MetricConfig {
            ratios: vec![0.0, 0.5],
            ..MetricConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(MetricConfig::default().validate().is_ok());
    }
}
