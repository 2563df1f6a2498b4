// SPDX-License-Identifier: MIT OR Apache-2.0

//! Domain types and the probability algebra the rest of the crate builds on.
//!
//! All probabilities are held as `f64`, whatever precision the backend
//! produced them in.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a backend's vocabulary.
pub type TokenId = u32;

/// Tolerance on the sum of a probability row.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

// ---------------------------------------------------------------------------
// TokenSequence
// ---------------------------------------------------------------------------

/// A prompt (or continuation) as vocabulary ids, optionally with the decoded
/// text of each token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    ids: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    texts: Option<Vec<String>>,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidTokens("sequence is empty".into()));
        }
        Ok(Self { ids, texts: None })
    }

    pub fn with_texts(ids: Vec<TokenId>, texts: Vec<String>) -> Result<Self> {
        if texts.len() != ids.len() {
            return Err(Error::InvalidTokens(format!(
                "{} ids but {} texts",
                ids.len(),
                texts.len()
            )));
        }
        let mut seq = Self::new(ids)?;
        seq.texts = Some(texts);
        Ok(seq)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn texts(&self) -> Option<&[String]> {
        self.texts.as_deref()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Display text for position `i`, falling back to `#id`.
    pub fn text_at(&self, i: usize) -> String {
        match &self.texts {
            Some(t) => t[i].clone(),
            None => format!("#{}", self.ids[i]),
        }
    }

    /// Checks every id against a vocabulary size.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if let Some((pos, id)) = self
            .ids
            .iter()
            .enumerate()
            .find(|(_, &id)| id as usize >= vocab_size)
        {
            return Err(Error::InvalidTokens(format!(
                "token {id} at position {pos} outside vocabulary of {vocab_size}"
            )));
        }
        Ok(())
    }

    /// Contiguous sub-range `start..end`, texts included.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidTokens(format!(
                "empty or out-of-range slice {start}..{end} of {}",
                self.len()
            )));
        }
        Ok(Self {
            ids: self.ids[start..end].to_vec(),
            texts: self.texts.as_ref().map(|t| t[start..end].to_vec()),
        })
    }

    /// Copy with the token at `pos` replaced by `id` (and its text by `text`).
    pub fn replaced(&self, pos: usize, id: TokenId, text: Option<&str>) -> Self {
        let mut out = self.clone();
        out.ids[pos] = id;
        if let Some(t) = out.texts.as_mut() {
            t[pos] = text.map(str::to_owned).unwrap_or_else(|| format!("#{id}"));
        }
        out
    }

    /// Copy where every position outside `keep` becomes `fill`.
    pub fn masked(&self, keep: &[bool], fill: TokenId) -> Self {
        let ids = self
            .ids
            .iter()
            .zip(keep)
            .map(|(&id, &k)| if k { id } else { fill })
            .collect();
        Self { ids, texts: None }
    }

    /// Concatenation of two sequences; texts survive only if both have them.
    pub fn concat(&self, other: &TokenSequence) -> Self {
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        let texts = match (&self.texts, &other.texts) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
            _ => None,
        };
        Self { ids, texts }
    }
}

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

/// Next-token probability distribution over the whole vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    probs: Vec<f64>,
}

impl DistributionRow {
    /// Wraps an existing probability vector after checking it is one.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("empty distribution".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Config(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Numerically stable softmax. Never fails on finite input; `-inf`
    /// entries get probability zero.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        Self {
            probs: exps.into_iter().map(|e| e / z).collect(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index and value of the most probable token (lowest index on ties).
    pub fn argmax(&self) -> (TokenId, f64) {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &p) in self.probs.iter().enumerate() {
            if p > best.1 {
                best = (i, p);
            }
        }
        (best.0 as TokenId, best.1)
    }
}

/// One next-token distribution per input position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionMatrix {
    rows: Vec<DistributionRow>,
}

impl DistributionMatrix {
    pub fn new(rows: Vec<DistributionRow>) -> Self {
        Self { rows }
    }

    pub fn from_logits(logits: &[Vec<f64>]) -> Self {
        Self::new(logits.iter().map(|l| DistributionRow::softmax(l)).collect())
    }

    pub fn rows(&self) -> &[DistributionRow] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &DistributionRow {
        &self.rows[i]
    }

    pub fn last(&self) -> &DistributionRow {
        self.rows
            .last()
            .expect("distribution matrix has at least one row")
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn into_rows(self) -> Vec<DistributionRow> {
        self.rows
    }
}

// ---------------------------------------------------------------------------
// ContrastiveSpec
// ---------------------------------------------------------------------------

/// Which tokens count for and against the prediction being explained.
///
/// An empty alternative set is the target-only mode: alternatives are
/// treated as having zero probability. With `complement_alternatives`
/// every non-target token is an alternative and `alternatives` is ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveSpec {
    targets: BTreeSet<TokenId>,
    alternatives: BTreeSet<TokenId>,
    complement_alternatives: bool,
}

impl ContrastiveSpec {
    pub fn new(
        targets: impl IntoIterator<Item = TokenId>,
        alternatives: impl IntoIterator<Item = TokenId>,
    ) -> Result<Self> {
        let targets: BTreeSet<_> = targets.into_iter().collect();
        let alternatives: BTreeSet<_> = alternatives.into_iter().collect();
        if targets.is_empty() {
            return Err(Error::InvalidSpec("target set is empty".into()));
        }
        if let Some(shared) = targets.intersection(&alternatives).next() {
            return Err(Error::InvalidSpec(format!(
                "token {shared} is both target and alternative"
            )));
        }
        Ok(Self {
            targets,
            alternatives,
            complement_alternatives: false,
        })
    }

    /// Single target against a single alternative.
    pub fn pair(target: TokenId, alternative: TokenId) -> Result<Self> {
        Self::new([target], [alternative])
    }

    pub fn target_only(targets: impl IntoIterator<Item = TokenId>) -> Result<Self> {
        Self::new(targets, [])
    }

    /// Targets against every other token in the vocabulary.
    pub fn against_rest(targets: impl IntoIterator<Item = TokenId>) -> Result<Self> {
        let mut spec = Self::new(targets, [])?;
        spec.complement_alternatives = true;
        Ok(spec)
    }

    pub fn targets(&self) -> &BTreeSet<TokenId> {
        &self.targets
    }

    pub fn alternatives(&self) -> &BTreeSet<TokenId> {
        &self.alternatives
    }

    pub fn complement_alternatives(&self) -> bool {
        self.complement_alternatives
    }

    /// True when there is something to contrast the targets with.
    pub fn has_contrast(&self) -> bool {
        self.complement_alternatives || !self.alternatives.is_empty()
    }

    /// Role-swapped mirror. Only defined for explicit alternative sets.
    pub fn swapped(&self) -> Result<Self> {
        if self.complement_alternatives {
            return Err(Error::InvalidSpec(
                "cannot swap a spec whose alternatives are the complement".into(),
            ));
        }
        Self::new(self.alternatives.clone(), self.targets.clone())
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let out_of_range = self
            .targets
            .iter()
            .chain(self.alternatives.iter())
            .find(|&&id| id as usize >= vocab_size);
        match out_of_range {
            Some(id) => Err(Error::InvalidSpec(format!(
                "token {id} outside vocabulary of {vocab_size}"
            ))),
            None => Ok(()),
        }
    }
}

/// Probability mass on the targets minus the mass on the alternatives.
pub fn contrastive_confidence(row: &DistributionRow, spec: &ContrastiveSpec) -> Result<f64> {
    spec.validate(row.len())?;
    let p = row.probs();
    let target: f64 = spec.targets.iter().map(|&t| p[t as usize]).sum();
    let alternative: f64 = if spec.complement_alternatives {
        p.iter()
            .enumerate()
            .filter(|(i, _)| !spec.targets.contains(&(*i as TokenId)))
            .map(|(_, &q)| q)
            .sum()
    } else {
        spec.alternatives.iter().map(|&a| p[a as usize]).sum()
    };
    Ok(target - alternative)
}

// ---------------------------------------------------------------------------
// SaliencyResult
// ---------------------------------------------------------------------------

/// Which method produced a saliency vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Forward,
    Backward,
    Bidirectional,
    Rollout,
    Occlusion,
    Random,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Forward,
        Variant::Backward,
        Variant::Bidirectional,
        Variant::Rollout,
        Variant::Occlusion,
        Variant::Random,
    ];

    /// Short method name used on the command line and in reports.
    pub fn method_name(self) -> &'static str {
        match self {
            Variant::Forward => "tdd-f",
            Variant::Backward => "tdd-b",
            Variant::Bidirectional => "tdd-bi",
            Variant::Rollout => "rollout",
            Variant::Occlusion => "occlusion",
            Variant::Random => "random",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.method_name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tdd-f" | "forward" => Ok(Variant::Forward),
            "tdd-b" | "backward" => Ok(Variant::Backward),
            "tdd-bi" | "bidirectional" => Ok(Variant::Bidirectional),
            "rollout" => Ok(Variant::Rollout),
            "occlusion" => Ok(Variant::Occlusion),
            "random" => Ok(Variant::Random),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Per-token saliency scores plus the confidences they were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyResult {
    pub variant: Variant,
    pub saliency: Vec<f64>,
    /// Intermediate confidences (`r`), empty for rollout and random.
    pub r_trace: Vec<f64>,
    /// Forward and backward results a bidirectional result was summed from.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<SaliencyResult>,
}

impl SaliencyResult {
    pub fn new(variant: Variant, saliency: Vec<f64>, r_trace: Vec<f64>) -> Self {
        Self {
            variant,
            saliency,
            r_trace,
            components: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.saliency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.saliency.is_empty()
    }

    /// Positions sorted from most to least salient by raw value, ties to
    /// the lower index.
    pub fn ranking(&self) -> Vec<usize> {
        rank_descending(&self.saliency)
    }

    /// Position with the largest absolute score (lowest index on ties).
    pub fn argmax_abs(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.saliency.iter().enumerate() {
            if v.abs() > self.saliency[best].abs() {
                best = i;
            }
        }
        best
    }
}

/// Indices ordered by descending value; equal values keep ascending index
/// order. NaN sorts last.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let (va, vb) = (values[a], values[b]);
        match (va.is_nan(), vb.is_nan()) {
            (true, true) => a.cmp(&b),
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ => vb.partial_cmp(&va).unwrap().then(a.cmp(&b)),
        }
    });
    idx
}
