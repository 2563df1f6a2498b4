// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt steering by replacing the tokens saliency blames for an
//! unwanted continuation.
//!
//! * [`suppress_toxicity`] contrasts a toxic word list against the rest of
//!   the vocabulary, blanks the top fraction of triggers with the space
//!   token, and generates from the edited prompt.
//! * [`steer_sentiment`] contrasts one sentiment list against the other and
//!   swaps the single strongest trigger for a key token (`"positive"` or
//!   `"negative"`).
//!
//! [`dist_n`] scores the diversity of the resulting generations.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, Sampling};
use crate::engine::tdd;
use crate::error::{Error, Result};
use crate::eval::{perturbation_count, resolve_word};
use crate::types::{
    rank_descending, ContrastiveSpec, SaliencyResult, TokenId, TokenSequence, Variant,
};

// ---------------------------------------------------------------------------
// Word lists
// ---------------------------------------------------------------------------

/// A set of words and the vocabulary ids they resolved to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordList {
    words: BTreeSet<String>,
    resolved_ids: BTreeSet<TokenId>,
    /// Words with no usable id.
    dropped: Vec<String>,
    /// Words that split into several subwords; their first id was kept.
    split: Vec<String>,
}

impl WordList {
    pub fn new(words: impl IntoIterator<Item = impl Into<String>>) -> Result<Self> {
        let words: BTreeSet<String> = words
            .into_iter()
            .map(Into::into)
            .map(|w: String| w.trim().to_owned())
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            return Err(Error::Config("word list is empty".into()));
        }
        Ok(Self {
            words,
            resolved_ids: BTreeSet::new(),
            dropped: Vec::new(),
            split: Vec::new(),
        })
    }

    /// One word per line; blank lines and lines starting with `#` are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Maps every word to an id in continuation position.
    pub fn resolve<B: Backend + ?Sized>(mut self, backend: &B) -> Result<Self> {
        self.resolved_ids.clear();
        self.dropped.clear();
        self.split.clear();
        for w in &self.words {
            match resolve_word(backend, w)? {
                Some(r) => {
                    self.resolved_ids.insert(r.id);
                    if r.split {
                        self.split.push(w.clone());
                    }
                }
                None => self.dropped.push(w.clone()),
            }
        }
        if !self.dropped.is_empty() {
            log::warn!(
                "dropped {} unresolvable words: {:?}",
                self.dropped.len(),
                self.dropped
            );
        }
        Ok(self)
    }

    pub fn words(&self) -> &BTreeSet<String> {
        &self.words
    }

    pub fn resolved_ids(&self) -> &BTreeSet<TokenId> {
        &self.resolved_ids
    }

    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn split(&self) -> &[String] {
        &self.split
    }

    fn require_ids(&self, what: &str) -> Result<()> {
        if self.resolved_ids.is_empty() {
            return Err(Error::Config(format!(
                "{what} word list resolved to no token ids"
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Trigger selection
// ---------------------------------------------------------------------------

/// The `max(ceil(fraction · n), min_k)` positions with the highest saliency
/// (ties to the lower index), returned in ascending order.
pub fn find_triggers(saliency: &[f64], fraction: f64, min_k: usize) -> Vec<usize> {
    let n = saliency.len();
    let k = perturbation_count(fraction.clamp(0.0, 1.0), n)
        .max(min_k)
        .min(n);
    let mut picked: Vec<usize> = rank_descending(saliency).into_iter().take(k).collect();
    picked.sort_unstable();
    picked
}

// ---------------------------------------------------------------------------
// Outcomes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringOutcome {
    #[serde(rename = "original")]
    pub original_prompt: TokenSequence,
    #[serde(rename = "modified")]
    pub modified_prompt: TokenSequence,
    pub replaced_positions: Vec<usize>,
    /// Newly generated tokens only.
    pub continuation: TokenSequence,
    pub saliency: Vec<f64>,
    /// Set when the replacement token is the first subword of a longer
    /// encoding.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub replacement_split: bool,
}

fn check_generation<B: Backend + ?Sized>(backend: &B) -> Result<()> {
    if !backend.descriptor().capabilities.generate {
        return Err(Error::UnsupportedCapability("generation"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish<B: Backend + ?Sized>(
    backend: &B,
    prompt: &TokenSequence,
    modified: TokenSequence,
    replaced_positions: Vec<usize>,
    saliency: SaliencyResult,
    max_new: usize,
    sampling: &Sampling,
    replacement_split: bool,
) -> Result<SteeringOutcome> {
    let full = backend.generate(&modified, max_new, sampling)?;
    let continuation = full.slice(modified.len(), full.len())?;
    Ok(SteeringOutcome {
        original_prompt: prompt.clone(),
        modified_prompt: modified,
        replaced_positions,
        continuation,
        saliency: saliency.saliency,
        replacement_split,
    })
}

// ---------------------------------------------------------------------------
// Toxicity suppression
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressConfig {
    /// Fraction of prompt tokens treated as triggers.
    pub fraction: f64,
    /// Lower bound on the number of triggers.
    pub min_k: usize,
    pub max_new: usize,
    pub variant: Variant,
    /// Contrast toxic words against every other token; otherwise the
    /// toxic words are scored on their own (target-only).
    pub complement_alternatives: bool,
    pub sampling: Sampling,
}

impl Default for SuppressConfig {
    fn default() -> Self {
        Self {
            fraction: 0.15,
            min_k: 1,
            max_new: 20,
            variant: Variant::Bidirectional,
            complement_alternatives: true,
            sampling: Sampling::default(),
        }
    }
}

/// Spec used to score toxic triggers.
pub fn toxicity_spec(toxic: &WordList, complement_alternatives: bool) -> Result<ContrastiveSpec> {
    toxic.require_ids("toxic")?;
    let ids = toxic.resolved_ids.iter().copied();
    if complement_alternatives {
        ContrastiveSpec::against_rest(ids)
    } else {
        ContrastiveSpec::target_only(ids)
    }
}

/// Blanks the most toxicity-inducing prompt tokens, then generates.
///
/// `toxic` must already be resolved against `backend`.
pub fn suppress_toxicity<B: Backend + ?Sized>(
    backend: &B,
    prompt: &TokenSequence,
    toxic: &WordList,
    config: &SuppressConfig,
) -> Result<SteeringOutcome> {
    let spec = toxicity_spec(toxic, config.complement_alternatives)?;
    check_generation(backend)?;
    prompt.validate(backend.vocab_size())?;
    let saliency = tdd(backend, prompt, &spec, config.variant)?;
    let triggers = find_triggers(&saliency.saliency, config.fraction, config.min_k);
    let space = backend.space_token()?;
    let mut modified = prompt.clone();
    for &p in &triggers {
        modified = modified.replaced(p, space, Some(" "));
    }
    finish(
        backend,
        prompt,
        modified,
        triggers,
        saliency,
        config.max_new,
        &config.sampling,
        false,
    )
}

// ---------------------------------------------------------------------------
// Sentiment steering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    Negative,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Direction::Positive),
            "negative" => Ok(Direction::Negative),
            other => Err(Error::Config(format!(
                "direction must be positive or negative, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerConfig {
    pub max_new: usize,
    pub variant: Variant,
    pub positive_key: String,
    pub negative_key: String,
    pub sampling: Sampling,
}

impl Default for SteerConfig {
    fn default() -> Self {
        Self {
            max_new: 20,
            variant: Variant::Bidirectional,
            positive_key: "positive".into(),
            negative_key: "negative".into(),
            sampling: Sampling::default(),
        }
    }
}

/// Id of a key token in continuation position. A key that encodes to
/// several subwords yields its first id with `split = true`; a key the
/// vocabulary does not know is a configuration error.
pub fn resolve_key_token<B: Backend + ?Sized>(backend: &B, key: &str) -> Result<(TokenId, bool)> {
    let piece = format!(" {}", key.trim());
    if let Some(id) = backend.vocab_lookup(&piece)? {
        return Ok((id, false));
    }
    let not_found = || Error::Config(format!("key token {key:?} is not in the vocabulary"));
    let seq = match backend.tokenize(&piece) {
        Ok(seq) => seq,
        Err(Error::InvalidTokens(_)) => return Err(not_found()),
        Err(e) => return Err(e),
    };
    if seq.len() < 2 {
        return Err(not_found());
    }
    if let Some(texts) = seq.texts() {
        if texts.concat().trim() != key.trim() {
            return Err(not_found());
        }
    }
    Ok((seq.ids()[0], true))
}

/// Spec for steering towards `direction`: the opposite sentiment is the
/// target, the desired one the alternative.
pub fn sentiment_spec(
    direction: Direction,
    positive: &WordList,
    negative: &WordList,
) -> Result<ContrastiveSpec> {
    positive.require_ids("positive")?;
    negative.require_ids("negative")?;
    let (targets, alternatives) = match direction {
        Direction::Positive => (negative, positive),
        Direction::Negative => (positive, negative),
    };
    ContrastiveSpec::new(
        targets.resolved_ids.iter().copied(),
        alternatives.resolved_ids.iter().copied(),
    )
}

/// Replaces the strongest sentiment trigger with the key token for
/// `direction`, then generates.
pub fn steer_sentiment<B: Backend + ?Sized>(
    backend: &B,
    prompt: &TokenSequence,
    direction: Direction,
    positive: &WordList,
    negative: &WordList,
    config: &SteerConfig,
) -> Result<SteeringOutcome> {
    let spec = sentiment_spec(direction, positive, negative)?;
    check_generation(backend)?;
    prompt.validate(backend.vocab_size())?;
    let key = match direction {
        Direction::Positive => &config.positive_key,
        Direction::Negative => &config.negative_key,
    };
    let (key_id, split) = resolve_key_token(backend, key)?;
    let saliency = tdd(backend, prompt, &spec, config.variant)?;
    let triggers = find_triggers(&saliency.saliency, 0.0, 1);
    let key_text = format!(" {}", key.trim());
    let modified = prompt.replaced(triggers[0], key_id, Some(&key_text));
    finish(
        backend,
        prompt,
        modified,
        triggers,
        saliency,
        config.max_new,
        &config.sampling,
        split,
    )
}

// ---------------------------------------------------------------------------
// Diversity
// ---------------------------------------------------------------------------

/// Mean over generations of unique n-grams divided by total n-grams.
/// Generations shorter than `n` are left out of the mean.
pub fn dist_n(corpus: &[Vec<TokenId>], n: usize) -> Result<f64> {
    if !(1..=3).contains(&n) {
        return Err(Error::Config(format!(
            "dist-n is defined for n in 1..=3, got {n}"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::Config("empty corpus".into()));
    }
    let ratios: Vec<f64> = corpus
        .iter()
        .filter(|g| g.len() >= n)
        .map(|g| {
            let grams: Vec<&[TokenId]> = g.windows(n).collect();
            let unique: HashSet<&[TokenId]> = grams.iter().copied().collect();
            unique.len() as f64 / grams.len() as f64
        })
        .collect();
    if ratios.is_empty() {
        return Err(Error::Config(format!("no generation has {n} tokens")));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CountingBackend, ToyBackend, ToyConfig};

    #[test]
    fn trigger_selection() {
        assert_eq!(find_triggers(&[0.1, 0.9, 0.3], 0.15, 1), vec![1]);
        assert_eq!(find_triggers(&[0.1, 0.9, 0.3], 1.0, 1), vec![0, 1, 2]);
        assert_eq!(find_triggers(&[0.5, 0.5], 0.0, 1), vec![0]);
        assert_eq!(find_triggers(&[0.3; 10], 0.15, 1).len(), 2);
        assert!(find_triggers(&[0.3; 10], 0.0, 0).is_empty());
        assert_eq!(find_triggers(&[0.2, 0.1, 0.9, 0.8], 0.5, 1), vec![2, 3]);
    }

    #[test]
    fn dist_n_by_hand() {
        assert_eq!(dist_n(&[vec![1, 2, 1, 2]], 1).unwrap(), 0.5);
        assert_eq!(dist_n(&[vec![1, 1, 1]], 2).unwrap(), 0.5);
        for n in 1..=3 {
            assert_eq!(dist_n(&[vec![1, 2, 3, 4, 5]], n).unwrap(), 1.0);
        }
        // the short generation is left out
        assert_eq!(dist_n(&[vec![1, 1, 1], vec![4]], 2).unwrap(), 0.5);
        assert!(dist_n(&[vec![1]], 2).is_err());
        assert!(dist_n(&[], 1).is_err());
        assert!(dist_n(&[vec![1]], 4).is_err());
    }

    #[test]
    fn word_list_parsing() {
        let wl = WordList::parse("# toxic\nstupid\n\n  idiot \n#x\nstupid\n").unwrap();
        assert_eq!(wl.words().len(), 2);
        assert!(WordList::parse("# nothing\n").is_err());
    }

    #[test]
    fn empty_resolution_fails_before_any_forward_pass() {
        struct NoWords(ToyBackend);
        impl Backend for NoWords {
            fn descriptor(&self) -> &crate::BackendDescriptor {
                self.0.descriptor()
            }
            fn logits(&self, t: &TokenSequence) -> Result<crate::backend::LogitMatrix> {
                self.0.logits(t)
            }
            fn generate(&self, t: &TokenSequence, n: usize, s: &Sampling) -> Result<TokenSequence> {
                self.0.generate(t, n, s)
            }
            fn tokenize(&self, text: &str) -> Result<TokenSequence> {
                if text.trim().is_empty() {
                    return self.0.tokenize(text);
                }
                Err(Error::InvalidTokens("unknown".into()))
            }
        }
        let backend = CountingBackend::new(NoWords(ToyBackend::new(ToyConfig::small(1)).unwrap()));
        let toxic = WordList::parse("stupid\n")
            .unwrap()
            .resolve(&backend)
            .unwrap();
        assert!(toxic.resolved_ids().is_empty());
        assert_eq!(toxic.dropped(), &["stupid".to_string()]);
        let prompt = TokenSequence::new(vec![1, 2, 3]).unwrap();
        let err = suppress_toxicity(&backend, &prompt, &toxic, &SuppressConfig::default());
        assert!(matches!(err, Err(Error::Config(_))));
        assert_eq!(backend.counts().forward(), 0);
        assert_eq!(backend.counts().generate, 0);
    }

    #[test]
    fn unknown_key_token_is_config_error() {
        let toy = ToyBackend::new(ToyConfig::default()).unwrap();
        let err = resolve_key_token(&toy, "zzqxv").unwrap_err();
        assert!(err.to_string().contains("zzqxv"));
        let (id, split) = resolve_key_token(&toy, "positive").unwrap();
        assert!(!split);
        assert_eq!(crate::backend::vocab::token_text(id), " positive");
    }
}
