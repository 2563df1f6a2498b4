// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSONL contrastive datasets.
//!
//! One object per line with a required `"prompt"` and either
//! `"target"`/`"alternative"` strings or `"targets"`/`"alternatives"`
//! arrays. Alternatives may be missing, which yields a target-only sample.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::types::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveSample {
    pub prompt: String,
    pub targets: Vec<String>,
    pub alternatives: Vec<String>,
}

/// A named list of samples. The name defaults to the file stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<ContrastiveSample>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let samples = parse_dataset(&text, &path.display().to_string())?;
    if samples.is_empty() {
        log::warn!("{}: dataset is empty", path.display());
    }
    Ok(Dataset { name, samples })
}

/// Parses JSONL text; `origin` names the source in error messages.
pub fn parse_dataset(text: &str, origin: &str) -> Result<Vec<ContrastiveSample>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            parse_line(line).map_err(|message| Error::Parse {
                path: origin.to_owned(),
                line: i + 1,
                message,
            })
        })
        .collect()
}

fn parse_line(line: &str) -> std::result::Result<ContrastiveSample, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let prompt = obj
        .get("prompt")
        .ok_or("missing field \"prompt\"")?
        .as_str()
        .ok_or("field \"prompt\" must be a string")?
        .to_owned();
    if prompt.trim().is_empty() {
        return Err("field \"prompt\" is empty".into());
    }
    let targets = words(obj, "target", "targets")?.ok_or("missing field \"target\"")?;
    if targets.is_empty() {
        return Err("field \"targets\" is empty".into());
    }
    let alternatives = words(obj, "alternative", "alternatives")?.unwrap_or_default();
    Ok(ContrastiveSample {
        prompt,
        targets,
        alternatives,
    })
}

fn words(
    obj: &serde_json::Map<String, Value>,
    single: &str,
    plural: &str,
) -> std::result::Result<Option<Vec<String>>, String> {
    if let Some(v) = obj.get(plural) {
        let arr = v
            .as_array()
            .ok_or_else(|| format!("field {plural:?} must be an array of strings"))?;
        return arr
            .iter()
            .map(|w| {
                w.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| format!("field {plural:?} must be an array of strings"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some);
    }
    match obj.get(single) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(vec![s.clone()])),
        Some(_) => Err(format!("field {single:?} must be a string")),
    }
}

/// A word mapped to a vocabulary id. `split` is set when the word encodes
/// to several subword tokens and only the first was kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedWord {
    pub id: TokenId,
    pub split: bool,
}

/// Encodes `word` in continuation position (leading space) and keeps the
/// first subword. `None` when the backend yields no usable id.
pub fn resolve_word<B: Backend + ?Sized>(backend: &B, word: &str) -> Result<Option<ResolvedWord>> {
    let word = word.trim();
    if word.is_empty() {
        return Ok(None);
    }
    match backend.tokenize(&format!(" {word}")) {
        Ok(seq) => Ok(Some(ResolvedWord {
            id: seq.ids()[0],
            split: seq.len() > 1,
        })),
        Err(Error::InvalidTokens(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_fields() {
        let s = parse_dataset(
            r#"{"prompt":"Joel complains about those","target":"drivers","alternative":"driver"}"#,
            "t",
        )
        .unwrap();
        assert_eq!(
            s,
            vec![ContrastiveSample {
                prompt: "Joel complains about those".into(),
                targets: vec!["drivers".into()],
                alternatives: vec!["driver".into()],
            }]
        );
    }

    #[test]
    fn plural_fields_and_missing_alternatives() {
        let s = parse_dataset(
            "{\"prompt\":\"x\",\"targets\":[\"a\",\"b\"],\"alternatives\":[\"c\"]}\n\n{\"prompt\":\"y\",\"target\":\"z\"}\n",
            "t",
        )
        .unwrap();
        assert_eq!(s[0].targets, vec!["a", "b"]);
        assert_eq!(s[0].alternatives, vec!["c"]);
        assert!(s[1].alternatives.is_empty());
    }

    #[test]
    fn errors_name_field_and_line() {
        let err = parse_dataset(
            "{\"prompt\":\"ok\",\"target\":\"a\"}\n{\"prompt\":\"x\"}",
            "data.jsonl",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("data.jsonl:2"), "{msg}");
        assert!(msg.contains("\"target\""), "{msg}");
        let err = parse_dataset("{\"target\":\"a\"}", "d")
            .unwrap_err()
            .to_string();
        assert!(err.contains("\"prompt\""));
        assert!(parse_dataset("not json", "d")
            .unwrap_err()
            .to_string()
            .contains("d:1"));
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.name, "empty");
        assert!(ds.samples.is_empty());
    }
}
