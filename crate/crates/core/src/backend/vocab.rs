// SPDX-License-Identifier: MIT OR Apache-2.0

//! Word-level tokenizer for the toy backend.
//!
//! Id 0 is the space token. Ids `1..` name the words of a fixed lexicon,
//! each stored with a leading space the way byte-level BPE vocabularies
//! store continuation words. Ids past the end of the lexicon decode to
//! `<tN>`. A word missing from the lexicon is hashed onto a non-space id
//! so any text can be fed to the model.

use crate::error::{Error, Result};
use crate::types::{TokenId, TokenSequence};

pub const SPACE: TokenId = 0;

const LEXICON: &[&str] = &[
    ".",
    ",",
    "!",
    "?",
    "'",
    "the",
    "a",
    "an",
    "and",
    "or",
    "but",
    "of",
    "to",
    "in",
    "on",
    "at",
    "for",
    "with",
    "from",
    "by",
    "about",
    "is",
    "are",
    "was",
    "were",
    "be",
    "been",
    "has",
    "have",
    "had",
    "do",
    "does",
    "did",
    "not",
    "no",
    "this",
    "that",
    "these",
    "those",
    "it",
    "he",
    "she",
    "they",
    "we",
    "you",
    "i",
    "him",
    "her",
    "them",
    "us",
    "me",
    "my",
    "his",
    "their",
    "our",
    "your",
    "who",
    "what",
    "which",
    "there",
    "here",
    "positive",
    "negative",
    "good",
    "great",
    "happy",
    "love",
    "wonderful",
    "excellent",
    "nice",
    "kind",
    "beautiful",
    "best",
    "bad",
    "terrible",
    "sad",
    "hate",
    "awful",
    "horrible",
    "worst",
    "angry",
    "ugly",
    "stupid",
    "idiot",
    "dumb",
    "jerk",
    "damn",
    "trash",
    "driver",
    "drivers",
    "guy",
    "guys",
    "dog",
    "dogs",
    "cat",
    "cats",
    "man",
    "men",
    "woman",
    "women",
    "child",
    "children",
    "person",
    "people",
    "doctor",
    "doctors",
    "teacher",
    "teachers",
    "student",
    "students",
    "book",
    "books",
    "car",
    "cars",
    "house",
    "houses",
    "city",
    "cities",
    "friend",
    "friends",
    "joel",
    "mary",
    "john",
    "sarah",
    "complains",
    "complain",
    "likes",
    "like",
    "sees",
    "see",
    "saw",
    "says",
    "said",
    "thinks",
    "think",
    "knows",
    "know",
    "wants",
    "want",
    "goes",
    "go",
    "went",
    "comes",
    "come",
    "came",
    "makes",
    "make",
    "made",
    "takes",
    "take",
    "took",
    "gets",
    "get",
    "got",
    "finds",
    "find",
    "found",
    "gives",
    "give",
    "gave",
    "tells",
    "tell",
    "told",
    "works",
    "work",
    "worked",
    "calls",
    "call",
    "called",
    "tries",
    "try",
    "tried",
    "leaves",
    "leave",
    "left",
    "feels",
    "feel",
    "felt",
    "very",
    "really",
    "so",
    "too",
    "also",
    "just",
    "only",
    "still",
    "never",
    "always",
    "often",
    "some",
    "many",
    "much",
    "more",
    "most",
    "every",
    "all",
    "each",
    "few",
    "one",
    "two",
    "three",
    "first",
    "last",
    "new",
    "old",
    "big",
    "small",
    "long",
    "little",
    "day",
    "days",
    "time",
    "times",
    "year",
    "years",
    "world",
    "life",
    "way",
    "thing",
    "things",
    "home",
    "school",
    "work",
    "money",
    "food",
    "water",
    "music",
    "movie",
    "story",
    "game",
    "today",
    "tomorrow",
    "yesterday",
    "now",
    "then",
    "when",
    "where",
    "why",
    "how",
    "if",
    "because",
    "while",
    "after",
    "before",
    "up",
    "down",
    "out",
    "over",
    "again",
    "can",
    "could",
    "will",
    "would",
    "should",
    "must",
    "may",
    "might",
];

/// Text of the vocabulary entry for `id`.
pub fn token_text(id: TokenId) -> String {
    let id = id as usize;
    if id == 0 {
        return " ".to_owned();
    }
    match LEXICON.get(id - 1) {
        Some(w) if is_punct(w) => (*w).to_owned(),
        Some(w) => format!(" {w}"),
        None => format!("<t{id}>"),
    }
}

fn is_punct(w: &str) -> bool {
    w.chars().all(|c| !c.is_alphanumeric())
}

/// Exact lexicon lookup of a vocabulary piece (`" word"` or punctuation).
pub fn lookup(piece: &str, vocab_size: usize) -> Option<TokenId> {
    if piece == " " {
        return Some(SPACE);
    }
    let word = if is_punct(piece) {
        piece
    } else {
        piece.strip_prefix(' ')?
    };
    LEXICON
        .iter()
        .position(|w| *w == word)
        .map(|i| i + 1)
        .filter(|&id| id < vocab_size)
        .map(|id| id as TokenId)
}

/// Splits `text` into word and punctuation pieces and maps each to an id.
pub fn tokenize(text: &str, vocab_size: usize) -> Result<TokenSequence> {
    let mut ids = Vec::new();
    let mut texts = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, ids: &mut Vec<TokenId>, texts: &mut Vec<String>| {
        if !word.is_empty() {
            ids.push(word_id(word, vocab_size));
            texts.push(format!(" {word}"));
            word.clear();
        }
    };
    for c in text.chars() {
        if c.is_alphanumeric() || (c == '\'' && !word.is_empty()) {
            word.push(c);
        } else {
            flush(&mut word, &mut ids, &mut texts);
            if !c.is_whitespace() {
                let piece = c.to_string();
                ids.push(word_id(&piece, vocab_size));
                texts.push(piece);
            }
        }
    }
    flush(&mut word, &mut ids, &mut texts);
    if ids.is_empty() && !text.is_empty() && text.chars().all(char::is_whitespace) {
        ids.push(SPACE);
        texts.push(" ".to_owned());
    }
    if ids.is_empty() {
        return Err(Error::InvalidTokens(format!("{text:?} has no tokens")));
    }
    TokenSequence::with_texts(ids, texts)
}

fn word_id(word: &str, vocab_size: usize) -> TokenId {
    let lower = word.to_lowercase();
    let piece = if is_punct(&lower) {
        lower.clone()
    } else {
        format!(" {lower}")
    };
    lookup(&piece, vocab_size).unwrap_or_else(|| {
        let h = fnv1a(lower.as_bytes());
        (1 + h % (vocab_size as u64 - 1)) as TokenId
    })
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_is_reserved() {
        let seq = tokenize(" ", 256).unwrap();
        assert_eq!(seq.ids(), &[SPACE]);
        assert_eq!(token_text(SPACE), " ");
    }

    #[test]
    fn known_words_round_trip() {
        let seq = tokenize("Joel complains about those drivers.", 256).unwrap();
        assert_eq!(seq.len(), 6);
        for (&id, text) in seq.ids().iter().zip(seq.texts().unwrap()) {
            assert_eq!(token_text(id).to_lowercase(), text.to_lowercase());
        }
        assert_eq!(lookup(" positive", 256), Some(seq_id(" positive")));
    }

    fn seq_id(piece: &str) -> TokenId {
        tokenize(piece, 256).unwrap().ids()[0]
    }

    #[test]
    fn unknown_words_hash_to_non_space_ids() {
        for v in [8usize, 64, 256] {
            let seq = tokenize("zyzzyva quux", v).unwrap();
            assert!(seq.ids().iter().all(|&id| id != SPACE && (id as usize) < v));
            assert_eq!(lookup(" zyzzyva", v), None);
        }
    }

    #[test]
    fn small_vocab_truncates_lexicon() {
        assert!(lookup(" positive", 16).is_none());
        assert!(lookup(".", 16).is_some());
    }

    #[test]
    fn empty_text_has_no_tokens() {
        assert!(tokenize("", 64).is_err());
    }
}
