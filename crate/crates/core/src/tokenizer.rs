//! Tokenizer interface used to map prompt text onto token positions.
//!
//! Layout construction only needs token ids together with the byte range each
//! token covers in the input text. Two local tokenizers are provided: a
//! whitespace tokenizer with hashed ids (the toy backend's vocabulary) and a
//! fixed-width chunk tokenizer that deliberately ignores word boundaries.

use std::fmt;

/// One token with the byte range it covers in the tokenized text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

pub trait Tokenizer: Send + Sync + fmt::Debug {
    /// Tokenize `text`. Offsets are byte offsets into `text`, non-decreasing
    /// and non-overlapping.
    fn tokenize(&self, text: &str) -> Vec<Token>;

    /// Whether token ids produced here are meaningful to an external model.
    /// Local toy tokenizers return `true`; advisory tokenizers used only for
    /// span estimation return `false`.
    fn is_local(&self) -> bool {
        true
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Splits on Unicode whitespace; each word maps to `fnv1a(word) % vocab_size`.
#[derive(Debug, Clone)]
pub struct WhitespaceTokenizer {
    vocab_size: u32,
}

impl WhitespaceTokenizer {
    pub fn new(vocab_size: u32) -> Self {
        assert!(vocab_size > 0, "vocab_size must be positive");
        Self { vocab_size }
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    fn id_of(&self, word: &str) -> u32 {
        (fnv1a(word.as_bytes()) % u64::from(self.vocab_size)) as u32
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut tokens = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (true, Some(s)) => {
                    tokens.push(Token {
                        id: self.id_of(&text[s..i]),
                        start: s,
                        end: i,
                    });
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            tokens.push(Token {
                id: self.id_of(&text[s..]),
                start: s,
                end: text.len(),
            });
        }
        tokens
    }
}

/// Cuts text into runs of `width` characters regardless of content, so tokens
/// routinely straddle segment boundaries. Useful for exercising span
/// assignment the way subword tokenizers merge across separators.
#[derive(Debug, Clone)]
pub struct ChunkTokenizer {
    width: usize,
    vocab_size: u32,
}

impl ChunkTokenizer {
    pub fn new(width: usize, vocab_size: u32) -> Self {
        assert!(width > 0 && vocab_size > 0);
        Self { width, vocab_size }
    }
}

impl Tokenizer for ChunkTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let bounds: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .step_by(self.width)
            .chain(std::iter::once(text.len()))
            .collect();
        bounds
            .windows(2)
            .filter(|w| w[0] < w[1])
            .map(|w| Token {
                id: (fnv1a(&text.as_bytes()[w[0]..w[1]]) % u64::from(self.vocab_size)) as u32,
                start: w[0],
                end: w[1],
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_offsets() {
        let tok = WhitespaceTokenizer::new(100);
        let tokens = tok.tokenize("[1] cat  sat\nQuery: x");
        let words: Vec<&str> = tokens
            .iter()
            .map(|t| &"[1] cat  sat\nQuery: x"[t.start..t.end])
            .collect();
        assert_eq!(words, ["[1]", "cat", "sat", "Query:", "x"]);
        assert!(tokens.iter().all(|t| t.id < 100));
    }

    #[test]
    fn whitespace_same_word_same_id() {
        let tok = WhitespaceTokenizer::new(1 << 16);
        let t = tok.tokenize("cat dog cat");
        assert_eq!(t[0].id, t[2].id);
    }

    #[test]
    fn chunks_cover_text() {
        let tok = ChunkTokenizer::new(3, 50);
        let text = "abcdefgh";
        let tokens = tok.tokenize(text);
        assert_eq!(tokens.len(), 3);
        assert_eq!(tokens.last().unwrap().end, text.len());
        assert!(tok.tokenize("").is_empty());
    }

    #[test]
    fn fnv_known_value() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
