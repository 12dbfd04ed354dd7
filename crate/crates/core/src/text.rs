//! Tokenization and the token / character vocabularies.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{CoreError, Result};

pub const UNK: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub text: String,
    pub chars: Vec<char>,
}

/// Lowercases, splits on whitespace, and decomposes each segment into
/// unicode scalar values.
pub fn tokenize(query: &str) -> Result<Vec<Segment>> {
    let segments: Vec<Segment> = query
        .split_whitespace()
        .map(|w| {
            let text = w.to_lowercase();
            let chars = text.chars().collect();
            Segment { text, chars }
        })
        .collect();
    if segments.is_empty() {
        return Err(CoreError::EmptyQuery);
    }
    Ok(segments)
}

/// Token vocabulary (line number = id, id 0 is `<unk>`) plus a character
/// vocabulary derived from it (id 0 is the unknown character).
#[derive(Clone, Debug)]
pub struct Vocab {
    tokens: Vec<String>,
    token_ids: HashMap<String, u32>,
    chars: Vec<char>,
    char_ids: HashMap<char, u32>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(CoreError::Data(format!("vocab must start with {UNK}")));
        }
        let mut token_ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) || *t != t.to_lowercase() {
                return Err(CoreError::Data(format!("vocab line {}: bad token {t:?}", i + 1)));
            }
            if token_ids.insert(t.clone(), i as u32).is_some() {
                return Err(CoreError::Data(format!("vocab line {}: duplicate token {t:?}", i + 1)));
            }
        }
        let mut chars: Vec<char> = tokens[1..].iter().flat_map(|t| t.chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        // id 0 is reserved for unknown characters
        chars.insert(0, '\0');
        let char_ids = chars.iter().enumerate().skip(1).map(|(i, c)| (*c, i as u32)).collect();
        Ok(Self {
            tokens,
            token_ids,
            chars,
            char_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    /// Number of character ids, including the unknown id 0.
    pub fn n_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token id, or 0 when unknown.
    pub fn id(&self, token: &str) -> u32 {
        self.token_ids.get(token).copied().unwrap_or(0)
    }

    pub fn char_id(&self, c: char) -> u32 {
        self.char_ids.get(&c).copied().unwrap_or(0)
    }

    pub fn text(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        std::fs::write(path, s).map_err(CoreError::file(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(CoreError::file(path))?;
        Self::new(s.lines().map(str::to_owned).collect())
    }
}

/// FNV-1a over the two characters; stable across platforms and releases.
pub fn bigram_bucket(a: char, b: char, buckets: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in (a as u32).to_le_bytes().into_iter().chain((b as u32).to_le_bytes()) {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    (h % buckets as u64) as usize
}

/// Table rows a query reads, resolved once per query.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct QueryFeatures {
    /// Token-table rows, one per segment.
    pub segments: Vec<usize>,
    /// Character-table rows over all segments.
    pub chars: Vec<usize>,
    /// Bigram-table rows for adjacent character pairs.
    pub bigrams: Vec<usize>,
    /// Character-table rows standing in for the bigram of one-character segments.
    pub bigram_unigrams: Vec<usize>,
}

impl QueryFeatures {
    pub fn from_segments(segments: &[Segment], vocab: &Vocab, buckets: usize) -> Self {
        let mut f = QueryFeatures::default();
        for s in segments {
            f.segments.push(vocab.id(&s.text) as usize);
            f.chars.extend(s.chars.iter().map(|&c| vocab.char_id(c) as usize));
            if s.chars.len() == 1 {
                f.bigram_unigrams.push(vocab.char_id(s.chars[0]) as usize);
            } else {
                f.bigrams
                    .extend(s.chars.windows(2).map(|w| bigram_bucket(w[0], w[1], buckets)));
            }
        }
        f
    }

    pub fn from_text(query: &str, vocab: &Vocab, buckets: usize) -> Result<Self> {
        Ok(Self::from_segments(&tokenize(query)?, vocab, buckets))
    }

    pub fn from_tokens(tokens: &[u32], vocab: &Vocab, buckets: usize) -> Result<Self> {
        Self::from_text(&vocab.text(tokens), vocab, buckets)
    }

    pub fn n_bigrams(&self) -> usize {
        self.bigrams.len() + self.bigram_unigrams.len()
    }
}
