//! Text helpers shared by canonicalization, keyword matching, alias keys and
//! shingling.
//!
//! Keyword matching works on *tokens*: maximal runs of alphanumeric
//! characters, lowercased. A phrase matches when its tokens appear
//! consecutively inside a single sentence. Sentence boundaries are `;`, `!`,
//! `?`, line breaks, and `.` when followed by whitespace or end of text, so
//! "ATLAS.ti" stays one sentence while "Hospice. Agency" does not.

use unicode_normalization::UnicodeNormalization;

/// NFKC normalization.
pub fn nfkc(s: &str) -> String {
    s.nfkc().collect()
}

/// Trim and collapse every whitespace run to a single ASCII space.
pub fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Lookup key for skill aliases: lowercased, punctuation stripped,
/// whitespace collapsed. Hyphens, slashes and underscores separate words;
/// every other punctuation mark is removed, so "C.B.T." and "cbt" share a key.
pub fn lookup_key(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.nfkc().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
        } else if c.is_whitespace() || matches!(c, '-' | '/' | '_' | '\u{2010}'..='\u{2015}') {
            out.push(' ');
        }
    }
    collapse_whitespace(&out)
}

/// Upper-case the first character of every space-separated word. Characters
/// whose case mapping does not round-trip (such as `ß`) are left alone, so
/// `lookup_key(title_case(k)) == k` for any lookup key `k`.
pub fn title_case(s: &str) -> String {
    fn upper(c: char) -> Option<char> {
        let mut up = c.to_uppercase();
        let u = up.next()?;
        let single = up.next().is_none();
        let mut back = u.to_lowercase();
        (single && back.next() == Some(c) && back.next().is_none()).then_some(u)
    }
    s.split(' ')
        .map(|w| {
            let mut chars = w.chars();
            match chars.next() {
                Some(first) => {
                    let mut out = String::with_capacity(w.len());
                    out.push(upper(first).unwrap_or(first));
                    out.extend(chars);
                    out
                }
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub norm: String,
    /// Byte offsets into the source text.
    pub start: usize,
    pub end: usize,
    pub sentence: usize,
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut sentence = 0usize;
    let mut current: Option<(usize, String)> = None;
    let mut iter = text.char_indices().peekable();

    while let Some((idx, c)) = iter.next() {
        if c.is_alphanumeric() {
            match current.as_mut() {
                Some((_, buf)) => buf.extend(c.to_lowercase()),
                None => current = Some((idx, c.to_lowercase().collect())),
            }
            continue;
        }
        if let Some((start, norm)) = current.take() {
            tokens.push(Token { norm, start, end: idx, sentence });
        }
        let boundary = match c {
            ';' | '!' | '?' | '\n' | '\r' => true,
            '.' => iter.peek().is_none_or(|(_, next)| next.is_whitespace()),
            _ => false,
        };
        if boundary {
            sentence += 1;
        }
    }
    if let Some((start, norm)) = current.take() {
        tokens.push(Token { norm, start, end: text.len(), sentence });
    }
    tokens
}

/// A keyword phrase in token form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phrase {
    tokens: Vec<String>,
}

impl Phrase {
    pub fn new(text: &str) -> Self {
        Self { tokens: tokenize(text).into_iter().map(|t| t.norm).collect() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Start indices (into `tokens`) of every sentence-local occurrence.
    pub fn find_all(&self, tokens: &[Token]) -> Vec<usize> {
        let n = self.tokens.len();
        if n == 0 || tokens.len() < n {
            return Vec::new();
        }
        (0..=tokens.len() - n)
            .filter(|&i| {
                let window = &tokens[i..i + n];
                window.iter().all(|t| t.sentence == window[0].sentence)
                    && window.iter().zip(&self.tokens).all(|(t, p)| &t.norm == p)
            })
            .collect()
    }

    pub fn occurs_in(&self, tokens: &[Token]) -> bool {
        !self.find_all(tokens).is_empty()
    }
}

/// Word tokens of `text` (lowercased, punctuation dropped), ignoring sentences.
pub fn words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.norm).collect()
}
