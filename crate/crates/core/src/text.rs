//! Shared word tokenizer.
//!
//! Ingredient normalization, mention extraction and the step generator all
//! tokenize through here so that ingredient names line up token-for-token
//! across modules.

use std::ops::Range;

/// A lowercase token together with the byte range it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: Range<usize>,
}

fn is_edge_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Splits on whitespace, then peels leading and trailing punctuation off each
/// chunk as single-character tokens. Interior punctuation (`all-purpose`,
/// `1/2`, `baker's`) stays inside the word.
pub fn tokenize_with_spans(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut chunk_start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        if c.is_whitespace() {
            if let Some(start) = chunk_start.take() {
                split_chunk(text, start, i, &mut out);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    out
}

fn split_chunk(text: &str, start: usize, end: usize, out: &mut Vec<Token>) {
    let chunk = &text[start..end];
    let chars: Vec<(usize, char)> = chunk.char_indices().collect();
    let mut lo = 0;
    let mut hi = chars.len();
    let mut tail = Vec::new();
    while lo < hi && is_edge_punct(chars[lo].1) {
        let (off, c) = chars[lo];
        push(out, c.to_string(), start + off..start + off + c.len_utf8());
        lo += 1;
    }
    while hi > lo && is_edge_punct(chars[hi - 1].1) {
        let (off, c) = chars[hi - 1];
        tail.push(Token { text: c.to_string(), span: start + off..start + off + c.len_utf8() });
        hi -= 1;
    }
    if lo < hi {
        let from = chars[lo].0;
        let to = if hi < chars.len() { chars[hi].0 } else { chunk.len() };
        push(out, chunk[from..to].to_lowercase(), start + from..start + to);
    }
    out.extend(tail.into_iter().rev());
}

fn push(out: &mut Vec<Token>, text: String, span: Range<usize>) {
    out.push(Token { text, span });
}

/// Lowercase tokens without spans.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_spans(text).into_iter().map(|t| t.text).collect()
}

/// Whether a token is a lone punctuation mark.
pub fn is_punct(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if is_edge_punct(c))
}

/// Joins tokens with single spaces, which keeps `tokenize(detokenize(t)) == t`
/// for tokenizer output.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ")
}
