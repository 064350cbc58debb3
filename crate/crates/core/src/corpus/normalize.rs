//! Ingredient-line normalization: lowercase, drop brand tokens, strip the
//! leading amount ("2 cups", "1/2", "a pinch of").

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text;

const DEFAULT_UNITS: &str = include_str!("../../data/units.txt");
const DEFAULT_QUANTITIES: &str = include_str!("../../data/quantities.txt");
const DEFAULT_BRANDS: &str = include_str!("../../data/brands.txt");

/// Word lists driving [`normalize_ingredient`].
#[derive(Debug, Clone)]
pub struct Lexicon {
    units: HashSet<String>,
    quantity_words: HashSet<String>,
    brands: HashSet<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self {
            units: parse_word_list(DEFAULT_UNITS),
            quantity_words: parse_word_list(DEFAULT_QUANTITIES),
            brands: parse_word_list(DEFAULT_BRANDS),
        }
    }
}

/// One entry per line; blank lines and `#` comments skipped; lowercased.
pub fn parse_word_list(contents: &str) -> HashSet<String> {
    contents
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Lexicon {
    pub fn new(units: HashSet<String>, quantity_words: HashSet<String>, brands: HashSet<String>) -> Self {
        Self { units, quantity_words, brands }
    }

    /// Loads `units.txt`, `quantities.txt` and `brands.txt` from `dir`,
    /// falling back to the bundled list for any file that is missing.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut lex = Self::default();
        let load = |name: &str| -> Result<Option<HashSet<String>>> {
            let p = dir.join(name);
            if p.exists() {
                Ok(Some(parse_word_list(&read_to_string(&p)?)))
            } else {
                Ok(None)
            }
        };
        if let Some(u) = load("units.txt")? {
            lex.units = u;
        }
        if let Some(q) = load("quantities.txt")? {
            lex.quantity_words = q;
        }
        if let Some(b) = load("brands.txt")? {
            lex.brands = b;
        }
        Ok(lex)
    }

    fn is_quantity(&self, tok: &str) -> bool {
        if self.quantity_words.contains(tok) {
            return true;
        }
        // digits, decimals, fractions, ranges: "2", "1.5", "1/2", "2-3", "½"
        tok.chars().any(|c| c.is_ascii_digit() || is_vulgar_fraction(c))
            && tok.chars().all(|c| c.is_ascii_digit() || is_vulgar_fraction(c) || "./-".contains(c))
    }

    fn is_unit(&self, tok: &str) -> bool {
        self.units.contains(tok)
    }
}

fn is_vulgar_fraction(c: char) -> bool {
    ('\u{00BC}'..='\u{00BE}').contains(&c) || ('\u{2150}'..='\u{215E}').contains(&c)
}

/// Canonical token sequence for a raw ingredient line. An empty result means
/// the line should be dropped.
pub fn normalize_ingredient(raw: &str, lex: &Lexicon) -> Vec<String> {
    let tokens: Vec<String> = text::tokenize(raw)
        .into_iter()
        .filter(|t| !text::is_punct(t))
        .filter(|t| !lex.brands.contains(t))
        .collect();
    let mut start = 0;
    while start < tokens.len() && (lex.is_quantity(&tokens[start]) || lex.is_unit(&tokens[start])) {
        start += 1;
    }
    tokens[start..].to_vec()
}
