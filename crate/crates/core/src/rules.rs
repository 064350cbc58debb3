//! Substitution-rule baseline and the constraint safety checks: banned
//! ingredients in lists and in free-text directions, plus post-hoc filtering.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;

use serde::Serialize;

use crate::constraint::{ConstraintId, ConstraintSpec};
use crate::corpus::normalize::read_to_string;
use crate::corpus::{IngredientId, IngredientVocab, Recipe};
use crate::error::{Error, Result};
use crate::text::{self, Token};
use crate::trie::TokenTrie;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SubstitutionRule {
    pub constraint: ConstraintId,
    pub from_ingredient: IngredientId,
    /// `None` means the ingredient is removed.
    pub to_ingredient: Option<IngredientId>,
}

/// What to do with rule lines naming ingredients outside the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RulePolicy {
    #[default]
    Strict,
    SkipUnknown,
}

/// Parses `constraint<TAB>from<TAB>to` lines (empty `to` = removal).
/// Returns the rules plus a description of each skipped line.
pub fn parse_rules(
    contents: &str,
    path: &Path,
    vocab: &IngredientVocab,
    policy: RulePolicy,
) -> Result<(Vec<SubstitutionRule>, Vec<String>)> {
    let mut rules = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::parse(path, line_no, "expected `constraint<TAB>from<TAB>to`"));
        }
        let constraint: ConstraintId =
            fields[0].parse().map_err(|e: Error| Error::parse(path, line_no, e.to_string()))?;
        let to_name = fields.get(2).map(|s| s.trim()).unwrap_or("");
        let from = vocab.lookup(fields[1]);
        let to = if to_name.is_empty() { Some(None) } else { vocab.lookup(to_name).map(Some) };
        match (from, to) {
            (Some(from_ingredient), Some(to_ingredient)) => {
                if to_ingredient == Some(from_ingredient) {
                    return Err(Error::parse(path, line_no, "rule maps an ingredient to itself"));
                }
                rules.push(SubstitutionRule { constraint, from_ingredient, to_ingredient })
            }
            _ => {
                let unknown = if from.is_none() { fields[1] } else { to_name };
                match policy {
                    RulePolicy::Strict => {
                        return Err(Error::parse(path, line_no, format!("unknown ingredient `{unknown}`")))
                    }
                    RulePolicy::SkipUnknown => {
                        skipped.push(format!("{}:{line_no}: unknown ingredient `{unknown}`", path.display()))
                    }
                }
            }
        }
    }
    Ok((rules, skipped))
}

/// Strict loader: every name must resolve against `vocab`.
pub fn load_rules(path: &Path, vocab: &IngredientVocab) -> Result<Vec<SubstitutionRule>> {
    let contents = read_to_string(path)?;
    parse_rules(&contents, path, vocab, RulePolicy::Strict).map(|(r, _)| r)
}

/// An ingredient mention in a tokenized step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mention {
    /// Token index range.
    pub span: Range<usize>,
    /// Byte range in the step text.
    pub bytes: Range<usize>,
    pub ingredient: IngredientId,
}

/// Longest-match lookup over every canonical name and alias.
#[derive(Debug, Clone)]
pub struct MentionIndex {
    trie: TokenTrie<String, IngredientId>,
}

impl MentionIndex {
    pub fn new(vocab: &IngredientVocab) -> Self {
        let mut trie = TokenTrie::new();
        // canonical names first so they win over an alias with the same tokens
        for e in vocab.entries() {
            trie.insert(&e.canonical_name, e.id);
        }
        for (form, id) in vocab.surface_forms() {
            trie.insert(form, id);
        }
        Self { trie }
    }

    pub fn mentions_in_tokens(&self, tokens: &[Token]) -> Vec<Mention> {
        let words: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            match self.trie.longest_prefix_match(&words[i..]) {
                Some((len, &id)) => {
                    out.push(Mention {
                        span: i..i + len,
                        bytes: tokens[i].span.start..tokens[i + len - 1].span.end,
                        ingredient: id,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }

    pub fn mentions(&self, step: &str) -> Vec<Mention> {
        self.mentions_in_tokens(&text::tokenize_with_spans(step))
    }
}

/// Greedy left-to-right longest-match mentions in one step.
pub fn extract_mentions(step: &str, vocab: &IngredientVocab) -> Vec<Mention> {
    MentionIndex::new(vocab).mentions(step)
}

/// `ingredients ∩ banned`; empty for soft constraints.
pub fn check_ingredient_list(
    ingredients: &BTreeSet<IngredientId>,
    spec: &ConstraintSpec,
) -> BTreeSet<IngredientId> {
    ingredients.intersection(&spec.banned).copied().collect()
}

/// `predicted \ banned`.
pub fn filter_ingredient_list(
    predicted: &BTreeSet<IngredientId>,
    spec: &ConstraintSpec,
) -> BTreeSet<IngredientId> {
    predicted.difference(&spec.banned).copied().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepViolation {
    pub step: usize,
    pub span: Range<usize>,
    pub ingredient: IngredientId,
}

pub fn check_steps_indexed<S: AsRef<str>>(
    steps: &[S],
    spec: &ConstraintSpec,
    index: &MentionIndex,
) -> Vec<StepViolation> {
    let mut out = Vec::new();
    for (step, s) in steps.iter().enumerate() {
        for m in index.mentions(s.as_ref()) {
            if spec.is_banned(m.ingredient) {
                out.push(StepViolation { step, span: m.span, ingredient: m.ingredient });
            }
        }
    }
    out
}

/// Banned-ingredient mentions across all steps.
pub fn check_steps<S: AsRef<str>>(
    steps: &[S],
    spec: &ConstraintSpec,
    vocab: &IngredientVocab,
) -> Vec<StepViolation> {
    check_steps_indexed(steps, spec, &MentionIndex::new(vocab))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ViolationReport {
    pub recipe_id: String,
    pub constraint: ConstraintId,
    pub list_violations: BTreeSet<IngredientId>,
    pub step_violations: Vec<StepViolation>,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.list_violations.is_empty() && self.step_violations.is_empty()
    }
}

pub fn check_recipe(recipe: &Recipe, spec: &ConstraintSpec, index: &MentionIndex) -> ViolationReport {
    ViolationReport {
        recipe_id: recipe.recipe_id.clone(),
        constraint: spec.id,
        list_violations: check_ingredient_list(&recipe.ingredient_set(), spec),
        step_violations: check_steps_indexed(&recipe.steps_text, spec, index),
    }
}

const CONNECTORS: [&str; 4] = ["and", "or", ",", "&"];

/// Rule baseline. Each violating ingredient (banned, or the source of a rule
/// for this constraint) is swapped for its substitute in the list and in the
/// text, or removed from both when it has no rule.
pub fn rule_edit(base: &Recipe, spec: &ConstraintSpec, vocab: &IngredientVocab) -> Recipe {
    rule_edit_indexed(base, spec, vocab, &MentionIndex::new(vocab))
}

pub fn rule_edit_indexed(
    base: &Recipe,
    spec: &ConstraintSpec,
    vocab: &IngredientVocab,
    index: &MentionIndex,
) -> Recipe {
    let violating = |id: IngredientId| spec.is_banned(id) || spec.rule_for(id).is_some();
    let substitute = |id: IngredientId| spec.rule_for(id).and_then(|r| r.to_ingredient);

    let mut ingredient_ids = Vec::new();
    for &id in &base.ingredient_ids {
        let out = if violating(id) { substitute(id) } else { Some(id) };
        if let Some(out) = out {
            if !ingredient_ids.contains(&out) {
                ingredient_ids.push(out);
            }
        }
    }

    let steps_text: Vec<String> = base
        .steps_text
        .iter()
        .map(|s| {
            let s = rewrite_step(s, index, &violating, &|id| substitute(id).map(|to| vocab.name(to)));
            scrub_banned(&s, spec, index)
        })
        .filter(|s| !s.trim().is_empty())
        .collect();

    Recipe {
        recipe_id: base.recipe_id.clone(),
        name_tokens: base.name_tokens.clone(),
        ingredient_ids,
        steps_text,
        raw_tags: base.raw_tags.clone(),
    }
}

/// One left-to-right pass: replace or delete violating mentions. Text already
/// written by a replacement is never revisited.
fn rewrite_step(
    step: &str,
    index: &MentionIndex,
    violating: &dyn Fn(IngredientId) -> bool,
    replacement: &dyn Fn(IngredientId) -> Option<String>,
) -> String {
    let mut text = step.to_string();
    let mut cursor = 0usize; // token index
    loop {
        let tokens = text::tokenize_with_spans(&text);
        let mentions = index.mentions_in_tokens(&tokens);
        let Some(m) = mentions.into_iter().find(|m| m.span.start >= cursor && violating(m.ingredient)) else {
            return text;
        };
        match replacement(m.ingredient) {
            Some(name) => {
                text.replace_range(m.bytes.clone(), &name);
                cursor = m.span.start + text::tokenize(&name).len();
            }
            None => {
                let (next, removed_before) = delete_mention(&text, &tokens, m.span.clone());
                text = next;
                cursor = m.span.start - removed_before;
            }
        }
    }
}

/// Deletes any remaining banned mention (e.g. one formed by joining the
/// words around a deleted span) until the step is clean. Terminates because
/// every deletion removes at least one token.
fn scrub_banned(step: &str, spec: &ConstraintSpec, index: &MentionIndex) -> String {
    let mut text = step.to_string();
    loop {
        let tokens = text::tokenize_with_spans(&text);
        let Some(m) = index.mentions_in_tokens(&tokens).into_iter().find(|m| spec.is_banned(m.ingredient))
        else {
            return text;
        };
        text = delete_mention(&text, &tokens, m.span).0;
    }
}

/// Removes tokens in `span` plus one adjacent connector ("and", "or", ",")
/// when present: the preceding one if any, else the following one. Returns
/// the new text and how many tokens before `span.start` were removed.
fn delete_mention(text: &str, tokens: &[Token], span: Range<usize>) -> (String, usize) {
    let is_conn = |i: usize| CONNECTORS.contains(&tokens[i].text.as_str());
    let (lo, hi, before) = if span.start > 0 && is_conn(span.start - 1) {
        (span.start - 1, span.end, 1)
    } else if span.end < tokens.len() && is_conn(span.end) {
        (span.start, span.end + 1, 0)
    } else {
        (span.start, span.end, 0)
    };
    (remove_tokens(text, tokens, lo..hi), before)
}

fn remove_tokens(text: &str, tokens: &[Token], range: Range<usize>) -> String {
    let Range { start: lo, end: hi } = range;
    let mut out = text.to_string();
    if lo > 0 {
        // take the whitespace before the run, keep whatever follows it
        out.replace_range(tokens[lo - 1].span.end..tokens[hi - 1].span.end, "");
    } else if hi < tokens.len() {
        out.replace_range(tokens[lo].span.start..tokens[hi].span.start, "");
    } else {
        out.clear();
    }
    out.trim().to_string()
}
