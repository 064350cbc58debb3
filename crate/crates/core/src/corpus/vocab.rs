use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::normalize::{normalize_ingredient, read_to_string, Lexicon};
use super::RawRecipe;
use crate::error::{Error, Result};
use crate::text;

/// Dense id into the ingredient vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IngredientId(pub u32);

impl IngredientId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for IngredientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngredientEntry {
    pub id: IngredientId,
    pub canonical_name: Vec<String>,
    pub aliases: BTreeSet<Vec<String>>,
}

impl IngredientEntry {
    pub fn name(&self) -> String {
        self.canonical_name.join(" ")
    }
}

/// Alias table: alias surface form -> canonical surface form.
#[derive(Debug, Clone, Default)]
pub struct AliasTable {
    map: BTreeMap<Vec<String>, Vec<String>>,
}

impl AliasTable {
    pub fn parse(contents: &str, path: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in contents.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (alias, canonical) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `alias<TAB>canonical`"))?;
            let alias = text::tokenize(alias);
            let canonical = text::tokenize(canonical);
            if alias.is_empty() || canonical.is_empty() {
                return Err(Error::parse(path, i + 1, "empty alias or canonical name"));
            }
            map.insert(alias, canonical);
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    pub fn bundled() -> Self {
        Self::parse(include_str!("../../data/aliases.tsv"), Path::new("<bundled aliases.tsv>"))
            .expect("bundled alias table parses")
    }

    pub fn canonicalize(&self, tokens: Vec<String>) -> Vec<String> {
        match self.map.get(&tokens) {
            Some(c) => c.clone(),
            None => tokens,
        }
    }

    fn aliases_of(&self, canonical: &[String]) -> BTreeSet<Vec<String>> {
        self.map.iter().filter(|(_, c)| c.as_slice() == canonical).map(|(a, _)| a.clone()).collect()
    }
}

/// The closed ingredient label space.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct IngredientVocab {
    entries: Vec<IngredientEntry>,
    min_recipe_count: usize,
    index: HashMap<Vec<String>, IngredientId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    min_recipe_count: usize,
    entries: Vec<IngredientEntry>,
}

impl From<VocabFile> for IngredientVocab {
    fn from(f: VocabFile) -> Self {
        Self::from_entries(f.entries, f.min_recipe_count)
    }
}

impl From<IngredientVocab> for VocabFile {
    fn from(v: IngredientVocab) -> Self {
        VocabFile { min_recipe_count: v.min_recipe_count, entries: v.entries }
    }
}

impl PartialEq for IngredientVocab {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.min_recipe_count == other.min_recipe_count
    }
}

impl IngredientVocab {
    fn from_entries(entries: Vec<IngredientEntry>, min_recipe_count: usize) -> Self {
        let mut index = HashMap::new();
        // canonical names win over aliases
        for e in &entries {
            for a in &e.aliases {
                index.insert(a.clone(), e.id);
            }
        }
        for e in &entries {
            index.insert(e.canonical_name.clone(), e.id);
        }
        Self { entries, min_recipe_count, index }
    }

    /// Builds a vocabulary directly from canonical names (sorted, deduplicated).
    pub fn from_names<S: AsRef<str>>(names: &[S], aliases: &AliasTable) -> Self {
        let set: BTreeSet<Vec<String>> =
            names.iter().map(|n| text::tokenize(n.as_ref())).filter(|t| !t.is_empty()).collect();
        let entries = set
            .into_iter()
            .enumerate()
            .map(|(i, name)| IngredientEntry {
                id: IngredientId(i as u32),
                aliases: aliases.aliases_of(&name),
                canonical_name: name,
            })
            .collect();
        Self::from_entries(entries, 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min_recipe_count(&self) -> usize {
        self.min_recipe_count
    }

    pub fn entries(&self) -> &[IngredientEntry] {
        &self.entries
    }

    pub fn entry(&self, id: IngredientId) -> Option<&IngredientEntry> {
        self.entries.get(id.index())
    }

    pub fn name(&self, id: IngredientId) -> String {
        self.entry(id).map(IngredientEntry::name).unwrap_or_default()
    }

    pub fn lookup_tokens(&self, tokens: &[String]) -> Option<IngredientId> {
        self.index.get(tokens).copied()
    }

    /// Looks up a surface name, tokenizing it first.
    pub fn lookup(&self, name: &str) -> Option<IngredientId> {
        self.lookup_tokens(&text::tokenize(name))
    }

    /// Every surface form (canonical names and aliases) with its id.
    pub fn surface_forms(&self) -> impl Iterator<Item = (&[String], IngredientId)> {
        self.entries.iter().flat_map(|e| {
            std::iter::once((e.canonical_name.as_slice(), e.id))
                .chain(e.aliases.iter().map(move |a| (a.as_slice(), e.id)))
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("vocab serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = read_to_string(path)?;
        serde_json::from_str(&s).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

/// Canonical ingredient name for a raw line after normalization and alias
/// resolution; `None` when nothing survives normalization.
pub fn canonical_name(raw: &str, lex: &Lexicon, aliases: &AliasTable) -> Option<Vec<String>> {
    let toks = normalize_ingredient(raw, lex);
    if toks.is_empty() {
        None
    } else {
        Some(aliases.canonicalize(toks))
    }
}

/// Counts, per canonical ingredient, the number of distinct recipes using it
/// and keeps those reaching `min_recipe_count`. Ids follow sorted name order.
pub fn build_vocab(
    corpus: &[RawRecipe],
    min_recipe_count: usize,
    lex: &Lexicon,
    aliases: &AliasTable,
) -> Result<IngredientVocab> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
    }
    if min_recipe_count == 0 {
        return Err(Error::Config("min_recipe_count must be at least 1".into()));
    }
    let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for recipe in corpus {
        let names: BTreeSet<Vec<String>> =
            recipe.ingredients.iter().filter_map(|l| canonical_name(l, lex, aliases)).collect();
        for n in names {
            *counts.entry(n).or_default() += 1;
        }
    }
    let entries: Vec<IngredientEntry> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_recipe_count)
        .enumerate()
        .map(|(i, (name, _))| IngredientEntry {
            id: IngredientId(i as u32),
            aliases: aliases.aliases_of(&name),
            canonical_name: name,
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::Config(format!("no ingredient appears in at least {min_recipe_count} recipes")));
    }
    Ok(IngredientVocab::from_entries(entries, min_recipe_count))
}
