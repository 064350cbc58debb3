//! Recipe corpus ingestion, vocabulary construction, constraint tagging,
//! base/target pairing and dataset splits.

pub mod io;
pub mod normalize;
mod pairing;
mod split;
pub mod vocab;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use normalize::{normalize_ingredient, Lexicon};
pub use pairing::{jaccard, name_contains, pair_recipes, RecipePair};
pub use split::{split_dataset, Splits};
pub use vocab::{build_vocab, AliasTable, IngredientEntry, IngredientId, IngredientVocab};

use crate::constraint::{ConstraintKind, ConstraintSpec};
use crate::text;

/// One line of the corpus file, before normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecipe {
    pub id: String,
    pub name: String,
    pub ingredients: Vec<String>,
    pub steps: Vec<String>,
    #[serde(default)]
    pub tags: Vec<String>,
}

/// A recipe resolved against an ingredient vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub recipe_id: String,
    pub name_tokens: Vec<String>,
    /// Distinct ids in order of first appearance.
    pub ingredient_ids: Vec<IngredientId>,
    pub steps_text: Vec<String>,
    pub raw_tags: BTreeSet<String>,
}

impl Recipe {
    pub fn ingredient_set(&self) -> BTreeSet<IngredientId> {
        self.ingredient_ids.iter().copied().collect()
    }

    pub fn name(&self) -> String {
        self.name_tokens.join(" ")
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.raw_tags.contains(tag)
    }

    /// Back to the file representation, with canonical ingredient names.
    pub fn to_raw(&self, vocab: &IngredientVocab) -> RawRecipe {
        RawRecipe {
            id: self.recipe_id.clone(),
            name: self.name(),
            ingredients: self.ingredient_ids.iter().map(|&i| vocab.name(i)).collect(),
            steps: self.steps_text.clone(),
            tags: self.raw_tags.iter().cloned().collect(),
        }
    }
}

/// Name tokens with punctuation removed.
pub fn name_tokens(name: &str) -> Vec<String> {
    text::tokenize(name).into_iter().filter(|t| !text::is_punct(t)).collect()
}

/// Resolves a raw recipe; ingredient lines outside the vocabulary are
/// dropped. Returns `None` for recipes without a name or without steps.
pub fn resolve_recipe(
    raw: &RawRecipe,
    vocab: &IngredientVocab,
    lex: &Lexicon,
    aliases: &AliasTable,
) -> Option<Recipe> {
    let name_tokens = name_tokens(&raw.name);
    let steps_text: Vec<String> =
        raw.steps.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if name_tokens.is_empty() || steps_text.is_empty() {
        return None;
    }
    let mut ingredient_ids = Vec::new();
    for line in &raw.ingredients {
        if let Some(name) = vocab::canonical_name(line, lex, aliases) {
            if let Some(id) = vocab.lookup_tokens(&name) {
                if !ingredient_ids.contains(&id) {
                    ingredient_ids.push(id);
                }
            }
        }
    }
    Some(Recipe {
        recipe_id: raw.id.clone(),
        name_tokens,
        ingredient_ids,
        steps_text,
        raw_tags: raw.tags.iter().map(|t| t.trim().to_lowercase()).collect(),
    })
}

pub fn resolve_corpus(
    raw: &[RawRecipe],
    vocab: &IngredientVocab,
    lex: &Lexicon,
    aliases: &AliasTable,
) -> Vec<Recipe> {
    raw.iter().filter_map(|r| resolve_recipe(r, vocab, lex, aliases)).collect()
}

/// Hard constraints need the tag and no banned ingredient; soft ones only
/// the tag.
pub fn satisfies(recipe: &Recipe, spec: &ConstraintSpec) -> bool {
    if !recipe.has_tag(spec.id.as_str()) {
        return false;
    }
    match spec.kind() {
        ConstraintKind::Soft => true,
        ConstraintKind::Hard => recipe.ingredient_ids.iter().all(|i| !spec.is_banned(*i)),
    }
}
