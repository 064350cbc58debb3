//! Seeded synthetic corpora with a planted substitution rule.
//!
//! Every base recipe contains `butter`; its paired target is named
//! `dairy-free <base name>`, carries the `dairy-free` tag and swaps butter for
//! margarine in both the list and the directions. Optionally each base/target
//! couple also shares one invented single-token ingredient that occurs
//! nowhere else, which gives the generator copy targets it cannot have learned
//! from other recipes.

use std::collections::{BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::constraint::{ConstraintId, ConstraintSet, ConstraintSpec};
use crate::corpus::{
    build_vocab, pair_recipes, resolve_corpus, AliasTable, IngredientVocab, Lexicon, RawRecipe, Recipe,
    RecipePair,
};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::rules::SubstitutionRule;

const FLAVORS: [&str; 12] = [
    "rustic", "golden", "smoky", "sunday", "classic", "savory", "country", "crispy", "quick", "hearty",
    "zesty", "midnight",
];
const DISHES: [&str; 12] = [
    "noodles",
    "bake",
    "skillet",
    "casserole",
    "stew",
    "pilaf",
    "pie",
    "soup",
    "toast",
    "hash",
    "bowl",
    "gratin",
];
const COMMON: [&str; 16] = [
    "onion",
    "garlic",
    "salt",
    "black pepper",
    "sugar",
    "rice",
    "tomato",
    "carrot",
    "egg",
    "olive oil",
    "paprika",
    "lemon juice",
    "parsley",
    "potato",
    "spinach",
    "honey",
];
const UNITS: [&str; 5] = ["1 cup", "2 tbsp", "1 tsp", "3 oz", "1/2 cup"];
const MINUTES: [u32; 4] = [10, 15, 20, 25];

pub const PLANTED_FROM: &str = "butter";
pub const PLANTED_TO: &str = "margarine";
pub const PLANTED_CONSTRAINT: ConstraintId = ConstraintId::DairyFree;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    /// Base recipes, each with exactly one paired target. At most 144.
    pub n_bases: usize,
    /// Common ingredients per recipe besides butter, inclusive range.
    pub extra_min: usize,
    pub extra_max: usize,
    /// Add one invented ingredient shared only by a base and its target.
    pub rare_ingredients: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_bases: 50, extra_min: 2, extra_max: 4, rare_ingredients: true, seed: 0 }
    }
}

/// Pronounceable words that collide with no other token in the corpus.
fn invented_words<R: Rng>(n: usize, rng: &mut R) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let reserved: BTreeSet<&str> = FLAVORS
        .iter()
        .chain(&DISHES)
        .copied()
        .chain(COMMON.iter().copied().flat_map(|s| s.split(' ')))
        .collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w: String =
            (0..3).flat_map(|_| [*C.choose(rng).unwrap() as char, *V.choose(rng).unwrap() as char]).collect();
        if !reserved.contains(w.as_str()) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn steps(fat: &str, extras: &[&str], rare: Option<&str>, minutes: u32) -> Vec<String> {
    let mut s = vec![format!("melt the {fat} in a large pan")];
    for pair in extras.chunks(2) {
        match pair {
            [a, b] => s.push(format!("add the {a} and the {b}")),
            [a] => s.push(format!("add the {a}")),
            _ => {}
        }
    }
    if let Some(r) = rare {
        s.push(format!("stir in the {r}"));
    }
    s.push(format!("cook for {minutes} minutes"));
    s.push("serve warm".into());
    s
}

/// Raw recipes: all bases first, then all targets, ids `b000`.. and `t000`...
pub fn synthetic_corpus(cfg: &SynthConfig) -> Result<Vec<RawRecipe>> {
    let names: Vec<(&str, &str)> =
        FLAVORS.iter().flat_map(|f| DISHES.iter().map(move |d| (*f, *d))).collect();
    if cfg.n_bases > names.len() {
        return Err(Error::Config(format!("at most {} synthetic bases", names.len())));
    }
    if cfg.extra_min == 0 || cfg.extra_min > cfg.extra_max || cfg.extra_max > COMMON.len() {
        return Err(Error::Config("bad synthetic ingredient range".into()));
    }
    let mut rng = stream(cfg.seed, Stream::Synthetic);
    let mut names = names;
    names.shuffle(&mut rng);
    let rare = invented_words(if cfg.rare_ingredients { cfg.n_bases } else { 0 }, &mut rng);
    let mut bases = Vec::new();
    let mut targets = Vec::new();
    for (i, &(flavor, dish)) in names.iter().enumerate().take(cfg.n_bases) {
        let k = rng.random_range(cfg.extra_min..=cfg.extra_max);
        let extras: Vec<&str> = COMMON.choose_multiple(&mut rng, k).copied().collect();
        let minutes = *MINUTES.choose(&mut rng).unwrap();
        let rare_name = rare.get(i).map(String::as_str);
        let amounts: Vec<&str> = (0..=k + 1).map(|_| *UNITS.choose(&mut rng).unwrap()).collect();
        let lines = |fat: &str| -> Vec<String> {
            std::iter::once(fat)
                .chain(extras.iter().copied())
                .chain(rare_name)
                .zip(&amounts)
                .map(|(n, a)| format!("{a} {n}"))
                .collect()
        };
        let name = format!("{flavor} {dish}");
        bases.push(RawRecipe {
            id: format!("b{i:03}"),
            name: name.clone(),
            ingredients: lines(PLANTED_FROM),
            steps: steps(PLANTED_FROM, &extras, rare_name, minutes),
            tags: vec![],
        });
        targets.push(RawRecipe {
            id: format!("t{i:03}"),
            name: format!("{} {name}", PLANTED_CONSTRAINT.as_str()),
            ingredients: lines(PLANTED_TO),
            steps: steps(PLANTED_TO, &extras, rare_name, minutes),
            tags: vec![PLANTED_CONSTRAINT.as_str().into()],
        });
    }
    bases.extend(targets);
    Ok(bases)
}

/// A synthetic corpus run through the regular pipeline.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub raw: Vec<RawRecipe>,
    pub vocab: IngredientVocab,
    pub recipes: Vec<Recipe>,
    pub constraints: ConstraintSet,
    pub pairs: Vec<RecipePair>,
}

impl SynthDataset {
    pub fn build(cfg: &SynthConfig) -> Result<Self> {
        let raw = synthetic_corpus(cfg)?;
        let lex = Lexicon::default();
        let aliases = AliasTable::bundled();
        let vocab = build_vocab(&raw, 1, &lex, &aliases)?;
        let recipes = resolve_corpus(&raw, &vocab, &lex, &aliases);
        let from = vocab.lookup(PLANTED_FROM).expect("planted source in vocabulary");
        let to = vocab.lookup(PLANTED_TO).expect("planted target in vocabulary");
        let spec = ConstraintSpec::new(
            PLANTED_CONSTRAINT,
            [from].into(),
            vec![SubstitutionRule {
                constraint: PLANTED_CONSTRAINT,
                from_ingredient: from,
                to_ingredient: Some(to),
            }],
        )?;
        let pairs = pair_recipes(&recipes, &spec, 0.3);
        let constraints = ConstraintSet::from_specs(vec![spec])?;
        Ok(Self { raw, vocab, recipes, constraints, pairs })
    }

    pub fn recipe_map(&self) -> HashMap<String, Recipe> {
        self.recipes.iter().map(|r| (r.recipe_id.clone(), r.clone())).collect()
    }

    /// The invented ingredient of a recipe, if any.
    pub fn rare_ingredient(&self, recipe_id: &str) -> Option<String> {
        let r = self.recipes.iter().find(|r| r.recipe_id == recipe_id)?;
        r.ingredient_ids
            .iter()
            .map(|&i| self.vocab.name(i))
            .find(|n| !COMMON.contains(&n.as_str()) && n != PLANTED_FROM && n != PLANTED_TO)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pair_per_base_with_planted_swap() {
        let d = SynthDataset::build(&SynthConfig { n_bases: 20, ..Default::default() }).unwrap();
        assert_eq!(d.recipes.len(), 40);
        assert_eq!(d.pairs.len(), 20);
        let map = d.recipe_map();
        let butter = d.vocab.lookup("butter").unwrap();
        let margarine = d.vocab.lookup("margarine").unwrap();
        for p in &d.pairs {
            assert_eq!(p.base_id[1..], p.target_id[1..]);
            let b = map[&p.base_id].ingredient_set();
            let t = map[&p.target_id].ingredient_set();
            let removed: BTreeSet<_> = b.difference(&t).copied().collect();
            let added: BTreeSet<_> = t.difference(&b).copied().collect();
            assert_eq!(removed, [butter].into());
            assert_eq!(added, [margarine].into());
            assert!(d.rare_ingredient(&p.base_id).is_some());
        }
    }

    #[test]
    fn rare_words_occur_in_one_couple_only() {
        let d = SynthDataset::build(&SynthConfig { n_bases: 30, ..Default::default() }).unwrap();
        for r in &d.recipes {
            let rare = d.rare_ingredient(&r.recipe_id).unwrap();
            let users = d.recipes.iter().filter(|o| o.steps_text.iter().any(|s| s.contains(&rare))).count();
            assert_eq!(users, 2, "{rare}");
        }
    }

    #[test]
    fn seeded_and_reproducible() {
        let cfg = SynthConfig { n_bases: 10, seed: 3, ..Default::default() };
        assert_eq!(synthetic_corpus(&cfg).unwrap(), synthetic_corpus(&cfg).unwrap());
        let other = SynthConfig { seed: 4, ..cfg };
        assert_ne!(synthetic_corpus(&cfg).unwrap(), synthetic_corpus(&other).unwrap());
        assert!(synthetic_corpus(&SynthConfig { n_bases: 145, ..cfg }).is_err());
    }

    #[test]
    fn without_rare_ingredients() {
        let d =
            SynthDataset::build(&SynthConfig { n_bases: 5, rare_ingredients: false, ..Default::default() })
                .unwrap();
        assert!(d.recipes.iter().all(|r| d.rare_ingredient(&r.recipe_id).is_none()));
    }
}
