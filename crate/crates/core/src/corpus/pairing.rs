use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{satisfies, Recipe};
use crate::constraint::{ConstraintId, ConstraintSpec};

/// A base recipe, a target version satisfying `constraint`, by recipe id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecipePair {
    pub base_id: String,
    pub target_id: String,
    pub constraint: ConstraintId,
}

/// |a ∩ b| / |a ∪ b|, 1 for two empty sets.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Whether `needle` occurs as a contiguous run inside `haystack`.
pub fn name_contains(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// All (base, target) pairs for one constraint: the base fails the
/// constraint, the target passes it, the base name is a contiguous token run
/// of the target name, and ingredient Jaccard reaches `overlap_min`.
/// Output follows base order, then target order, of the input corpus.
pub fn pair_recipes(corpus: &[Recipe], spec: &ConstraintSpec, overlap_min: f64) -> Vec<RecipePair> {
    let mut targets_by_ngram: HashMap<&[String], Vec<usize>> = HashMap::new();
    for (ti, t) in corpus.iter().enumerate() {
        if !satisfies(t, spec) {
            continue;
        }
        let n = t.name_tokens.len();
        let mut seen = BTreeSet::new();
        for start in 0..n {
            for end in start + 1..=n {
                let gram = &t.name_tokens[start..end];
                if seen.insert(gram) {
                    targets_by_ngram.entry(gram).or_default().push(ti);
                }
            }
        }
    }
    let sets: Vec<BTreeSet<_>> = corpus.iter().map(Recipe::ingredient_set).collect();
    let mut pairs = Vec::new();
    for (bi, base) in corpus.iter().enumerate() {
        if satisfies(base, spec) {
            continue;
        }
        let Some(targets) = targets_by_ngram.get(base.name_tokens.as_slice()) else {
            continue;
        };
        for &ti in targets {
            let target = &corpus[ti];
            if target.recipe_id == base.recipe_id {
                continue;
            }
            if jaccard(&sets[bi], &sets[ti]) >= overlap_min {
                pairs.push(RecipePair {
                    base_id: base.recipe_id.clone(),
                    target_id: target.recipe_id.clone(),
                    constraint: spec.id,
                });
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::IngredientId;

    fn r(id: &str, name: &str, ingr: &[u32], tags: &[&str]) -> Recipe {
        Recipe {
            recipe_id: id.into(),
            name_tokens: crate::corpus::name_tokens(name),
            ingredient_ids: ingr.iter().map(|&i| IngredientId(i)).collect(),
            steps_text: vec!["mix".into()],
            raw_tags: tags.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn gluten_free() -> ConstraintSpec {
        // id 9 plays the role of wheat flour
        ConstraintSpec::new(ConstraintId::GlutenFree, BTreeSet::from([IngredientId(9)]), vec![]).unwrap()
    }

    #[test]
    fn pairs_by_contained_name() {
        let corpus = vec![
            r("b", "chocolate cookie", &[1, 2, 9], &[]),
            r("t", "healthy oat chocolate cookie", &[1, 2, 3], &["gluten-free"]),
        ];
        let pairs = pair_recipes(&corpus, &gluten_free(), 0.3);
        assert_eq!(
            pairs,
            vec![RecipePair {
                base_id: "b".into(),
                target_id: "t".into(),
                constraint: ConstraintId::GlutenFree
            }]
        );
    }

    #[test]
    fn identical_names_full_overlap() {
        let corpus = vec![r("b", "pancakes", &[1, 2], &[]), r("t", "pancakes", &[1, 2], &["gluten-free"])];
        assert_eq!(pair_recipes(&corpus, &gluten_free(), 1.0).len(), 1);
    }

    #[test]
    fn low_overlap_rejected() {
        // share 1 of 10 each: Jaccard 1/19
        let base: Vec<u32> = (0..10).collect();
        let target: Vec<u32> = std::iter::once(0).chain(10..19).collect();
        let corpus = vec![r("b", "stew", &base, &[]), r("t", "stew", &target, &["gluten-free"])];
        let sets: Vec<_> = corpus.iter().map(Recipe::ingredient_set).collect();
        assert!((jaccard(&sets[0], &sets[1]) - 1.0 / 19.0).abs() < 1e-15);
        assert!(pair_recipes(&corpus, &gluten_free(), 0.3).is_empty());
    }

    #[test]
    fn non_contiguous_name_rejected() {
        let corpus = vec![
            r("b", "chocolate cookie", &[1], &[]),
            r("t", "chocolate chip cookie", &[1], &["gluten-free"]),
        ];
        assert!(pair_recipes(&corpus, &gluten_free(), 0.0).is_empty());
    }

    #[test]
    fn tagged_target_with_banned_ingredient_rejected() {
        let corpus = vec![r("b", "bread", &[1], &[]), r("t", "bread", &[1, 9], &["gluten-free"])];
        assert!(pair_recipes(&corpus, &gluten_free(), 0.0).is_empty());
    }
}
