use std::collections::HashSet;

use rand::seq::SliceRandom;

use super::RecipePair;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<RecipePair>,
    pub val: Vec<RecipePair>,
    pub test: Vec<RecipePair>,
}

/// Seeded train/val/test split that is disjoint at the recipe level: no base
/// or target of a val/test pair appears in any other split.
///
/// Val and test are filled greedily from a seeded shuffle; a candidate whose
/// recipes are already claimed by the other evaluation split is skipped.
/// Training keeps the input order of the remaining pairs and drops any pair
/// touching an evaluation recipe.
pub fn split_dataset(pairs: &[RecipePair], seed: u64, n_val: usize, n_test: usize) -> Result<Splits> {
    if n_val + n_test == 0 {
        return Ok(Splits { train: pairs.to_vec(), ..Splits::default() });
    }
    if n_val + n_test >= pairs.len() {
        return Err(Error::Validation(format!(
            "need more than {} pairs for {n_val} val + {n_test} test, have {}",
            n_val + n_test,
            pairs.len()
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng::stream(seed, Stream::Split));

    let mut val_recipes: HashSet<&str> = HashSet::new();
    let mut test_recipes: HashSet<&str> = HashSet::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    for &i in &order {
        if val_idx.len() == n_val && test_idx.len() == n_test {
            break;
        }
        let p = &pairs[i];
        let ids = [p.base_id.as_str(), p.target_id.as_str()];
        let touches = |s: &HashSet<&str>| ids.iter().any(|id| s.contains(id));
        if test_idx.len() < n_test && !touches(&val_recipes) {
            test_idx.push(i);
            test_recipes.extend(ids);
        } else if val_idx.len() < n_val && !touches(&test_recipes) {
            val_idx.push(i);
            val_recipes.extend(ids);
        }
    }
    if val_idx.len() < n_val || test_idx.len() < n_test {
        return Err(Error::Validation(format!(
            "could only place {} val / {} test recipe-disjoint pairs",
            val_idx.len(),
            test_idx.len()
        )));
    }
    let held: HashSet<usize> = val_idx.iter().chain(&test_idx).copied().collect();
    let train = pairs
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            !held.contains(i)
                && !val_recipes.contains(p.base_id.as_str())
                && !val_recipes.contains(p.target_id.as_str())
                && !test_recipes.contains(p.base_id.as_str())
                && !test_recipes.contains(p.target_id.as_str())
        })
        .map(|(_, p)| p.clone())
        .collect();
    Ok(Splits {
        train,
        val: val_idx.into_iter().map(|i| pairs[i].clone()).collect(),
        test: test_idx.into_iter().map(|i| pairs[i].clone()).collect(),
    })
}
