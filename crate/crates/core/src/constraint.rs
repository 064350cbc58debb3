//! Dietary constraints: identifiers, hard/soft kind, banned ingredients and
//! substitution rules, loaded from a constraint directory.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::normalize::read_to_string;
use crate::corpus::{IngredientId, IngredientVocab};
use crate::error::{Error, Result};
use crate::rules::{parse_rules, RulePolicy, SubstitutionRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ConstraintId {
    LowCarb,
    LowCalorie,
    LowFat,
    LowSugar,
    Vegetarian,
    GlutenFree,
    DairyFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Hard,
    Soft,
}

impl ConstraintId {
    pub const ALL: [ConstraintId; 7] = [
        ConstraintId::LowCarb,
        ConstraintId::LowCalorie,
        ConstraintId::LowFat,
        ConstraintId::LowSugar,
        ConstraintId::Vegetarian,
        ConstraintId::GlutenFree,
        ConstraintId::DairyFree,
    ];

    pub const HARD: [ConstraintId; 3] =
        [ConstraintId::Vegetarian, ConstraintId::GlutenFree, ConstraintId::DairyFree];

    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintId::LowCarb => "low-carb",
            ConstraintId::LowCalorie => "low-calorie",
            ConstraintId::LowFat => "low-fat",
            ConstraintId::LowSugar => "low-sugar",
            ConstraintId::Vegetarian => "vegetarian",
            ConstraintId::GlutenFree => "gluten-free",
            ConstraintId::DairyFree => "dairy-free",
        }
    }

    pub fn kind(self) -> ConstraintKind {
        if Self::HARD.contains(&self) {
            ConstraintKind::Hard
        } else {
            ConstraintKind::Soft
        }
    }

    pub fn is_hard(self) -> bool {
        self.kind() == ConstraintKind::Hard
    }

    /// Position in [`ConstraintId::ALL`]; used as the constraint token index.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| Error::UnknownConstraint(s.to_string()))
    }
}

impl TryFrom<String> for ConstraintId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ConstraintId> for String {
    fn from(c: ConstraintId) -> String {
        c.as_str().to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub id: ConstraintId,
    pub banned: BTreeSet<IngredientId>,
    pub rules: Vec<SubstitutionRule>,
}

impl ConstraintSpec {
    pub fn new(
        id: ConstraintId,
        banned: BTreeSet<IngredientId>,
        rules: Vec<SubstitutionRule>,
    ) -> Result<Self> {
        let spec = Self { id, banned, rules };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind(&self) -> ConstraintKind {
        self.id.kind()
    }

    pub fn is_banned(&self, id: IngredientId) -> bool {
        self.banned.contains(&id)
    }

    /// Soft constraints never carry a banned list.
    pub fn validate(&self) -> Result<()> {
        if !self.id.is_hard() && !self.banned.is_empty() {
            return Err(Error::Validation(format!(
                "soft constraint {} cannot have banned ingredients",
                self.id
            )));
        }
        for r in &self.rules {
            if let Some(to) = r.to_ingredient {
                if self.banned.contains(&to) {
                    return Err(Error::Validation(format!(
                        "{}: substitute {} is itself banned",
                        self.id, to
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rule_for(&self, from: IngredientId) -> Option<&SubstitutionRule> {
        self.rules.iter().find(|r| r.from_ingredient == from)
    }
}

/// Specs for every constraint, indexed by [`ConstraintId::index`].
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    specs: Vec<ConstraintSpec>,
    pub skipped_names: Vec<String>,
}

impl ConstraintSet {
    pub fn get(&self, id: ConstraintId) -> &ConstraintSpec {
        &self.specs[id.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConstraintSpec> {
        self.specs.iter()
    }

    pub fn from_specs(mut specs: Vec<ConstraintSpec>) -> Result<Self> {
        for c in ConstraintId::ALL {
            if !specs.iter().any(|s| s.id == c) {
                specs.push(ConstraintSpec::new(c, BTreeSet::new(), Vec::new())?);
            }
        }
        specs.sort_by_key(|s| s.id.index());
        specs.dedup_by_key(|s| s.id);
        Ok(Self { specs, skipped_names: Vec::new() })
    }

    /// Loads `<dir>/<constraint>/banned.txt` and `<dir>/<constraint>/rules.tsv`.
    /// Missing files mean an empty list. Banned names absent from the
    /// vocabulary can never be matched and are skipped (recorded in
    /// `skipped_names`); rule names are handled per `policy`.
    pub fn load(dir: &Path, vocab: &IngredientVocab, policy: RulePolicy) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Config(format!("constraint directory {} not found", dir.display())));
        }
        Self::from_sources(vocab, policy, |id, file| {
            let path = dir.join(id.as_str()).join(file);
            if path.exists() {
                Ok(Some((read_to_string(&path)?, path)))
            } else {
                Ok(None)
            }
        })
    }

    /// The constraint tables shipped with the crate.
    pub fn bundled(vocab: &IngredientVocab, policy: RulePolicy) -> Result<Self> {
        Self::from_sources(vocab, policy, |id, file| {
            Ok(bundled_file(id, file)
                .map(|c| (c.to_string(), Path::new("<bundled>").join(id.as_str()).join(file))))
        })
    }

    fn from_sources(
        vocab: &IngredientVocab,
        policy: RulePolicy,
        source: impl Fn(ConstraintId, &str) -> Result<Option<(String, PathBuf)>>,
    ) -> Result<Self> {
        let mut specs = Vec::new();
        let mut skipped = Vec::new();
        for id in ConstraintId::ALL {
            let mut banned = BTreeSet::new();
            if let Some((contents, banned_path)) = source(id, "banned.txt")? {
                if !id.is_hard() {
                    return Err(Error::Validation(format!(
                        "{}: soft constraints take no banned list",
                        banned_path.display()
                    )));
                }
                for name in crate::corpus::normalize::parse_word_list(&contents) {
                    match vocab.lookup(&name) {
                        Some(i) => {
                            banned.insert(i);
                        }
                        None => skipped.push(format!("{id}: banned `{name}`")),
                    }
                }
            }
            let (rules, rules_path) = match source(id, "rules.tsv")? {
                Some((contents, path)) => {
                    let (rules, dropped) = parse_rules(&contents, &path, vocab, policy)?;
                    skipped.extend(dropped);
                    (rules, path)
                }
                None => (Vec::new(), PathBuf::new()),
            };
            let rules: Vec<SubstitutionRule> = rules.into_iter().filter(|r| r.constraint == id).collect();
            check_rules_against_banned(&rules, &banned, &rules_path)?;
            specs.push(ConstraintSpec::new(id, banned, rules)?);
        }
        skipped.sort();
        let mut set = Self::from_specs(specs)?;
        set.skipped_names = skipped;
        Ok(set)
    }
}

fn bundled_file(id: ConstraintId, file: &str) -> Option<&'static str> {
    use ConstraintId::*;
    Some(match (id, file) {
        (Vegetarian, "banned.txt") => include_str!("../data/constraints/vegetarian/banned.txt"),
        (Vegetarian, "rules.tsv") => include_str!("../data/constraints/vegetarian/rules.tsv"),
        (GlutenFree, "banned.txt") => include_str!("../data/constraints/gluten-free/banned.txt"),
        (GlutenFree, "rules.tsv") => include_str!("../data/constraints/gluten-free/rules.tsv"),
        (DairyFree, "banned.txt") => include_str!("../data/constraints/dairy-free/banned.txt"),
        (DairyFree, "rules.tsv") => include_str!("../data/constraints/dairy-free/rules.tsv"),
        (LowCarb, "rules.tsv") => include_str!("../data/constraints/low-carb/rules.tsv"),
        (LowCalorie, "rules.tsv") => include_str!("../data/constraints/low-calorie/rules.tsv"),
        (LowFat, "rules.tsv") => include_str!("../data/constraints/low-fat/rules.tsv"),
        (LowSugar, "rules.tsv") => include_str!("../data/constraints/low-sugar/rules.tsv"),
        _ => return None,
    })
}

fn check_rules_against_banned(
    rules: &[SubstitutionRule],
    banned: &BTreeSet<IngredientId>,
    path: &Path,
) -> Result<()> {
    for r in rules {
        if r.constraint.is_hard() && !banned.is_empty() && !banned.contains(&r.from_ingredient) {
            return Err(Error::Validation(format!(
                "{}: rule source {} is not banned under {}",
                path.display(),
                r.from_ingredient,
                r.constraint
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ids() {
        for c in ConstraintId::ALL {
            assert_eq!(c.as_str().parse::<ConstraintId>().unwrap(), c);
        }
        assert_eq!("Dairy_Free".parse::<ConstraintId>().unwrap(), ConstraintId::DairyFree);
        assert!(matches!("keto".parse::<ConstraintId>(), Err(Error::UnknownConstraint(_))));
    }

    #[test]
    fn kinds_match_table() {
        let hard: Vec<_> = ConstraintId::ALL.into_iter().filter(|c| c.is_hard()).collect();
        assert_eq!(hard, ConstraintId::HARD.to_vec());
    }

    #[test]
    fn soft_with_banned_is_invalid() {
        let banned = BTreeSet::from([IngredientId(0)]);
        assert!(ConstraintSpec::new(ConstraintId::LowFat, banned.clone(), vec![]).is_err());
        assert!(ConstraintSpec::new(ConstraintId::DairyFree, banned, vec![]).is_ok());
    }
}
