//! Automatic metrics: set fidelity, insertion/deletion scores, ROUGE-L,
//! distinct-n, action-tree edit distance and constraint violation rates.

mod sets;
mod text;
mod tree;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use sets::{edit_metrics, precision_recall, set_f1, set_iou, EditMetrics, PrecisionRecall};
pub use text::{distinct_n, lcs_len, rouge_l};
pub use tree::{build_action_tree, nted, tree_edit_distance, ActionTree, TreeNode, VerbLexicon, SUPER_ROOT};

use crate::constraint::{ConstraintId, ConstraintSet};
use crate::corpus::{IngredientId, IngredientVocab, Recipe, RecipePair};
use crate::error::{Error, Result};
use crate::rules::{check_steps_indexed, MentionIndex};

/// One system output, keyed by base recipe and constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditedRecipe {
    pub base_id: String,
    pub constraint: ConstraintId,
    pub ingredients: Vec<String>,
    pub steps: Vec<String>,
}

/// Fraction of recipes with at least one banned ingredient in the list and
/// in the steps, over hard-constraint recipes only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationRates {
    pub n: usize,
    pub list_rate: f64,
    pub step_rate: f64,
}

/// Everything the metrics need besides the outputs themselves.
pub struct EvalContext<'a> {
    pub vocab: &'a IngredientVocab,
    pub constraints: &'a ConstraintSet,
    pub index: MentionIndex,
    pub lexicon: VerbLexicon,
}

impl<'a> EvalContext<'a> {
    pub fn new(vocab: &'a IngredientVocab, constraints: &'a ConstraintSet, lexicon: VerbLexicon) -> Self {
        Self { vocab, constraints, index: MentionIndex::new(vocab), lexicon }
    }

    fn resolve_names(&self, names: &[String]) -> (BTreeSet<String>, BTreeSet<IngredientId>) {
        let mut labels = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for n in names {
            match self.vocab.lookup(n) {
                Some(id) => {
                    labels.insert(self.vocab.name(id));
                    ids.insert(id);
                }
                None => {
                    labels.insert(crate::text::detokenize(&crate::text::tokenize(n)));
                }
            }
        }
        (labels, ids)
    }

    fn labels(&self, ids: &[IngredientId]) -> BTreeSet<String> {
        ids.iter().map(|&i| self.vocab.name(i)).collect()
    }
}

/// Violation rates over `(constraint, ingredient ids, steps)` triples. Soft
/// constraints are skipped.
pub fn violation_rates<S: AsRef<str>>(
    edited: &[(ConstraintId, BTreeSet<IngredientId>, Vec<S>)],
    constraints: &ConstraintSet,
    index: &MentionIndex,
) -> ViolationRates {
    let mut n = 0;
    let mut list = 0;
    let mut step = 0;
    for (c, ids, steps) in edited {
        if !c.is_hard() {
            continue;
        }
        let spec = constraints.get(*c);
        n += 1;
        if ids.iter().any(|&i| spec.is_banned(i)) {
            list += 1;
        }
        if !check_steps_indexed(steps, spec, index).is_empty() {
            step += 1;
        }
    }
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    ViolationRates { n, list_rate: rate(list), step_rate: rate(step) }
}

/// Mean metrics over a group of pairs. All values are fractions in [0, 1].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_pairs: usize,
    pub iou: f64,
    pub f1: f64,
    pub ins_precision: f64,
    pub ins_f1: f64,
    pub del_precision: f64,
    pub del_f1: f64,
    pub rouge_l: f64,
    pub nted: f64,
    pub distinct2: f64,
    pub n_hard: usize,
    pub list_violation_rate: f64,
    pub step_violation_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricReport,
    pub per_constraint: BTreeMap<ConstraintId, MetricReport>,
    /// Pairs without a system output, as `base_id/constraint`; they score
    /// as an empty prediction.
    pub missing: Vec<String>,
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    sums: [f64; 8],
    texts: Vec<Vec<String>>,
    violations: Vec<(ConstraintId, BTreeSet<IngredientId>, Vec<String>)>,
}

impl Accumulator {
    fn finish(self, ctx: &EvalContext) -> MetricReport {
        let mean = |k: usize| if self.n == 0 { 0.0 } else { self.sums[k] / self.n as f64 };
        let v = violation_rates(&self.violations, ctx.constraints, &ctx.index);
        MetricReport {
            n_pairs: self.n,
            iou: mean(0),
            f1: mean(1),
            ins_precision: mean(2),
            ins_f1: mean(3),
            del_precision: mean(4),
            del_f1: mean(5),
            rouge_l: mean(6),
            nted: mean(7),
            distinct2: distinct_n(&self.texts, 2),
            n_hard: v.n,
            list_violation_rate: v.list_rate,
            step_violation_rate: v.step_rate,
        }
    }
}

fn step_tokens(steps: &[String]) -> Vec<String> {
    steps.iter().flat_map(|s| crate::text::tokenize(s)).collect()
}

/// Scores system outputs against gold pairs. Outputs are matched to pairs by
/// `(base_id, constraint)`; an output matching no pair is an error.
pub fn evaluate_pairs(
    outputs: &[EditedRecipe],
    pairs: &[RecipePair],
    recipes: &HashMap<String, Recipe>,
    ctx: &EvalContext,
) -> Result<EvalReport> {
    let mut by_key: HashMap<(&str, ConstraintId), &EditedRecipe> = HashMap::new();
    for o in outputs {
        by_key.insert((o.base_id.as_str(), o.constraint), o);
    }
    let pair_keys: BTreeSet<(&str, ConstraintId)> =
        pairs.iter().map(|p| (p.base_id.as_str(), p.constraint)).collect();
    if let Some(o) = outputs.iter().find(|o| !pair_keys.contains(&(o.base_id.as_str(), o.constraint))) {
        return Err(Error::Validation(format!(
            "output for {}/{} matches no gold pair",
            o.base_id, o.constraint
        )));
    }
    let get = |id: &str| {
        recipes.get(id).ok_or_else(|| Error::Validation(format!("pair refers to unknown recipe `{id}`")))
    };
    let empty = EditedRecipe {
        base_id: String::new(),
        constraint: ConstraintId::Vegetarian,
        ingredients: Vec::new(),
        steps: Vec::new(),
    };
    let mut overall = Accumulator::default();
    let mut groups: BTreeMap<ConstraintId, Accumulator> = BTreeMap::new();
    let mut missing = Vec::new();
    for p in pairs {
        let base = get(&p.base_id)?;
        let gold = get(&p.target_id)?;
        let out = match by_key.get(&(p.base_id.as_str(), p.constraint)) {
            Some(o) => *o,
            None => {
                missing.push(format!("{}/{}", p.base_id, p.constraint));
                &empty
            }
        };
        let (pred_labels, pred_ids) = ctx.resolve_names(&out.ingredients);
        let base_labels = ctx.labels(&base.ingredient_ids);
        let gold_labels = ctx.labels(&gold.ingredient_ids);
        let em = edit_metrics(&base_labels, &pred_labels, &gold_labels);
        let pred_toks = step_tokens(&out.steps);
        let gold_toks = step_tokens(&gold.steps_text);
        let t_pred = build_action_tree(&out.steps, &ctx.lexicon, &ctx.index, ctx.vocab);
        let t_gold = build_action_tree(&gold.steps_text, &ctx.lexicon, &ctx.index, ctx.vocab);
        let values = [
            set_iou(&pred_labels, &gold_labels),
            set_f1(&pred_labels, &gold_labels),
            em.insertion.precision,
            em.insertion.f1,
            em.deletion.precision,
            em.deletion.f1,
            rouge_l(&pred_toks, &gold_toks),
            nted(&t_pred, &t_gold),
        ];
        for acc in [&mut overall, groups.entry(p.constraint).or_default()] {
            acc.n += 1;
            for (s, v) in acc.sums.iter_mut().zip(values) {
                *s += v;
            }
            acc.texts.push(pred_toks.clone());
            acc.violations.push((p.constraint, pred_ids.clone(), out.steps.clone()));
        }
    }
    Ok(EvalReport {
        overall: overall.finish(ctx),
        per_constraint: groups.into_iter().map(|(c, a)| (c, a.finish(ctx))).collect(),
        missing,
    })
}

/// Plain-text tables: ingredient metrics, step metrics, violation rates.
/// Values are percentages except NTED.
pub fn format_report(report: &EvalReport) -> String {
    let mut rows: Vec<(String, &MetricReport)> =
        report.per_constraint.iter().map(|(c, m)| (c.to_string(), m)).collect();
    rows.push(("overall".into(), &report.overall));
    let pct = |x: f64| format!("{:.2}", 100.0 * x);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<13} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "constraint", "n", "IoU", "F1", "Ins-P", "Ins-F1", "Del-P", "Del-F1"
    );
    for (name, m) in &rows {
        let _ = writeln!(
            out,
            "{:<13} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            name,
            m.n_pairs,
            pct(m.iou),
            pct(m.f1),
            pct(m.ins_precision),
            pct(m.ins_f1),
            pct(m.del_precision),
            pct(m.del_f1)
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<13} {:>8} {:>7} {:>7}", "constraint", "ROUGE-L", "NTED", "D-2");
    for (name, m) in &rows {
        let _ = writeln!(out, "{:<13} {:>8} {:>7.3} {:>7}", name, pct(m.rouge_l), m.nted, pct(m.distinct2));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<13} {:>6} {:>7} {:>7}", "constraint", "n-hard", "List%", "Step%");
    for (name, m) in rows.iter().filter(|(_, m)| m.n_hard > 0) {
        let _ = writeln!(
            out,
            "{:<13} {:>6} {:>7} {:>7}",
            name,
            m.n_hard,
            pct(m.list_violation_rate),
            pct(m.step_violation_rate)
        );
    }
    if !report.missing.is_empty() {
        let _ = writeln!(out, "\nmissing outputs: {}", report.missing.join(", "));
    }
    out
}
