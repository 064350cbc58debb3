//! Ingredient/action trees and ordered tree edit distance.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use crate::corpus::normalize::{parse_word_list, read_to_string};
use crate::corpus::{IngredientId, IngredientVocab};
use crate::error::Result;
use crate::rules::MentionIndex;
use crate::text::{self, Token};
use crate::trie::TokenTrie;

const DEFAULT_VERBS: &str = include_str!("../../data/verbs.txt");

pub const SUPER_ROOT: &str = "<root>";

/// Cooking-action lemmas, matched longest-first over step tokens.
#[derive(Debug, Clone)]
pub struct VerbLexicon {
    trie: TokenTrie<String, String>,
    len: usize,
}

impl Default for VerbLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_VERBS)
    }
}

impl VerbLexicon {
    pub fn parse(contents: &str) -> Self {
        let mut words: Vec<String> = parse_word_list(contents).into_iter().collect();
        words.sort();
        let mut trie = TokenTrie::new();
        for w in &words {
            trie.insert(&text::tokenize(w), w.clone());
        }
        Self { trie, len: words.len() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&read_to_string(path)?))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Verb lemmas in `tokens`, skipping positions flagged in `skip`.
    fn verbs(&self, tokens: &[Token], skip: &[bool]) -> Vec<String> {
        let words: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            if skip[i] {
                i += 1;
                continue;
            }
            match self.trie.longest_prefix_match(&words[i..]) {
                Some((len, lemma)) if !skip[i..i + len].iter().any(|&s| s) => {
                    out.push(lemma.clone());
                    i += len;
                }
                _ => i += 1,
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TreeNode {
    pub label: String,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn leaf(label: impl Into<String>) -> Self {
        Self { label: label.into(), children: Vec::new() }
    }

    pub fn new(label: impl Into<String>, children: Vec<TreeNode>) -> Self {
        Self { label: label.into(), children }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(TreeNode::size).sum::<usize>()
    }
}

/// Ingredient roots (with their action chains) under a synthetic super-root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActionTree {
    pub root: TreeNode,
}

impl ActionTree {
    pub fn from_roots(roots: Vec<TreeNode>) -> Self {
        Self { root: TreeNode::new(SUPER_ROOT, roots) }
    }

    /// Node count excluding the super-root.
    pub fn size(&self) -> usize {
        self.root.size() - 1
    }
}

struct ArenaNode {
    label: String,
    step: usize,
    children: Vec<usize>,
}

struct Arena(Vec<ArenaNode>);

impl Arena {
    fn add(&mut self, parent: usize, label: String, step: usize) -> usize {
        self.0.push(ArenaNode { label, step, children: Vec::new() });
        let id = self.0.len() - 1;
        self.0[parent].children.push(id);
        id
    }

    fn chain(&mut self, mut parent: usize, verbs: &[String], step: usize) -> usize {
        for v in verbs {
            parent = self.add(parent, v.clone(), step);
        }
        parent
    }

    fn freeze(&self, id: usize) -> TreeNode {
        let mut kids: Vec<usize> = self.0[id].children.clone();
        kids.sort_by(|&a, &b| {
            let (x, y) = (&self.0[a], &self.0[b]);
            x.step.cmp(&y.step).then_with(|| x.label.cmp(&y.label))
        });
        TreeNode::new(self.0[id].label.clone(), kids.into_iter().map(|k| self.freeze(k)).collect())
    }
}

/// Builds the action tree of a recipe's steps.
///
/// Each step's verbs form a chain that is hung beneath every ingredient the
/// step mentions, continuing from where that ingredient's previous chain
/// ended. A step with verbs but no mentions continues the most recently
/// created chain, or starts under the super-root if there is none. Children
/// are ordered by the step that created them, then by label.
pub fn build_action_tree<S: AsRef<str>>(
    steps: &[S],
    lexicon: &VerbLexicon,
    index: &MentionIndex,
    vocab: &IngredientVocab,
) -> ActionTree {
    let mut arena = Arena(vec![ArenaNode { label: SUPER_ROOT.into(), step: 0, children: Vec::new() }]);
    let mut cursor: HashMap<IngredientId, usize> = HashMap::new();
    let mut last_product: Option<usize> = None;
    for (s, step) in steps.iter().enumerate() {
        let tokens = text::tokenize_with_spans(step.as_ref());
        let mentions = index.mentions_in_tokens(&tokens);
        let mut skip = vec![false; tokens.len()];
        for m in &mentions {
            skip[m.span.clone()].iter_mut().for_each(|x| *x = true);
        }
        let verbs = lexicon.verbs(&tokens, &skip);
        let mut seen = Vec::new();
        for m in &mentions {
            if !seen.contains(&m.ingredient) {
                seen.push(m.ingredient);
            }
        }
        for &ing in &seen {
            let at = match cursor.get(&ing) {
                Some(&c) => c,
                None => arena.add(0, vocab.name(ing), s),
            };
            let end = arena.chain(at, &verbs, s);
            cursor.insert(ing, end);
            if !verbs.is_empty() {
                last_product = Some(end);
            }
        }
        if seen.is_empty() && !verbs.is_empty() {
            let end = arena.chain(last_product.unwrap_or(0), &verbs, s);
            last_product = Some(end);
        }
    }
    ActionTree { root: arena.freeze(0) }
}

struct Postorder<'a> {
    labels: Vec<&'a str>,
    /// Leftmost leaf descendant of each node (1-based, index 0 unused).
    lml: Vec<usize>,
}

fn postorder(root: &TreeNode) -> Postorder<'_> {
    fn walk<'a>(n: &'a TreeNode, labels: &mut Vec<&'a str>, lml: &mut Vec<usize>) -> usize {
        let mut first_leaf = None;
        for c in &n.children {
            let l = walk(c, labels, lml);
            first_leaf.get_or_insert(l);
        }
        labels.push(&n.label);
        let me = labels.len() - 1;
        let l = first_leaf.unwrap_or(me);
        lml.push(l);
        l
    }
    let mut labels = vec![""];
    let mut lml = vec![0];
    walk(root, &mut labels, &mut lml);
    Postorder { labels, lml }
}

fn keyroots(lml: &[usize]) -> Vec<usize> {
    let n = lml.len() - 1;
    let mut seen = vec![false; n + 1];
    let mut out = Vec::new();
    for i in (1..=n).rev() {
        if !seen[lml[i]] {
            seen[lml[i]] = true;
            out.push(i);
        }
    }
    out.sort_unstable();
    out
}

/// Ordered tree edit distance with unit insert, delete and relabel costs.
pub fn tree_edit_distance(a: &TreeNode, b: &TreeNode) -> usize {
    let (pa, pb) = (postorder(a), postorder(b));
    let (na, nb) = (pa.labels.len() - 1, pb.labels.len() - 1);
    let mut td = vec![vec![0usize; nb + 1]; na + 1];
    let mut fd = vec![vec![0usize; nb + 1]; na + 1];
    for &i in &keyroots(&pa.lml) {
        for &j in &keyroots(&pb.lml) {
            let (li, lj) = (pa.lml[i], pb.lml[j]);
            fd[li - 1][lj - 1] = 0;
            for di in li..=i {
                fd[di][lj - 1] = fd[di - 1][lj - 1] + 1;
            }
            for dj in lj..=j {
                fd[li - 1][dj] = fd[li - 1][dj - 1] + 1;
            }
            for di in li..=i {
                for dj in lj..=j {
                    let del = fd[di - 1][dj] + 1;
                    let ins = fd[di][dj - 1] + 1;
                    if pa.lml[di] == li && pb.lml[dj] == lj {
                        let rel = fd[di - 1][dj - 1] + usize::from(pa.labels[di] != pb.labels[dj]);
                        fd[di][dj] = del.min(ins).min(rel);
                        td[di][dj] = fd[di][dj];
                    } else {
                        let sub = fd[pa.lml[di] - 1][pb.lml[dj] - 1] + td[di][dj];
                        fd[di][dj] = del.min(ins).min(sub);
                    }
                }
            }
        }
    }
    td[na][nb]
}

/// TED / (|t1| + |t2|), sizes excluding the super-roots; 0 for two empty trees.
pub fn nted(a: &ActionTree, b: &ActionTree) -> f64 {
    let denom = a.size() + b.size();
    if denom == 0 {
        return 0.0;
    }
    tree_edit_distance(&a.root, &b.root) as f64 / denom as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AliasTable;

    fn vocab() -> IngredientVocab {
        IngredientVocab::from_names(
            &["onion", "flour", "water", "butter", "soy sauce"],
            &AliasTable::bundled(),
        )
    }

    fn build(steps: &[&str]) -> ActionTree {
        let v = vocab();
        build_action_tree(steps, &VerbLexicon::default(), &MentionIndex::new(&v), &v)
    }

    fn t(label: &str, kids: Vec<TreeNode>) -> TreeNode {
        TreeNode::new(label, kids)
    }

    #[test]
    fn single_step_chain() {
        let tree = build(&["Chop onion."]);
        assert_eq!(tree, ActionTree::from_roots(vec![t("onion", vec![TreeNode::leaf("chop")])]));
    }

    #[test]
    fn verb_is_duplicated_per_ingredient() {
        let tree = build(&["Mix flour and water."]);
        assert_eq!(
            tree,
            ActionTree::from_roots(vec![
                t("flour", vec![TreeNode::leaf("mix")]),
                t("water", vec![TreeNode::leaf("mix")]),
            ])
        );
    }

    #[test]
    fn empty_steps_give_super_root_only() {
        let tree = build(&[]);
        assert_eq!(tree.size(), 0);
        assert_eq!(tree.root.label, SUPER_ROOT);
    }

    #[test]
    fn chains_continue_and_verb_only_steps_follow_last_product() {
        let tree = build(&["Melt butter.", "Add flour to the butter and stir.", "Bake."]);
        // "bake" continues butter's chain: butter was the last ingredient
        // handled in step 1
        let butter =
            t("butter", vec![t("melt", vec![t("add", vec![t("stir", vec![TreeNode::leaf("bake")])])])]);
        let flour = t("flour", vec![t("add", vec![TreeNode::leaf("stir")])]);
        assert_eq!(tree, ActionTree::from_roots(vec![butter, flour]));
    }

    #[test]
    fn ted_basic_cases() {
        let a = t("r", vec![t("x", vec![TreeNode::leaf("y")])]);
        assert_eq!(tree_edit_distance(&a, &a), 0);
        let empty = TreeNode::leaf("r");
        assert_eq!(tree_edit_distance(&a, &empty), 2);
        let b = t("r", vec![TreeNode::leaf("x"), TreeNode::leaf("y")]);
        assert_eq!(tree_edit_distance(&a, &b), 2);
        let c = t("r", vec![t("z", vec![TreeNode::leaf("y")])]);
        assert_eq!(tree_edit_distance(&a, &c), 1);
    }

    #[test]
    fn nted_against_empty_is_one() {
        let tree = build(&["Chop onion and stir."]);
        let empty = ActionTree::from_roots(vec![]);
        assert_eq!(nted(&tree, &empty), 1.0);
        assert_eq!(nted(&tree, &tree), 0.0);
        assert_eq!(nted(&empty, &empty), 0.0);
    }
}
