use std::collections::HashMap;
use std::hash::Hash;

/// Prefix tree over token sequences, used for longest-match mention lookup
/// and for blacklisted decoding.
#[derive(Debug, Clone)]
pub struct TokenTrie<K, V> {
    nodes: Vec<TrieNode<K, V>>,
}

#[derive(Debug, Clone)]
struct TrieNode<K, V> {
    children: HashMap<K, usize>,
    value: Option<V>,
}

impl<K, V> Default for TrieNode<K, V> {
    fn default() -> Self {
        Self { children: HashMap::new(), value: None }
    }
}

impl<K: Eq + Hash + Clone, V> Default for TokenTrie<K, V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K: Eq + Hash + Clone, V> TokenTrie<K, V> {
    pub fn new() -> Self {
        Self { nodes: vec![TrieNode::default()] }
    }

    /// Inserts `seq`. Empty sequences are ignored. An existing value at the
    /// same sequence is kept (first insertion wins).
    pub fn insert(&mut self, seq: &[K], value: V) {
        if seq.is_empty() {
            return;
        }
        let mut node = 0;
        for key in seq {
            node = match self.nodes[node].children.get(key) {
                Some(&next) => next,
                None => {
                    self.nodes.push(TrieNode::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[node].children.insert(key.clone(), next);
                    next
                }
            };
        }
        if self.nodes[node].value.is_none() {
            self.nodes[node].value = Some(value);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Longest stored sequence starting at `seq[0]`: `(length, value)`.
    pub fn longest_prefix_match(&self, seq: &[K]) -> Option<(usize, &V)> {
        let mut node = 0;
        let mut best = None;
        for (i, key) in seq.iter().enumerate() {
            match self.nodes[node].children.get(key) {
                Some(&next) => node = next,
                None => break,
            }
            if let Some(v) = &self.nodes[node].value {
                best = Some((i + 1, v));
            }
        }
        best
    }

    /// Value stored at exactly `seq`.
    pub fn get(&self, seq: &[K]) -> Option<&V> {
        let mut node = 0;
        for key in seq {
            node = *self.nodes[node].children.get(key)?;
        }
        self.nodes[node].value.as_ref()
    }

    /// Keys `k` such that some suffix `s` of `prefix` makes `s ++ [k]` a
    /// stored sequence (including the empty suffix, i.e. single-key entries).
    pub fn completions_after(&self, prefix: &[K]) -> Vec<&K> {
        let mut out = Vec::new();
        for start in 0..=prefix.len() {
            let Some(node) = self.walk(&prefix[start..]) else {
                continue;
            };
            for (key, &child) in &self.nodes[node].children {
                if self.nodes[child].value.is_some() {
                    out.push(key);
                }
            }
        }
        out
    }

    fn walk(&self, seq: &[K]) -> Option<usize> {
        let mut node = 0;
        for key in seq {
            node = *self.nodes[node].children.get(key)?;
        }
        Some(node)
    }
}
