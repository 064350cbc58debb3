use std::collections::HashSet;

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure (β = 1). Zero if either side is empty.
pub fn rouge_l<T: PartialEq>(pred: &[T], gold: &[T]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    // 2PR/(P+R) with P = l/|pred|, R = l/|gold|
    2.0 * lcs_len(pred, gold) as f64 / (pred.len() + gold.len()) as f64
}

/// Unique n-grams over total n-grams, counted within each text and pooled.
/// Zero when no text is long enough to contain an n-gram.
pub fn distinct_n<S: AsRef<str>>(texts: &[Vec<S>], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be positive");
    let mut seen: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for t in texts {
        let toks: Vec<&str> = t.iter().map(AsRef::as_ref).collect();
        for w in toks.windows(n) {
            total += 1;
            seen.insert(w.to_vec());
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}
