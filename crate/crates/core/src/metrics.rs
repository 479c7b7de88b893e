//! ROUGE variants plus the candidate-filter statistics used by the
//! online weight selection.
//!
//! No stemming or stopword removal is applied anywhere, so scores are not
//! byte-compatible with the official ROUGE tooling.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precision / recall / F1 triple in `[0,1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        if cand_total == 0 || ref_total == 0 {
            return RougeScore::default();
        }
        let precision = overlap as f64 / cand_total as f64;
        let recall = overlap as f64 / ref_total as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut map = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *map.entry(w).or_insert(0) += 1;
        }
    }
    map
}

/// Clipped n-gram overlap ROUGE for n in {1, 2}.
pub fn rouge_n<T: Hash + Eq>(cand: &[T], reference: &[T], n: usize) -> Result<RougeScore> {
    if !(1..=2).contains(&n) {
        return Err(Error::InvalidParameter(format!(
            "rouge_n supports n in {{1,2}}, got {n}"
        )));
    }
    let cand_grams = ngram_counts(cand, n);
    let ref_grams = ngram_counts(reference, n);
    let cand_total: usize = cand_grams.values().sum();
    let ref_total: usize = ref_grams.values().sum();
    let mut overlap = 0;
    for (gram, &c) in &cand_grams {
        if let Some(&r) = ref_grams.get(gram) {
            overlap += c.min(r);
        }
    }
    Ok(RougeScore::from_counts(overlap, cand_total, ref_total))
}

/// Tokens matched by one longest common subsequence of `a` and `b`.
fn lcs_matched_tokens<'a, T: Eq>(a: &'a [T], b: &[T]) -> Vec<&'a T> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let mut dp = vec![0usize; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 1..=n {
        for j in 1..=m {
            dp[at(i, j)] = if a[i - 1] == b[j - 1] {
                dp[at(i - 1, j - 1)] + 1
            } else {
                dp[at(i - 1, j)].max(dp[at(i, j - 1)])
            };
        }
    }
    let mut out = Vec::with_capacity(dp[at(n, m)]);
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        if a[i - 1] == b[j - 1] {
            out.push(&a[i - 1]);
            i -= 1;
            j -= 1;
        } else if dp[at(i - 1, j)] >= dp[at(i, j - 1)] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out.reverse();
    out
}

/// Group a token stream into sentences ending at `.`, `!` or `?` tokens
/// (the terminator stays with its sentence).
pub fn split_sentences<S: AsRef<str> + Clone>(tokens: &[S]) -> Vec<Vec<S>> {
    let mut sents = Vec::new();
    let mut cur = Vec::new();
    for t in tokens {
        cur.push(t.clone());
        if matches!(t.as_ref(), "." | "!" | "?") {
            sents.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        sents.push(cur);
    }
    sents
}

/// Summary-level LCS ROUGE: each reference sentence is matched by LCS
/// against the whole candidate, and hits are pooled with each token
/// occurrence usable at most once.
pub fn rouge_lsum<T: Hash + Eq + Clone>(
    cand_sentences: &[Vec<T>],
    ref_sentences: &[Vec<T>],
) -> Result<RougeScore> {
    let cand_all: Vec<T> = cand_sentences.iter().flatten().cloned().collect();
    let ref_total: usize = ref_sentences.iter().map(Vec::len).sum();

    let mut hit_counts: HashMap<&T, usize> = HashMap::new();
    for sent in ref_sentences {
        for tok in lcs_matched_tokens(sent.as_slice(), &cand_all) {
            *hit_counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut cand_counts: HashMap<&T, usize> = HashMap::new();
    for tok in &cand_all {
        *cand_counts.entry(tok).or_insert(0) += 1;
    }
    let mut ref_counts: HashMap<&T, usize> = HashMap::new();
    for sent in ref_sentences {
        for tok in sent {
            *ref_counts.entry(tok).or_insert(0) += 1;
        }
    }
    let hits: usize = hit_counts
        .iter()
        .map(|(tok, &h)| {
            h.min(*cand_counts.get(*tok).unwrap_or(&0))
                .min(*ref_counts.get(*tok).unwrap_or(&0))
        })
        .sum();
    Ok(RougeScore::from_counts(hits, cand_all.len(), ref_total))
}

/// [`rouge_lsum`] on flat token streams, splitting sentences first.
pub fn rouge_lsum_tokens<S: AsRef<str> + Clone + Hash + Eq>(
    cand: &[S],
    reference: &[S],
) -> Result<RougeScore> {
    rouge_lsum(&split_sentences(cand), &split_sentences(reference))
}

/// Distinct-token fraction; the repetition filter flags values below 0.6.
/// Empty input counts as 1.0.
pub fn unique_word_ratio<T: Hash + Eq>(tokens: &[T]) -> f64 {
    if tokens.is_empty() {
        return 1.0;
    }
    let distinct: HashSet<&T> = tokens.iter().collect();
    distinct.len() as f64 / tokens.len() as f64
}

/// Fraction of the base summary's distinct tokens that also appear in the
/// candidate; the distraction filter flags values below 0.2. An empty base
/// counts as 1.0.
pub fn word_overlap<T: Hash + Eq>(cand: &[T], base: &[T]) -> f64 {
    let base_set: HashSet<&T> = base.iter().collect();
    if base_set.is_empty() {
        return 1.0;
    }
    let cand_set: HashSet<&T> = cand.iter().collect();
    let shared = base_set.intersection(&cand_set).count();
    shared as f64 / base_set.len() as f64
}

/// Fraction of distinct aspect tokens present in the summary. A cheap
/// stand-in for embedding-based aspect similarity.
pub fn aspect_relevance<T: Hash + Eq>(summary: &[T], aspects: &[T]) -> Result<f64> {
    let aspect_set: HashSet<&T> = aspects.iter().collect();
    if aspect_set.is_empty() {
        return Err(Error::InvalidParameter(
            "aspect_relevance needs a non-empty aspect set".into(),
        ));
    }
    let summary_set: HashSet<&T> = summary.iter().collect();
    let shared = aspect_set.intersection(&summary_set).count();
    Ok(shared as f64 / aspect_set.len() as f64)
}

/// Mean of the R-1, R-2 and R-LSum F1 scores against a reference — the
/// objective used for oracle selection and validation-set tuning.
pub fn reference_rouge_mean<S: AsRef<str> + Clone + Hash + Eq>(
    cand: &[S],
    reference: &[S],
) -> Result<f64> {
    let r1 = rouge_n(cand, reference, 1)?.f1;
    let r2 = rouge_n(cand, reference, 2)?.f1;
    let rl = rouge_lsum_tokens(cand, reference)?.f1;
    Ok((r1 + r2 + rl) / 3.0)
}
