//! Rouge-L over whole texts.
//!
//! Both the weak-supervision labeler and the generation metric go through
//! [`rouge_l`], so labels and evaluation numbers always agree.

use serde::{Deserialize, Serialize};

/// Lowercased alphanumeric tokens, in order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSequence(iter.into_iter().map(Into::into).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub lcs_len: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Lowercases and splits on every non-alphanumeric character, dropping empty
/// fragments.
pub fn tokenize(text: &str) -> TokenSequence {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_lowercase())
        // Some characters lowercase into sequences containing
        // non-alphanumerics (e.g. combining marks); split those again.
        .flat_map(|s| {
            if s.chars().all(char::is_alphanumeric) {
                vec![s]
            } else {
                s.split(|c: char| !c.is_alphanumeric())
                    .filter(|f| !f.is_empty())
                    .map(str::to_owned)
                    .collect()
            }
        })
        .collect()
}

/// Length of the longest common subsequence. O(|a|·|b|) time, O(min) space.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

pub fn rouge_l_tokens(candidate: &TokenSequence, reference: &TokenSequence) -> RougeScore {
    let lcs = lcs_length(candidate.tokens(), reference.tokens());
    let ratio = |n: usize| if n == 0 { 0.0 } else { lcs as f64 / n as f64 };
    let precision = ratio(candidate.len());
    let recall = ratio(reference.len());
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScore {
        lcs_len: lcs,
        precision,
        recall,
        f1,
    }
}

/// Whole-text Rouge-L with F1 (β = 1). Empty sides score 0 rather than error.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}
