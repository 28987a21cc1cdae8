#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use cappy::corpus::{InstanceKey, Provenance, RegressionExample};
use cappy::scorer::SparseFeatures;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Top-down memoized LCS over the recursive definition, kept separate from
/// the bottom-up table in the library.
pub fn lcs_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// F1 of LCS precision (over the candidate) and recall (over the reference).
pub fn f1_formula(lcs: usize, cand_len: usize, ref_len: usize) -> f64 {
    if lcs == 0 || cand_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand_len as f64;
    let r = lcs as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

pub fn random_words(rng: &mut ChaCha8Rng, max_len: usize, vocab: &[&str]) -> Vec<String> {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| vocab[rng.random_range(0..vocab.len())].to_owned()).collect()
}

/// Mean squared error of a sigmoid-linear model computed directly in f64.
pub fn oracle_loss(weights: &[f64], bias: f64, batch: &[(SparseFeatures, f64)]) -> f64 {
    let mut total = 0.0;
    for (f, y) in batch {
        let mut z = bias;
        for (i, v) in f.indices.iter().zip(&f.values) {
            z += weights[*i as usize] * v;
        }
        let p = 1.0 / (1.0 + (-z).exp());
        total += (p - y) * (p - y);
    }
    total / batch.len() as f64
}

fn example(instruction: String, response: String, score: f64, i: usize) -> RegressionExample {
    RegressionExample {
        instruction,
        response,
        score,
        provenance: if score == 1.0 {
            Provenance::GroundTruth
        } else {
            Provenance::IncorrectChoice
        },
        source_instance: InstanceKey {
            task_id: "synthetic".into(),
            template_id: "t0".into(),
            instance_id: i.to_string(),
        },
    }
}

/// Responses drawn from one of two disjoint marker vocabularies plus shared
/// filler; the marker set alone decides the label.
pub fn separable_dataset(n: usize, seed: u64) -> Vec<RegressionExample> {
    const GOOD: [&str; 6] = ["amber", "birch", "cedar", "dune", "ember", "fjord"];
    const BAD: [&str; 6] = ["quartz", "rust", "slate", "tundra", "umber", "vapor"];
    const FILLER: [&str; 8] = ["the", "a", "of", "and", "with", "near", "over", "under"];
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let markers = if positive { &GOOD } else { &BAD };
            let mut words: Vec<&str> = (0..4).map(|_| markers[r.random_range(0..markers.len())]).collect();
            words.extend((0..4).map(|_| FILLER[r.random_range(0..FILLER.len())]));
            let instruction = format!("describe item {}", r.random_range(0..50));
            example(instruction, words.join(" "), if positive { 1.0 } else { 0.0 }, i)
        })
        .collect()
}

/// Probability that a random positive outscores a random negative; ties
/// count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| !**l).map(|(s, _)| *s).collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}
