//! Hashed lexical features for (instruction, response) pairs.
//!
//! Feature families, each keyed by a tagged string and hashed with a sign bit:
//!
//! - `i1:`/`i2:` instruction unigrams and bigrams
//! - `r1:`/`r2:` response unigrams and bigrams
//! - `x:` instruction × response unigram pairs, at most [`MAX_CROSS_PAIRS`]
//!   chosen by hash order
//! - `len:` bucketed log2 ratio of response to instruction length
//!   (`len:empty` for an empty response)
//! - `bias`
//!
//! N-gram and cross families are scaled by `1/sqrt(count)` within a family so
//! long inputs don't dominate the logit.

use std::collections::BTreeSet;

use crate::hashing::hash_str;
use crate::rouge::tokenize;

/// Bump when feature keys, scaling or hashing change.
pub const FEATURIZER_VERSION: u32 = 1;
pub const DEFAULT_FEATURE_DIM: usize = 1 << 20;
pub const MAX_CROSS_PAIRS: usize = 512;
const FEATURE_HASH_SEED: u64 = 0x6361_7070_795f_6631;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseFeatures {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseFeatures {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    /// Builds from unsorted `(index, value)` contributions, summing duplicates.
    pub fn from_contributions(mut raw: Vec<(u32, f64)>) -> Self {
        raw.sort_by_key(|(i, _)| *i);
        let mut out = SparseFeatures::default();
        for (i, v) in raw {
            if out.indices.last() == Some(&i) {
                *out.values.last_mut().unwrap() += v;
            } else {
                out.indices.push(i);
                out.values.push(v);
            }
        }
        out
    }

    pub fn is_well_formed(&self, feature_dim: usize) -> bool {
        self.indices.len() == self.values.len()
            && self.indices.windows(2).all(|w| w[0] < w[1])
            && self.indices.iter().all(|&i| (i as usize) < feature_dim)
            && self.values.iter().all(|v| v.is_finite())
    }
}

fn push_ngrams(out: &mut Vec<(String, f64)>, tag: &str, tokens: &[String]) {
    let n = tokens.len() + tokens.len().saturating_sub(1);
    if n == 0 {
        return;
    }
    let w = 1.0 / (n as f64).sqrt();
    for t in tokens {
        out.push((format!("{tag}1:{t}"), w));
    }
    for pair in tokens.windows(2) {
        out.push((format!("{tag}2:{} {}", pair[0], pair[1]), w));
    }
}

fn length_bucket(instruction_len: usize, response_len: usize) -> String {
    if response_len == 0 {
        return "len:empty".to_owned();
    }
    let ratio = response_len as f64 / instruction_len.max(1) as f64;
    let bucket = (ratio.log2() * 2.0).round().clamp(-8.0, 8.0) as i32;
    format!("len:{bucket}")
}

/// The keyed, weighted features before hashing.
pub fn feature_keys(instruction: &str, response: &str) -> Vec<(String, f64)> {
    let inst = tokenize(instruction).into_inner();
    let resp = tokenize(response).into_inner();
    let mut out = Vec::new();
    push_ngrams(&mut out, "i", &inst);
    push_ngrams(&mut out, "r", &resp);

    let inst_set: BTreeSet<&str> = inst.iter().map(String::as_str).collect();
    let resp_set: BTreeSet<&str> = resp.iter().map(String::as_str).collect();
    let mut cross: Vec<(u64, String)> = inst_set
        .iter()
        .flat_map(|a| resp_set.iter().map(move |b| format!("x:{a}|{b}")))
        .map(|k| (hash_str(FEATURE_HASH_SEED, &k), k))
        .collect();
    cross.sort();
    cross.truncate(MAX_CROSS_PAIRS);
    if !cross.is_empty() {
        let w = 1.0 / (cross.len() as f64).sqrt();
        out.extend(cross.into_iter().map(|(_, k)| (k, w)));
    }

    out.push((length_bucket(inst.len(), resp.len()), 1.0));
    out.push(("bias".to_owned(), 1.0));
    out
}

/// Maps a feature key to `(bucket, sign)`. The top hash bit picks the sign,
/// the low bits the bucket.
pub fn hash_feature(key: &str, feature_dim: usize) -> (u32, f64) {
    debug_assert!(feature_dim.is_power_of_two());
    let h = hash_str(FEATURE_HASH_SEED, key);
    let idx = (h & (feature_dim as u64 - 1)) as u32;
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    (idx, sign)
}

/// Signed feature hashing of [`feature_keys`] into `feature_dim` buckets.
/// `feature_dim` must be a power of two.
pub fn featurize(instruction: &str, response: &str, feature_dim: usize) -> SparseFeatures {
    assert!(
        feature_dim.is_power_of_two() && feature_dim <= 1 << 31,
        "feature_dim must be a power of two no larger than 2^31"
    );
    let raw = feature_keys(instruction, response)
        .into_iter()
        .map(|(k, v)| {
            let (i, s) = hash_feature(&k, feature_dim);
            (i, s * v)
        })
        .collect();
    SparseFeatures::from_contributions(raw)
}
