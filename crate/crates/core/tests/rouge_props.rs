mod common;

use cappy::rouge::{lcs_length, rouge_l, tokenize};
use common::{f1_formula, lcs_oracle};
use proptest::prelude::*;

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..12)
        .prop_map(|v| v.into_iter().map(str::to_owned).collect())
}

proptest! {
    #[test]
    fn lcs_matches_memoized_oracle(a in words(), b in words()) {
        prop_assert_eq!(lcs_length(&a, &b), lcs_oracle(&a, &b));
    }

    #[test]
    fn f1_is_bounded_and_exact_only_on_equality(a in words(), b in words()) {
        let s = rouge_l(&a.join(" "), &b.join(" "));
        prop_assert!((0.0..=1.0).contains(&s.f1));
        prop_assert_eq!(s.f1 == 1.0, a == b && !a.is_empty());
        let lcs = lcs_oracle(&a, &b);
        prop_assert!((s.f1 - f1_formula(lcs, a.len(), b.len())).abs() < 1e-12);
    }

    #[test]
    fn argument_swap(a in words(), b in words()) {
        let ab = rouge_l(&a.join(" "), &b.join(" "));
        let ba = rouge_l(&b.join(" "), &a.join(" "));
        prop_assert_eq!(ab.lcs_len, ba.lcs_len);
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.recall, ba.precision);
        prop_assert_eq!(ab.f1, ba.f1);
    }

    #[test]
    fn tokenizer_ignores_case_and_punctuation(a in words()) {
        let plain = a.join(" ");
        let noisy = a.iter().map(|w| format!("{}!,", w.to_uppercase())).collect::<Vec<_>>().join("  ");
        prop_assert_eq!(tokenize(&plain), tokenize(&noisy));
    }

    #[test]
    fn lcs_bounded_by_shorter(a in words(), b in words()) {
        prop_assert!(lcs_length(&a, &b) <= a.len().min(b.len()));
    }
}

#[test]
fn worked_example() {
    let s = rouge_l("the cat sat", "the cat sat on the mat");
    assert_eq!(s.lcs_len, 3);
    assert_eq!(s.precision, 1.0);
    assert_eq!(s.recall, 0.5);
    assert!((s.f1 - 2.0 / 3.0).abs() < 1e-4);
}

#[test]
fn empty_sides_score_zero() {
    for (c, r) in [("", "x"), ("x", ""), ("", ""), ("...", "!!")] {
        let s = rouge_l(c, r);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0), "{c:?} vs {r:?}");
    }
}
