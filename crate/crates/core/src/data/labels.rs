use crate::error::{Error, Result};

/// Maps a binary label plus a 0–10 confidence rating to an 11-level
/// pseudo-probability of the positive class.
///
/// Label 0 maps to `10 - conf`; label 1 maps to `(conf + 10) / 2` rounded
/// half-up, so positive labels always land in 5..=10.
pub fn transform_confidence_label(label: u8, confidence_0_10: u8) -> Result<u8> {
    if confidence_0_10 > 10 {
        return Err(Error::invalid(format!(
            "confidence {confidence_0_10} outside 0..=10"
        )));
    }
    match label {
        0 => Ok(10 - confidence_0_10),
        // floor((c + 10) / 2 + 1/2) == (c + 11) / 2 in integer arithmetic
        1 => Ok((confidence_0_10 + 11) / 2),
        other => Err(Error::invalid(format!("label {other} is not binary"))),
    }
}

/// Character-level edit distance (insert, delete, substitute; unit costs).
pub fn levenshtein_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - distance / max(len)`; two empty strings are identical.
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein_distance(a, b) as f64 / longest as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Exhaustive recursion over all edit scripts; exponential, tiny inputs only.
    fn brute_edit_distance(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((ha, ta)), Some((hb, tb))) => {
                let sub = brute_edit_distance(ta, tb) + usize::from(ha != hb);
                let del = brute_edit_distance(ta, b) + 1;
                let ins = brute_edit_distance(a, tb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    #[test]
    fn eq1_spot_values() {
        assert_eq!(transform_confidence_label(0, 10).unwrap(), 0);
        assert_eq!(transform_confidence_label(1, 10).unwrap(), 10);
        assert_eq!(transform_confidence_label(1, 7).unwrap(), 9);
        assert_eq!(transform_confidence_label(1, 0).unwrap(), 5);
        assert_eq!(transform_confidence_label(0, 0).unwrap(), 10);
        assert!(transform_confidence_label(2, 5).is_err());
        assert!(transform_confidence_label(1, 11).is_err());
    }

    #[test]
    fn eq1_exhaustive_table() {
        for label in 0..=1u8 {
            for conf in 0..=10u8 {
                let out = transform_confidence_label(label, conf).unwrap();
                let expected = if label == 0 {
                    10.0 - conf as f64
                } else {
                    ((conf as f64 + 10.0) / 2.0 + 0.5).floor()
                };
                assert_eq!(out as f64, expected, "label {label} conf {conf}");
                assert!(out <= 10);
                assert_eq!(out >= 5, label == 1 || conf <= 5, "label {label} conf {conf}");
            }
        }
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein_similarity("abc", "abc"), 1.0);
        let chars = |s: &str| s.chars().collect::<Vec<_>>();
        let d = brute_edit_distance(&chars("abc"), &chars("abd"));
        assert_eq!(d, 1);
        assert!((levenshtein_similarity("abc", "abd") - (1.0 - d as f64 / 3.0)).abs() < 1e-12);
        assert_eq!(levenshtein_similarity("", "x"), 0.0);
        assert_eq!(levenshtein_similarity("", ""), 1.0);
        assert_eq!(levenshtein_distance("kitten", "sitting"), 3);
    }

    proptest! {
        #[test]
        fn levenshtein_matches_brute_force(a in "[ab]{0,5}", b in "[abc]{0,5}") {
            let ca: Vec<char> = a.chars().collect();
            let cb: Vec<char> = b.chars().collect();
            prop_assert_eq!(levenshtein_distance(&a, &b), brute_edit_distance(&ca, &cb));
        }

        #[test]
        fn levenshtein_symmetric_and_identity(a in "[a-d]{0,8}", b in "[a-d]{0,8}") {
            let s = levenshtein_similarity(&a, &b);
            prop_assert_eq!(s, levenshtein_similarity(&b, &a));
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s == 1.0, a == b);
        }
    }
}
