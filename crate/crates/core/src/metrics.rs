//! Detection F-measure within an acceptance zone, word error rate and
//! bag-of-words F-measure.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Per-coordinate acceptance radius `t`, as a fraction of page width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcceptanceZone {
    pub t: f64,
    pub coords: usize,
}

impl AcceptanceZone {
    pub fn new(t: f64, coords: usize) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("acceptance radius {t} must be positive")));
        }
        if !(2..=4).contains(&coords) {
            return Err(Error::Config(format!("{coords} coordinates; expected 2, 3 or 4")));
        }
        Ok(Self { t, coords })
    }
}

/// Zone grid reported by evaluation.
pub const ZONES: [f64; 4] = [0.003, 0.01, 0.03, 0.1];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PrF {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl PrF {
    fn from_counts(hits: f64, n_hyp: f64, n_ref: f64) -> Self {
        let precision = if n_hyp > 0.0 { hits / n_hyp } else { 0.0 };
        let recall = if n_ref > 0.0 { hits / n_ref } else { 0.0 };
        let f = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f }
    }
}

/// Detection counts for one page, summable over a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DetectionCounts {
    pub correct: usize,
    pub hyps: usize,
    pub refs: usize,
}

impl DetectionCounts {
    pub fn add(&mut self, other: Self) {
        self.correct += other.correct;
        self.hyps += other.hyps;
        self.refs += other.refs;
    }

    pub fn prf(&self) -> PrF {
        PrF::from_counts(self.correct as f64, self.hyps as f64, self.refs as f64)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// One-to-one greedy pairing by ascending Euclidean distance. Ties break on
/// (reference, hypothesis) index. Returns `(hyp, ref)` pairs.
pub fn greedy_pairs(hyps: &[Vec<f64>], refs: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let mut all: Vec<(f64, usize, usize)> = refs
        .iter()
        .enumerate()
        .flat_map(|(r, rv)| hyps.iter().enumerate().map(move |(h, hv)| (distance(hv, rv), r, h)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut hyp_used = vec![false; hyps.len()];
    let mut ref_used = vec![false; refs.len()];
    let mut pairs = Vec::new();
    for (_, r, h) in all {
        if !hyp_used[h] && !ref_used[r] {
            hyp_used[h] = true;
            ref_used[r] = true;
            pairs.push((h, r));
        }
    }
    pairs
}

fn check_coords(list: &[Vec<f64>], k: usize, what: &str) -> Result<()> {
    match list.iter().find(|v| v.len() != k) {
        Some(v) => Err(Error::dim(format!("{what} coordinates"), k, v.len())),
        None => Ok(()),
    }
}

pub fn detection_counts(hyps: &[Vec<f64>], refs: &[Vec<f64>], zone: AcceptanceZone) -> Result<DetectionCounts> {
    check_coords(hyps, zone.coords, "hypothesis")?;
    check_coords(refs, zone.coords, "reference")?;
    let correct = greedy_pairs(hyps, refs)
        .into_iter()
        .filter(|&(h, r)| hyps[h].iter().zip(&refs[r]).all(|(a, b)| (a - b).abs() < zone.t))
        .count();
    Ok(DetectionCounts {
        correct,
        hyps: hyps.len(),
        refs: refs.len(),
    })
}

/// Precision, recall and F of detected objects; coordinates normalized by
/// page width.
pub fn detection_fmeasure(hyps: &[Vec<f64>], refs: &[Vec<f64>], zone: AcceptanceZone) -> Result<PrF> {
    Ok(detection_counts(hyps, refs, zone)?.prf())
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Unit-cost Levenshtein distance over tokens.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word edits and reference word count, for corpus-level aggregation.
pub fn word_errors(hyp: &str, reference: &str) -> (usize, usize) {
    let (h, r) = (words(hyp), words(reference));
    (edit_distance(&h, &r), r.len())
}

pub fn wer(hyp: &str, reference: &str) -> Result<f64> {
    let (edits, n) = word_errors(hyp, reference);
    if n == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(edits as f64 / n as f64)
}

/// Multiset intersection size and both word counts.
pub fn bow_counts(hyp: &str, reference: &str) -> (usize, usize, usize) {
    let mut bag: HashMap<&str, usize> = HashMap::new();
    let ref_words = words(reference);
    for w in &ref_words {
        *bag.entry(w).or_default() += 1;
    }
    let hyp_words = words(hyp);
    let mut inter = 0;
    for w in &hyp_words {
        if let Some(n) = bag.get_mut(w).filter(|n| **n > 0) {
            *n -= 1;
            inter += 1;
        }
    }
    (inter, hyp_words.len(), ref_words.len())
}

pub fn bow_fmeasure(hyp: &str, reference: &str) -> PrF {
    let (i, h, r) = bow_counts(hyp, reference);
    PrF::from_counts(i as f64, h as f64, r as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    fn zone(t: f64) -> AcceptanceZone {
        AcceptanceZone::new(t, 3).unwrap()
    }

    #[test]
    fn identical_detections_score_one() {
        let refs = vec![vec![0.1, 0.2, 0.03], vec![0.5, 0.6, 0.02]];
        let m = detection_fmeasure(&refs, &refs, zone(0.003)).unwrap();
        assert_eq!((m.precision, m.recall, m.f), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_hypotheses_scores_zero() {
        let refs = vec![vec![0.1, 0.2, 0.03]];
        assert_eq!(detection_fmeasure(&[], &refs, zone(0.1)).unwrap(), PrF::default());
    }

    #[test]
    fn one_reference_two_hypotheses() {
        let refs = vec![vec![0.1, 0.2, 0.03]];
        let hyps = vec![vec![0.101, 0.2, 0.03], vec![0.7, 0.7, 0.03]];
        let m = detection_fmeasure(&hyps, &refs, zone(0.01)).unwrap();
        assert!((m.precision - 0.5).abs() < EPS);
        assert!((m.recall - 1.0).abs() < EPS);
        assert!((m.f - 2.0 / 3.0).abs() < EPS);
    }

    #[test]
    fn coordinate_test_is_strict() {
        let refs = vec![vec![0.5, 0.5]];
        let hyps = vec![vec![0.75, 0.5]];
        let z = AcceptanceZone::new(0.25, 2).unwrap();
        assert_eq!(detection_fmeasure(&hyps, &refs, z).unwrap().f, 0.0);
    }

    #[test]
    fn hypothesis_counts_once() {
        let refs = vec![vec![0.5, 0.5, 0.1], vec![0.51, 0.5, 0.1]];
        let hyps = vec![vec![0.505, 0.5, 0.1]];
        let c = detection_counts(&hyps, &refs, zone(0.1)).unwrap();
        assert_eq!(c.correct, 1);
    }

    #[test]
    fn coordinate_count_mismatch_is_an_error() {
        let refs = vec![vec![0.1, 0.2, 0.03]];
        let hyps = vec![vec![0.1, 0.2]];
        assert!(detection_fmeasure(&hyps, &refs, zone(0.1)).is_err());
        assert!(AcceptanceZone::new(0.0, 3).is_err());
        assert!(AcceptanceZone::new(0.1, 5).is_err());
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer("A B C", "A B C").unwrap(), 0.0);
        assert!((wer("a x c", "a b c").unwrap() - 1.0 / 3.0).abs() < EPS);
        assert!((wer("a", "a b c").unwrap() - 2.0 / 3.0).abs() < EPS);
        assert!(matches!(wer("a", "  "), Err(Error::EmptyReference)));
    }

    #[test]
    fn bow_examples() {
        assert_eq!(bow_fmeasure("c b a", "a b c").f, 1.0);
        assert_eq!(bow_fmeasure("x y", "a b").f, 0.0);
        let m = bow_fmeasure("a b b", "a a b");
        for v in [m.precision, m.recall, m.f] {
            assert!((v - 2.0 / 3.0).abs() < EPS);
        }
        assert_eq!(bow_fmeasure("", "").f, 0.0);
    }

    fn points(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.0..1.0f64, 3), 0..n)
    }

    fn token_list() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(
            prop::sample::select(vec!["A", "B", "C", "D"]).prop_map(String::from),
            0..8,
        )
    }

    proptest! {
        #[test]
        fn f_is_monotone_in_the_radius(hyps in points(8), refs in points(8), t in 0.001..0.5f64, k in 1.0..4.0f64) {
            let small = detection_fmeasure(&hyps, &refs, zone(t)).unwrap().f;
            let large = detection_fmeasure(&hyps, &refs, zone(t * k)).unwrap().f;
            prop_assert!(large >= small);
        }

        #[test]
        fn f_is_symmetric_under_permutation(hyps in points(7), refs in points(7), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut rng = crate::numeric::seeded(seed);
            let (mut h2, mut r2) = (hyps.clone(), refs.clone());
            h2.shuffle(&mut rng);
            r2.shuffle(&mut rng);
            let a = detection_fmeasure(&hyps, &refs, zone(0.05)).unwrap();
            let b = detection_fmeasure(&h2, &r2, zone(0.05)).unwrap();
            prop_assert!((a.f - b.f).abs() < EPS);
        }

        #[test]
        fn bow_ignores_order(h in token_list(), r in token_list(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut rng = crate::numeric::seeded(seed);
            let (mut h2, mut r2) = (h.clone(), r.clone());
            h2.shuffle(&mut rng);
            r2.shuffle(&mut rng);
            let a = bow_fmeasure(&h.join(" "), &r.join(" "));
            let b = bow_fmeasure(&h2.join("  "), &r2.join("\n"));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn wer_bounds(h in token_list(), r in token_list()) {
            prop_assume!(!r.is_empty());
            let w = wer(&h.join(" "), &r.join(" ")).unwrap();
            prop_assert!(w >= 0.0);
            prop_assert!(w <= 1f64.max(h.len() as f64 / r.len() as f64) + EPS);
            prop_assert_eq!(w == 0.0, h == r);
        }
    }
}
