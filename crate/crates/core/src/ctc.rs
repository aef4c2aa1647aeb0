//! Connectionist Temporal Classification: loss and gradient via log-space
//! forward-backward, greedy decoding, and an exhaustive reference for tiny
//! instances.
//!
//! Class 0 is the blank. The last class is the end-of-line marker: it is
//! trained like any other symbol (appended to every target) and decoding
//! stops at its first occurrence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

/// Symbol inventory with reserved blank (index 0) and end-of-line (last).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Alphabet {
    symbols: Vec<char>,
}

impl Alphabet {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        let mut seen = std::collections::HashSet::new();
        if let Some(&dup) = symbols.iter().find(|c| !seen.insert(**c)) {
            return Err(Error::Config(format!("duplicate symbol {dup:?}")));
        }
        Ok(Self { symbols })
    }

    /// Uppercase A-Z, digits and space.
    pub fn toy() -> Self {
        Self::new(('A'..='Z').chain('0'..='9').chain([' '])).expect("distinct symbols")
    }

    pub const BLANK: usize = 0;

    pub fn eol(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn classes(&self) -> usize {
        self.symbols.len() + 2
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn contains(&self, c: char) -> bool {
        self.symbols.contains(&c)
    }

    pub fn index_of(&self, c: char) -> Result<usize> {
        self.symbols
            .iter()
            .position(|&s| s == c)
            .map(|i| i + 1)
            .ok_or(Error::UnknownSymbol(c))
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.index_of(c)).collect()
    }

    /// Symbol for a class index; `None` for blank and end-of-line.
    pub fn symbol(&self, class: usize) -> Option<char> {
        (class >= 1 && class <= self.symbols.len()).then(|| self.symbols[class - 1])
    }
}

impl TryFrom<String> for Alphabet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::new(s.chars())
    }
}

impl From<Alphabet> for String {
    fn from(a: Alphabet) -> String {
        a.symbols.into_iter().collect()
    }
}

/// Minimum number of frames able to emit `target`: one per label plus a
/// separating blank between equal neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Forward and backward variables over the blank-augmented target.
/// `beta[t][s]` excludes the emission at `t`, so `alpha[t][s] + beta[t][s]`
/// is the log mass of all paths through `s` at `t`.
pub struct Lattice {
    pub log_alpha: Vec<Vec<f64>>,
    pub log_beta: Vec<Vec<f64>>,
    pub log_p_forward: f64,
    pub log_p_backward: f64,
    augmented: Vec<usize>,
}

/// Runs forward-backward on `[frames x classes]` log-probabilities.
pub fn lattice(log_probs: &[f64], classes: usize, target: &[usize]) -> Result<Lattice> {
    let frames = log_probs.len() / classes;
    if frames * classes != log_probs.len() || frames == 0 {
        return Err(Error::dim("posterior rows", classes, log_probs.len()));
    }
    if let Some(&bad) = target.iter().find(|&&k| k == Alphabet::BLANK || k >= classes) {
        return Err(Error::Config(format!("target label {bad} is blank or out of range")));
    }
    let required = min_frames(target);
    if frames < required {
        return Err(Error::InfeasibleAlignment {
            target_len: target.len(),
            required,
            frames,
        });
    }
    let mut augmented = Vec::with_capacity(2 * target.len() + 1);
    augmented.push(Alphabet::BLANK);
    for &k in target {
        augmented.push(k);
        augmented.push(Alphabet::BLANK);
    }
    let s_len = augmented.len();
    let y = |t: usize, s: usize| log_probs[t * classes + augmented[s]];
    // s may be reached from s-2 when it is a label different from s-2.
    let can_skip = |s: usize| s >= 2 && augmented[s] != Alphabet::BLANK && augmented[s] != augmented[s - 2];

    let ninf = f64::NEG_INFINITY;
    let mut log_alpha = vec![vec![ninf; s_len]; frames];
    log_alpha[0][0] = y(0, 0);
    if s_len > 1 {
        log_alpha[0][1] = y(0, 1);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut a = log_alpha[t - 1][s];
            if s >= 1 {
                a = log_sum_exp(a, log_alpha[t - 1][s - 1]);
            }
            if can_skip(s) {
                a = log_sum_exp(a, log_alpha[t - 1][s - 2]);
            }
            log_alpha[t][s] = if a == ninf { ninf } else { a + y(t, s) };
        }
    }

    let mut log_beta = vec![vec![ninf; s_len]; frames];
    log_beta[frames - 1][s_len - 1] = 0.0;
    if s_len > 1 {
        log_beta[frames - 1][s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let mut b = log_beta[t + 1][s] + y(t + 1, s);
            if s + 1 < s_len {
                b = log_sum_exp(b, log_beta[t + 1][s + 1] + y(t + 1, s + 1));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_sum_exp(b, log_beta[t + 1][s + 2] + y(t + 1, s + 2));
            }
            log_beta[t][s] = b;
        }
    }

    let last = &log_alpha[frames - 1];
    let log_p_forward = if s_len > 1 {
        log_sum_exp(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    };
    let mut log_p_backward = log_beta[0][0] + y(0, 0);
    if s_len > 1 {
        log_p_backward = log_sum_exp(log_p_backward, log_beta[0][1] + y(0, 1));
    }
    Ok(Lattice {
        log_alpha,
        log_beta,
        log_p_forward,
        log_p_backward,
        augmented,
    })
}

#[derive(Clone, Debug)]
pub struct CtcLoss {
    /// `-log p(target | input)`.
    pub nll: f64,
    /// Gradient of `nll` w.r.t. the pre-softmax scores, `[frames, classes]`.
    pub grad: Tensor<f64>,
}

/// CTC loss from `[frames, classes]` log-probabilities (a log-softmax of
/// the network scores).
pub fn ctc_loss_from_log_probs(log_probs: &Tensor<f64>, target: &[usize]) -> Result<CtcLoss> {
    let [frames, classes] = log_probs.shape()[..] else {
        return Err(Error::dim("posterior rank", 2, log_probs.rank()));
    };
    let lat = lattice(log_probs.data(), classes, target)?;
    let log_p = lat.log_p_forward;
    if !log_p.is_finite() {
        return Err(Error::NonFinite("ctc likelihood"));
    }
    let mut grad = Tensor::zeros(&[frames, classes]);
    let g = grad.data_mut();
    for t in 0..frames {
        let row = &mut g[t * classes..(t + 1) * classes];
        for (k, v) in row.iter_mut().enumerate() {
            *v = log_probs.data()[t * classes + k].exp();
        }
        for (s, &k) in lat.augmented.iter().enumerate() {
            let occ = lat.log_alpha[t][s] + lat.log_beta[t][s] - log_p;
            if occ > f64::NEG_INFINITY {
                row[k] -= occ.exp();
            }
        }
    }
    Ok(CtcLoss { nll: -log_p, grad })
}

/// CTC loss from per-frame class probabilities `[frames, classes]`.
pub fn ctc_loss<T: Real>(posteriors: &Tensor<T>, target: &[usize]) -> Result<CtcLoss> {
    ctc_loss_from_log_probs(&posteriors.cast::<f64>().map(f64::ln), target)
}

/// Merge repeats, then drop blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != Alphabet::BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Likelihood of `target` by summing over every frame labelling.
/// Refuses instances with more than a million paths.
pub fn ctc_brute_force<T: Real>(posteriors: &Tensor<T>, target: &[usize]) -> Result<f64> {
    let [frames, classes] = posteriors.shape()[..] else {
        return Err(Error::dim("posterior rank", 2, posteriors.rank()));
    };
    let paths = (classes as f64).powi(frames as i32);
    if paths > 1e6 {
        return Err(Error::TooLarge(paths));
    }
    let y = posteriors.data();
    let mut path = vec![0usize; frames];
    let mut total = 0.0;
    loop {
        if collapse(&path) == target {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &k)| y[t * classes + k].f64())
                .product::<f64>();
        }
        // Odometer increment.
        let mut t = 0;
        loop {
            if t == frames {
                return Ok(total);
            }
            path[t] += 1;
            if path[t] < classes {
                break;
            }
            path[t] = 0;
            t += 1;
        }
    }
}

/// Per-frame argmax, collapsed, truncated at the first end-of-line label.
pub fn best_path_labels<T: Real>(posteriors: &Tensor<T>, eol: usize) -> Vec<usize> {
    let classes = posteriors.shape()[1];
    let argmax: Vec<usize> = posteriors
        .data()
        .chunks_exact(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, T::neg_infinity()),
                    |best, (k, &v)| if v > best.1 { (k, v) } else { best },
                )
                .0
        })
        .collect();
    collapse(&argmax).into_iter().take_while(|&k| k != eol).collect()
}

pub fn best_path_decode<T: Real>(posteriors: &Tensor<T>, alphabet: &Alphabet) -> String {
    best_path_labels(posteriors, alphabet.eol())
        .into_iter()
        .filter_map(|k| alphabet.symbol(k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, seeded, softmax_in_place, Rng};
    use rand::Rng as _;

    fn random_posteriors(rng: &mut Rng, frames: usize, classes: usize) -> Tensor<f64> {
        let mut d: Vec<f64> = (0..frames * classes).map(|_| rng.random_range(-2.0..2.0)).collect();
        for row in d.chunks_exact_mut(classes) {
            softmax_in_place(row);
        }
        Tensor::new(vec![frames, classes], d).unwrap()
    }

    #[test]
    fn toy_alphabet_layout() {
        let a = Alphabet::toy();
        assert_eq!(a.classes(), 39);
        assert_eq!(a.eol(), 38);
        assert_eq!(a.index_of('A').unwrap(), 1);
        assert_eq!(a.symbol(Alphabet::BLANK), None);
        assert_eq!(a.symbol(a.eol()), None);
        assert!(matches!(a.encode("a"), Err(Error::UnknownSymbol('a'))));
    }

    #[test]
    fn single_frame_single_label() {
        let p = Tensor::new(vec![1, 3], vec![0.2, 0.5, 0.3]).unwrap();
        let l = ctc_loss(&p, &[1]).unwrap();
        assert!((l.nll + 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frames_single_label() {
        let p = Tensor::new(vec![2, 3], vec![0.2, 0.5, 0.3, 0.6, 0.1, 0.3]).unwrap();
        let expected = 0.5 * 0.1 + 0.5 * 0.6 + 0.2 * 0.1;
        assert!((ctc_brute_force(&p, &[1]).unwrap() - expected).abs() < 1e-15);
        let l = ctc_loss(&p, &[1]).unwrap();
        assert!((l.nll + expected.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_four_classes_three_frames() {
        let p = Tensor::full(&[3, 4], 0.25);
        let brute = ctc_brute_force(&p, &[1, 2]).unwrap();
        // Paths collapsing to [1,2] over 3 frames: 11 2, 1 22, 1 b 2, b 1 2, 1 2 b.
        assert!((brute - 5.0 / 64.0).abs() < 1e-15);
        assert!((ctc_loss(&p, &[1, 2]).unwrap().nll + brute.ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_target_is_an_error() {
        let p = Tensor::full(&[2, 3], 1.0 / 3.0);
        assert!(matches!(
            ctc_loss(&p, &[1, 1]),
            Err(Error::InfeasibleAlignment {
                required: 3,
                frames: 2,
                ..
            })
        ));
        assert_eq!(ctc_brute_force(&p, &[1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn empty_target_is_all_blank() {
        let p = Tensor::new(vec![3, 2], vec![0.9, 0.1, 0.8, 0.2, 0.7, 0.3]).unwrap();
        let expected: f64 = 0.9 * 0.8 * 0.7;
        assert!((ctc_brute_force(&p, &[]).unwrap() - expected).abs() < 1e-15);
        assert!((ctc_loss(&p, &[]).unwrap().nll + expected.ln()).abs() < 1e-12);
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let p = Tensor::<f64>::full(&[10, 5], 0.2);
        assert!(matches!(ctc_brute_force(&p, &[1]), Err(Error::TooLarge(_))));
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = seeded(77);
        for _ in 0..200 {
            let classes = rng.random_range(2..=5);
            let frames = rng.random_range(1..=8);
            let len = rng.random_range(0..=3);
            let target: Vec<usize> = (0..len).map(|_| rng.random_range(1..classes)).collect();
            let p = random_posteriors(&mut rng, frames, classes);
            let brute = ctc_brute_force(&p, &target).unwrap();
            match ctc_loss(&p, &target) {
                Ok(l) => assert!((-l.nll - brute.ln()).abs() < 1e-9),
                Err(Error::InfeasibleAlignment { .. }) => assert_eq!(brute, 0.0),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn forward_and_backward_agree() {
        let mut rng = seeded(5);
        for _ in 0..50 {
            let p = random_posteriors(&mut rng, 12, 6);
            let target = [1, 3, 3, 5];
            let log_p = p.map(f64::ln);
            let lat = lattice(log_p.data(), 6, &target).unwrap();
            assert!((lat.log_p_forward - lat.log_p_backward).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded(6);
        for _ in 0..20 {
            let (frames, classes) = (6, 4);
            let scores: Vec<f64> = (0..frames * classes).map(|_| rng.random_range(-2.0..2.0)).collect();
            let target = [1, 2, 2];
            let nll = |s: &[f64]| {
                let mut lp = s.to_vec();
                for row in lp.chunks_exact_mut(classes) {
                    softmax_in_place(row);
                }
                let p = Tensor::new(vec![frames, classes], lp).unwrap();
                ctc_loss(&p, &target).unwrap()
            };
            let analytic = nll(&scores).grad.into_data();
            let err = grad_check(|s| nll(s).nll, &scores, &analytic, 1e-5).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn greedy_decoding_rules() {
        let a = Alphabet::new(['a', 'b', 'c']).unwrap();
        let one_hot = |labels: &[usize]| {
            Tensor::from_fn(&[labels.len(), a.classes()], |i| {
                if i % a.classes() == labels[i / a.classes()] {
                    0.9
                } else {
                    0.1 / 4.0
                }
            })
        };
        let (ia, ib, ic, eol) = (1, 2, 3, a.eol());
        assert_eq!(best_path_decode(&one_hot(&[ia, ia, 0, ib, eol, ic]), &a), "ab");
        assert_eq!(best_path_decode(&one_hot(&[0, 0, 0]), &a), "");
        assert_eq!(best_path_decode(&one_hot(&[ia, 0, ia]), &a), "aa");
    }

    #[test]
    fn decoded_labels_are_feasible() {
        let mut rng = seeded(12);
        for _ in 0..100 {
            let p = random_posteriors(&mut rng, 7, 4);
            let labels = best_path_labels(&p, 3);
            assert!(ctc_brute_force(&p, &labels).unwrap() > 0.0);
        }
    }
}
