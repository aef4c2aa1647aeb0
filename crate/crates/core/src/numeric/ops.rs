//! Elementwise activations, dropout and softmax.

use rand::Rng as _;

use super::rng::Rng;
use super::tensor::{Real, Tensor};

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn tanh_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Backward of `y = tanh(x)` expressed through the forward output `y`.
pub fn tanh_backward<T: Real>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
        *gv *= T::one() - yv * yv;
    }
    g
}

/// Inverted dropout. Returns the output and the per-unit scale mask
/// (`0` or `1/(1-p)`), or `None` when the layer is the identity.
pub fn dropout<T: Real>(input: &Tensor<T>, rate: f64, rng: &mut Rng, training: bool) -> (Tensor<T>, Option<Tensor<T>>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
    if !training || rate == 0.0 {
        return (input.clone(), None);
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask = Tensor::from_fn(
        input.shape(),
        |_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        },
    );
    let mut out = input.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(mask.data()) {
        *o *= m;
    }
    (out, Some(mask))
}

pub fn dropout_backward<T: Real>(mask: Option<&Tensor<T>>, grad_out: Tensor<T>) -> Tensor<T> {
    match mask {
        None => grad_out,
        Some(m) => {
            let mut g = grad_out;
            for (gv, &mv) in g.data_mut().iter_mut().zip(m.data()) {
                *gv *= mv;
            }
            g
        }
    }
}

/// Numerically stable softmax over a slice, in place.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng::seeded;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
        assert!((sigmoid(2.0f64) + sigmoid(-2.0f64) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::<f32>::from_fn(&[4, 5], |i| i as f32);
        let mut rng = seeded(0);
        assert_eq!(dropout(&x, 0.0, &mut rng, true).0, x);
        assert_eq!(dropout(&x, 0.7, &mut rng, false).0, x);
    }

    #[test]
    fn dropout_survival_fraction() {
        let x = Tensor::<f32>::full(&[100_000], 1.0);
        let (y, mask) = dropout(&x, 0.5, &mut seeded(11), true);
        assert!(mask.is_some());
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
        assert!((survivors - 0.5).abs() < 0.01, "survivors {survivors}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut row = vec![1000.0f64, 1001.0, 999.0, -5.0];
        softmax_in_place(&mut row);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|v| v.is_finite()));
    }
}
