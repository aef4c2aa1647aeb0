//! RMSProp.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// One squared-gradient accumulator per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp<T = f32> {
    pub config: RmsPropConfig,
    pub accumulators: Vec<Tensor<T>>,
}

impl<T: Real> RmsProp<T> {
    pub fn new<'a>(config: RmsPropConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        Self {
            config,
            accumulators: params.into_iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// Updates every parameter with its gradient. All gradients are
    /// validated before any parameter is touched.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.accumulators.len() {
            return Err(Error::dim("parameter count", self.accumulators.len(), grads.len()));
        }
        if !grads.iter().all(Tensor::all_finite) {
            return Err(Error::NonFinite("gradient"));
        }
        for ((p, g), acc) in params.into_iter().zip(grads).zip(&mut self.accumulators) {
            rmsprop_step(p, g, acc, &self.config)?;
        }
        Ok(())
    }
}

/// `acc <- decay*acc + (1-decay)*g^2; param <- param - lr*g/sqrt(acc+eps)`.
pub fn rmsprop_step<T: Real>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    acc: &mut Tensor<T>,
    config: &RmsPropConfig,
) -> Result<()> {
    param.check_same_shape(grad)?;
    param.check_same_shape(acc)?;
    if !grad.all_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    let rho = T::of(config.decay);
    let one_minus = T::of(1.0 - config.decay);
    let lr = T::of(config.learning_rate);
    let eps = T::of(config.epsilon);
    for ((p, &g), a) in param.data_mut().iter_mut().zip(grad.data()).zip(acc.data_mut()) {
        *a = rho * *a + one_minus * g * g;
        *p -= lr * g / (*a + eps).sqrt();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_only_decays() {
        let cfg = RmsPropConfig::default();
        let mut p = Tensor::<f64>::full(&[3], 2.0);
        let mut acc = Tensor::full(&[3], 0.5);
        rmsprop_step(&mut p, &Tensor::zeros(&[3]), &mut acc, &cfg).unwrap();
        assert_eq!(p.data(), &[2.0; 3]);
        assert!(acc.data().iter().all(|&a| (a - 0.45).abs() < 1e-15));
    }

    #[test]
    fn first_unit_step_magnitude() {
        let cfg = RmsPropConfig::default();
        let mut p = Tensor::<f64>::zeros(&[1]);
        let mut acc = Tensor::zeros(&[1]);
        rmsprop_step(&mut p, &Tensor::full(&[1], 1.0), &mut acc, &cfg).unwrap();
        let expected = 0.001 / (0.1f64 + 1e-8).sqrt();
        assert!((p[0] + expected).abs() < 1e-15);
        assert!((expected - 0.0031623).abs() < 1e-7);
    }

    #[test]
    fn accumulator_increases_toward_squared_gradient() {
        let cfg = RmsPropConfig::default();
        let mut p = Tensor::<f64>::zeros(&[1]);
        let mut acc = Tensor::zeros(&[1]);
        let g = Tensor::full(&[1], 1.0);
        let mut prev = 0.0;
        for _ in 0..5 {
            rmsprop_step(&mut p, &g, &mut acc, &cfg).unwrap();
            assert!(acc[0] > prev && acc[0] < 1.0);
            prev = acc[0];
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let cfg = RmsPropConfig::default();
        let mut p = Tensor::<f32>::zeros(&[2]);
        let mut acc = Tensor::zeros(&[2]);
        let g = Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(
            rmsprop_step(&mut p, &g, &mut acc, &cfg),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(p.data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = RmsPropConfig::default();
        let mut p = Tensor::<f32>::zeros(&[2]);
        let mut acc = Tensor::zeros(&[2]);
        assert!(rmsprop_step(&mut p, &Tensor::zeros(&[3]), &mut acc, &cfg).is_err());
    }
}
