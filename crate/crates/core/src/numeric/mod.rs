//! Numerical substrate: tensors, convolution, activations, dropout,
//! RMSProp, seeded randomness and a finite-difference checker.

pub mod conv;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use conv::{conv2d, conv2d_backward, conv_out_len, Conv2d, ConvGrads};
pub use gradcheck::grad_check;
pub use ops::{dropout, dropout_backward, sigmoid, softmax_in_place, tanh_backward, tanh_forward};
pub use optim::{rmsprop_step, RmsProp, RmsPropConfig};
pub use rng::{derive_seed, seeded, Rng};
pub use tensor::{Real, Tensor};
