//! Strided valid (unpadded) 2-D convolution with a hand-written backward pass.

use rand::Rng as _;

use super::rng::Rng;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Output extent of a valid convolution along one axis.
pub fn conv_out_len(input: usize, filter: usize, stride: usize) -> Option<usize> {
    (input >= filter && stride > 0).then(|| (input - filter) / stride + 1)
}

/// `input[C_in,H,W] * filters[C_out,C_in,f_h,f_w] + bias[C_out]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
    stride: (usize, usize),
) -> Result<Tensor<T>> {
    let g = Geometry::new(input, filters, stride)?;
    if bias.shape() != [g.c_out] {
        return Err(Error::dim("bias", g.c_out, bias.len()));
    }
    let mut out = Tensor::zeros(&[g.c_out, g.out_h, g.out_w]);
    let x = input.data();
    let w = filters.data();
    let plane = g.out_h * g.out_w;
    for (co, out_plane) in out.data_mut().chunks_exact_mut(plane).enumerate() {
        out_plane.fill(bias[co]);
        for ci in 0..g.c_in {
            for ky in 0..g.f_h {
                for kx in 0..g.f_w {
                    let wv = w[((co * g.c_in + ci) * g.f_h + ky) * g.f_w + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    for oy in 0..g.out_h {
                        let row = (ci * g.in_h + oy * g.s_h + ky) * g.in_w + kx;
                        let dst = &mut out_plane[oy * g.out_w..(oy + 1) * g.out_w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d += wv * x[row + ox * g.s_w];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub filters: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of a scalar loss given `grad_out = dL/d(conv2d output)`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    stride: (usize, usize),
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input, filters, stride)?;
    let expected = [g.c_out, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        let (axis, (&e, &a)) = expected
            .iter()
            .zip(grad_out.shape())
            .enumerate()
            .find(|(_, (e, a))| e != a)
            .unwrap_or((0, (&g.c_out, &0)));
        return Err(Error::dim(format!("grad axis {axis}"), e, a));
    }
    let mut d_in = Tensor::zeros(input.shape());
    let mut d_w = Tensor::zeros(filters.shape());
    let mut d_b = Tensor::zeros(&[g.c_out]);
    let x = input.data();
    let w = filters.data();
    let plane = g.out_h * g.out_w;
    let go = grad_out.data();
    for co in 0..g.c_out {
        let gp = &go[co * plane..(co + 1) * plane];
        d_b[co] = gp.iter().copied().sum();
        for ci in 0..g.c_in {
            for ky in 0..g.f_h {
                for kx in 0..g.f_w {
                    let wi = ((co * g.c_in + ci) * g.f_h + ky) * g.f_w + kx;
                    let wv = w[wi];
                    let mut acc = T::zero();
                    let dx = d_in.data_mut();
                    for oy in 0..g.out_h {
                        let row = (ci * g.in_h + oy * g.s_h + ky) * g.in_w + kx;
                        let grow = &gp[oy * g.out_w..(oy + 1) * g.out_w];
                        for (ox, &gv) in grow.iter().enumerate() {
                            let xi = row + ox * g.s_w;
                            acc += gv * x[xi];
                            dx[xi] += gv * wv;
                        }
                    }
                    d_w[wi] = acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: d_in,
        filters: d_w,
        bias: d_b,
    })
}

struct Geometry {
    c_in: usize,
    in_h: usize,
    in_w: usize,
    c_out: usize,
    f_h: usize,
    f_w: usize,
    s_h: usize,
    s_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new<T: Real>(input: &Tensor<T>, filters: &Tensor<T>, stride: (usize, usize)) -> Result<Self> {
        let (c_in, in_h, in_w) = input.dims3()?;
        let [c_out, fc_in, f_h, f_w] = filters.shape()[..] else {
            return Err(Error::dim("filter rank", 4, filters.rank()));
        };
        if fc_in != c_in {
            return Err(Error::dim("input channels", fc_in, c_in));
        }
        let (s_h, s_w) = stride;
        if s_h == 0 || s_w == 0 {
            return Err(Error::Config("convolution stride must be >= 1".into()));
        }
        let out_h = conv_out_len(in_h, f_h, s_h).ok_or_else(|| Error::dim("height", f_h, in_h))?;
        let out_w = conv_out_len(in_w, f_w, s_w).ok_or_else(|| Error::dim("width", f_w, in_w))?;
        Ok(Self {
            c_in,
            in_h,
            in_w,
            c_out,
            f_h,
            f_w,
            s_h,
            s_w,
            out_h,
            out_w,
        })
    }
}

/// Convolution layer parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T = f32> {
    pub filters: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    /// Glorot-uniform filters, zero bias.
    pub fn new(c_in: usize, c_out: usize, filter: (usize, usize), stride: (usize, usize), rng: &mut Rng) -> Self {
        let fan_in = c_in * filter.0 * filter.1;
        let fan_out = c_out * filter.0 * filter.1;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let filters = Tensor::from_fn(&[c_out, c_in, filter.0, filter.1], |_| {
            T::of(rng.random_range(-limit..limit))
        });
        Self {
            filters,
            bias: Tensor::zeros(&[c_out]),
            stride,
        }
    }

    pub fn c_in(&self) -> usize {
        self.filters.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.filters.shape()[0]
    }

    pub fn filter(&self) -> (usize, usize) {
        (self.filters.shape()[2], self.filters.shape()[3])
    }

    pub fn param_count(&self) -> usize {
        self.filters.len() + self.bias.len()
    }

    pub fn out_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (f_h, f_w) = self.filter();
        Some((
            conv_out_len(h, f_h, self.stride.0)?,
            conv_out_len(w, f_w, self.stride.1)?,
        ))
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(input, &self.filters, &self.bias, self.stride)
    }

    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        conv2d_backward(input, &self.filters, self.stride, grad_out)
    }
}
