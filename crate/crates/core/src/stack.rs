//! Interleaved convolution / MDLSTM feature stack shared by the detector and
//! the line recognizer.
//!
//! Every convolution stage is followed by `tanh` and (in training) dropout.
//! LSTM stages keep the feature count unchanged in the default layouts but
//! may change it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdlstm::{MdLstm, MdLstmCache};
use crate::numeric::{dropout, dropout_backward, tanh_backward, Conv2d, Real, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        features: usize,
        filter: (usize, usize),
        stride: (usize, usize),
    },
    Lstm {
        hidden: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stage<T = f32> {
    Conv(Conv2d<T>),
    Lstm(MdLstm<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack<T = f32> {
    pub stages: Vec<Stage<T>>,
    pub dropout: f64,
}

enum StageCache<T> {
    Conv {
        input: Tensor<T>,
        activated: Tensor<T>,
        mask: Option<Tensor<T>>,
    },
    Lstm(MdLstmCache<T>),
}

pub struct StackCache<T> {
    stages: Vec<StageCache<T>>,
}

impl<T: Real> FeatureStack<T> {
    pub fn new(in_features: usize, layers: &[LayerSpec], dropout: f64, rng: &mut Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let mut features = in_features;
        let mut stages = Vec::with_capacity(layers.len());
        for spec in layers {
            match *spec {
                LayerSpec::Conv {
                    features: out,
                    filter,
                    stride,
                } => {
                    if out == 0 || filter.0 == 0 || filter.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                        return Err(Error::Config(format!("degenerate convolution {spec:?}")));
                    }
                    stages.push(Stage::Conv(Conv2d::new(features, out, filter, stride, rng)));
                    features = out;
                }
                LayerSpec::Lstm { hidden } => {
                    if hidden == 0 {
                        return Err(Error::Config("LSTM with zero hidden units".into()));
                    }
                    stages.push(Stage::Lstm(MdLstm::new(features, hidden, rng)));
                    features = hidden;
                }
            }
        }
        Ok(Self { stages, dropout })
    }

    pub fn out_features(&self, in_features: usize) -> usize {
        match self.stages.last() {
            Some(Stage::Conv(c)) => c.c_out(),
            Some(Stage::Lstm(l)) => l.hidden_size(),
            None => in_features,
        }
    }

    pub fn param_counts(&self) -> Vec<usize> {
        self.stages
            .iter()
            .map(|s| match s {
                Stage::Conv(c) => c.param_count(),
                Stage::Lstm(l) => l.param_count(),
            })
            .collect()
    }

    /// Feature-map size after each stage.
    pub fn shapes(&self, in_features: usize, h: usize, w: usize) -> Option<Vec<(usize, usize, usize)>> {
        let mut cur = (in_features, h, w);
        let mut out = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            cur = match s {
                Stage::Conv(c) => {
                    let (oh, ow) = c.out_size(cur.1, cur.2)?;
                    (c.c_out(), oh, ow)
                }
                Stage::Lstm(l) => (l.hidden_size(), cur.1, cur.2),
            };
            out.push(cur);
        }
        Some(out)
    }

    /// Cumulative (vertical, horizontal) stride.
    pub fn stride(&self) -> (usize, usize) {
        self.stages.iter().fold((1, 1), |(sy, sx), s| match s {
            Stage::Conv(c) => (sy * c.stride.0, sx * c.stride.1),
            Stage::Lstm(_) => (sy, sx),
        })
    }

    /// Smallest input producing at least `out_h x out_w` final cells.
    pub fn min_input(&self, out_h: usize, out_w: usize) -> (usize, usize) {
        self.stages.iter().rev().fold((out_h, out_w), |(h, w), s| match s {
            Stage::Conv(c) => {
                let (fh, fw) = c.filter();
                ((h - 1) * c.stride.0 + fh, (w - 1) * c.stride.1 + fw)
            }
            Stage::Lstm(_) => (h, w),
        })
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for s in &self.stages {
            x = match s {
                Stage::Conv(c) => c.forward(&x)?.map(|v| v.tanh()),
                Stage::Lstm(l) => l.forward(&x)?.0,
            };
        }
        Ok(x)
    }

    /// Training forward: applies dropout (when `rng` is given) and keeps
    /// what the backward pass needs.
    pub fn forward_train(&self, input: &Tensor<T>, mut rng: Option<&mut Rng>) -> Result<(Tensor<T>, StackCache<T>)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            match s {
                Stage::Conv(c) => {
                    let activated = c.forward(&x)?.map(|v| v.tanh());
                    let (out, mask) = match rng.as_deref_mut() {
                        Some(r) => dropout(&activated, self.dropout, r, true),
                        None => (activated.clone(), None),
                    };
                    caches.push(StageCache::Conv {
                        input: std::mem::replace(&mut x, out),
                        activated,
                        mask,
                    });
                }
                Stage::Lstm(l) => {
                    let (out, cache) = l.forward(&x)?;
                    caches.push(StageCache::Lstm(cache));
                    x = out;
                }
            }
        }
        Ok((x, StackCache { stages: caches }))
    }

    /// Returns the input gradient and per-parameter gradients in
    /// [`FeatureStack::params`] order.
    pub fn backward(&self, cache: &StackCache<T>, grad_out: Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut grads: Vec<Vec<Tensor<T>>> = Vec::with_capacity(self.stages.len());
        let mut g = grad_out;
        for (s, c) in self.stages.iter().zip(&cache.stages).rev() {
            match (s, c) {
                (Stage::Conv(conv), StageCache::Conv { input, activated, mask }) => {
                    let g_act = dropout_backward(mask.as_ref(), g);
                    let g_pre = tanh_backward(activated, &g_act);
                    let cg = conv.backward(input, &g_pre)?;
                    grads.push(vec![cg.filters, cg.bias]);
                    g = cg.input;
                }
                (Stage::Lstm(l), StageCache::Lstm(lc)) => {
                    let lg = l.backward(lc, &g)?;
                    grads.push(vec![lg.weights]);
                    g = lg.input;
                }
                _ => unreachable!("cache built by forward_train"),
            }
        }
        grads.reverse();
        Ok((g, grads.into_iter().flatten().collect()))
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            match s {
                Stage::Conv(c) => {
                    out.push((format!("stage{i}.conv.filters"), &c.filters));
                    out.push((format!("stage{i}.conv.bias"), &c.bias));
                }
                Stage::Lstm(l) => out.push((format!("stage{i}.lstm.weights"), &l.weights)),
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            match s {
                Stage::Conv(c) => {
                    out.push(&mut c.filters);
                    out.push(&mut c.bias);
                }
                Stage::Lstm(l) => out.push(&mut l.weights),
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> FeatureStack<U> {
        FeatureStack {
            stages: self
                .stages
                .iter()
                .map(|s| match s {
                    Stage::Conv(c) => Stage::Conv(Conv2d {
                        filters: c.filters.cast(),
                        bias: c.bias.cast(),
                        stride: c.stride,
                    }),
                    Stage::Lstm(l) => Stage::Lstm(
                        MdLstm::from_weights(l.input_size(), l.hidden_size(), l.weights.cast())
                            .expect("shape preserved by cast"),
                    ),
                })
                .collect(),
            dropout: self.dropout,
        }
    }
}
