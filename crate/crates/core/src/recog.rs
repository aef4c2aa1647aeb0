//! Text line recognizer: conv/MDLSTM stack, vertical sum, 1x1 class head and
//! a per-column softmax, trained with CTC on `transcript + EOL`.

use serde::{Deserialize, Serialize};

use crate::ctc::{best_path_decode, ctc_loss_from_log_probs, Alphabet};
use crate::detect::LineBox;
use crate::error::{Error, Result};
use crate::numeric::{softmax_in_place, Conv2d, Real, RmsProp, Rng, Tensor};
use crate::stack::{FeatureStack, LayerSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognizerConfig {
    /// Line images are rescaled to this height.
    pub height: usize,
    pub layers: Vec<LayerSpec>,
    pub alphabet: Alphabet,
    pub dropout: f64,
    /// Append end-of-line to every training target.
    #[serde(default = "yes")]
    pub eol: bool,
}

fn yes() -> bool {
    true
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            height: 32,
            layers: vec![
                LayerSpec::Conv {
                    features: 8,
                    filter: (4, 4),
                    stride: (4, 2),
                },
                LayerSpec::Lstm { hidden: 8 },
                LayerSpec::Conv {
                    features: 16,
                    filter: (4, 4),
                    stride: (4, 2),
                },
                LayerSpec::Lstm { hidden: 16 },
            ],
            alphabet: Alphabet::toy(),
            dropout: 0.0,
            eol: true,
        }
    }
}

/// Crops `bx` (rounded outwards to whole pixels) and rescales it
/// isotropically to `height` rows with bilinear interpolation.
pub fn prepare_line(page: &Tensor<f32>, bx: &LineBox, height: usize) -> Result<Tensor<f32>> {
    let (c, ph, pw) = page.dims3()?;
    if c != 1 {
        return Err(Error::dim("image channels", 1, c));
    }
    let x0 = bx.x_left.floor().max(0.0) as usize;
    let y0 = bx.y_top.floor().max(0.0) as usize;
    let x1 = (bx.x_right.ceil().max(0.0) as usize).min(pw);
    let y1 = (bx.y_bottom.ceil().max(0.0) as usize).min(ph);
    if x1 <= x0 || y1 <= y0 || height == 0 {
        return Err(Error::EmptyCrop);
    }
    let (ch, cw) = (y1 - y0, x1 - x0);
    let crop = Tensor::from_fn(&[1, ch, cw], |k| page.data()[(y0 + k / cw) * pw + x0 + k % cw]);
    let out_w = ((cw * height) as f64 / ch as f64).round().max(1.0) as usize;
    Ok(resize_bilinear(&crop, height, out_w))
}

/// Half-pixel-centre bilinear resampling with edge clamping.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let (_, h, w) = img.dims3().expect("rank-3 image");
    let src = img.data();
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let p = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = p.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, (p - lo as f64) as f32)
            })
            .collect()
    };
    let (ys, xs) = (axis(h, out_h), axis(w, out_w));
    Tensor::from_fn(&[1, out_h, out_w], |k| {
        let (y0, y1, fy) = ys[k / out_w];
        let (x0, x1, fx) = xs[k % out_w];
        let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
        let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recognizer<T = f32> {
    pub config: RecognizerConfig,
    pub stack: FeatureStack<T>,
    pub head: Conv2d<T>,
}

pub struct RecognizerStep<T> {
    pub loss: f64,
    pub grads: Vec<Tensor<T>>,
}

impl<T: Real> Recognizer<T> {
    pub fn new(config: RecognizerConfig, rng: &mut Rng) -> Result<Self> {
        if config.height == 0 {
            return Err(Error::Config("line height must be positive".into()));
        }
        let stack = FeatureStack::new(1, &config.layers, config.dropout, rng)?;
        if stack.shapes(1, config.height, stack.min_input(1, 1).1).is_none() {
            return Err(Error::Config(format!(
                "stack needs at least {} rows, lines have {}",
                stack.min_input(1, 1).0,
                config.height
            )));
        }
        let head = Conv2d::new(stack.out_features(1), config.alphabet.classes(), (1, 1), (1, 1), rng);
        Ok(Self { config, stack, head })
    }

    pub fn param_count(&self) -> usize {
        self.stack.param_counts().iter().sum::<usize>() + self.head.param_count()
    }

    /// Narrowest line image the stack accepts.
    pub fn min_width(&self) -> usize {
        self.stack.min_input(1, 1).1
    }

    /// Horizontal pixels per output frame.
    pub fn frame_stride(&self) -> usize {
        self.stack.stride().1
    }

    /// Number of output frames for a line image of the given width.
    pub fn frames(&self, width: usize) -> Option<usize> {
        let s = self.stack.shapes(1, self.config.height, width)?;
        Some(s.last().map_or(width, |l| l.2))
    }

    fn check_line(&self, image: &Tensor<T>) -> Result<()> {
        let (c, h, w) = image.dims3()?;
        if c != 1 {
            return Err(Error::dim("image channels", 1, c));
        }
        if h != self.config.height {
            return Err(Error::dim("line height", self.config.height, h));
        }
        if w < self.min_width() {
            return Err(Error::InputTooSmall {
                min_h: self.config.height,
                min_w: self.min_width(),
                actual_h: h,
                actual_w: w,
            });
        }
        Ok(())
    }

    /// Sums the feature map over rows: `[F, gh, gw] -> [F, 1, gw]`.
    fn collapse(features: &Tensor<T>) -> Tensor<T> {
        let (f, gh, gw) = features.dims3().expect("rank-3 features");
        let d = features.data();
        Tensor::from_fn(&[f, 1, gw], |k| {
            let (c, x) = (k / gw, k % gw);
            (0..gh).fold(T::zero(), |acc, y| acc + d[(c * gh + y) * gw + x])
        })
    }

    /// Head scores laid out `[frames, classes]`.
    fn scores(&self, collapsed: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.head.forward(collapsed)?;
        let (classes, _, frames) = s.dims3()?;
        let d = s.data();
        Ok(Tensor::from_fn(&[frames, classes], |k| {
            d[(k % classes) * frames + k / classes]
        }))
    }

    /// Per-frame class posteriors `[frames, classes]`, inference mode.
    pub fn posteriors(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_line(image)?;
        let mut p = self.scores(&Self::collapse(&self.stack.forward(image)?))?;
        let classes = p.shape()[1];
        for row in p.data_mut().chunks_exact_mut(classes) {
            softmax_in_place(row);
        }
        Ok(p)
    }

    /// Best-path transcript (cut at the first end-of-line) and posteriors.
    pub fn recognize_line(&self, image: &Tensor<T>) -> Result<(String, Tensor<T>)> {
        let p = self.posteriors(image)?;
        Ok((best_path_decode(&p, &self.config.alphabet), p))
    }

    /// CTC target for a transcript: its labels followed by end-of-line
    /// unless `eol` is off.
    pub fn target(&self, transcript: &str) -> Result<Vec<usize>> {
        let mut t = self.config.alphabet.encode(transcript)?;
        if self.config.eol {
            t.push(self.config.alphabet.eol());
        }
        Ok(t)
    }

    /// CTC loss of `target` and gradients in [`Recognizer::params`] order.
    pub fn compute_gradients(
        &self,
        image: &Tensor<T>,
        target: &[usize],
        dropout_rng: Option<&mut Rng>,
    ) -> Result<RecognizerStep<T>> {
        self.check_line(image)?;
        let (features, cache) = self.stack.forward_train(image, dropout_rng)?;
        let collapsed = Self::collapse(&features);
        let scores = self.scores(&collapsed)?;
        let [frames, classes] = scores.shape()[..] else {
            unreachable!("scores are rank 2")
        };
        let mut log_probs = scores.cast::<f64>();
        for row in log_probs.data_mut().chunks_exact_mut(classes) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let ctc = ctc_loss_from_log_probs(&log_probs, target)?;

        let g = ctc.grad.data();
        let g_head = Tensor::from_fn(&[classes, 1, frames], |k| T::of(g[(k % frames) * classes + k / frames]));
        let hg = self.head.backward(&collapsed, &g_head)?;
        let (f, gh, gw) = features.dims3()?;
        let gc = hg.input.data();
        let g_features = Tensor::from_fn(&[f, gh, gw], |k| gc[(k / (gh * gw)) * gw + k % gw]);
        let (_, mut grads) = self.stack.backward(&cache, g_features)?;
        grads.push(hg.filters);
        grads.push(hg.bias);
        Ok(RecognizerStep { loss: ctc.nll, grads })
    }

    /// One RMSProp update on `transcript + EOL`; returns the loss.
    pub fn train_step(
        &mut self,
        image: &Tensor<T>,
        transcript: &str,
        optimizer: &mut RmsProp<T>,
        dropout_rng: Option<&mut Rng>,
    ) -> Result<f64> {
        let target = self.target(transcript)?;
        let step = self.compute_gradients(image, &target, dropout_rng)?;
        optimizer.step(self.params_mut(), &step.grads)?;
        Ok(step.loss)
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = self.stack.params();
        v.push(("head.filters".into(), &self.head.filters));
        v.push(("head.bias".into(), &self.head.bias));
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.stack.params_mut();
        v.push(&mut self.head.filters);
        v.push(&mut self.head.bias);
        v
    }

    pub fn cast<U: Real>(&self) -> Recognizer<U> {
        Recognizer {
            config: self.config.clone(),
            stack: self.stack.cast(),
            head: Conv2d {
                filters: self.head.filters.cast(),
                bias: self.head.bias.cast(),
                stride: self.head.stride,
            },
        }
    }
}
