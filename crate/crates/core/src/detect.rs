//! Fully-convolutional left-side line detector.
//!
//! A conv/MDLSTM stack followed by a 1x1 convolution head. Every output cell
//! predicts `A` candidates, each with a confidence and `K` coordinates:
//!
//! | K | coordinates                                  |
//! |---|----------------------------------------------|
//! | 2 | x_left, y_bottom                             |
//! | 3 | x_left, y_bottom, height                     |
//! | 4 | x_left, y_bottom, width, height              |
//!
//! All coordinates are normalised by the page width. Positions are sigmoid
//! offsets around the predicting cell's centre,
//! `x = (j + 1/2 + s * (sigmoid(r_x) - 1/2)) * S_x / W` with `s` the
//! configured cell span: `s = 1` keeps a candidate inside its own cell,
//! `s = 2` lets it reach half a cell past either edge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::match_loss::{match_and_loss, Assignment, MatchLossConfig};
use crate::numeric::{sigmoid, Conv2d, Real, Rng, Tensor};
use crate::stack::{FeatureStack, LayerSpec, StackCache};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub layers: Vec<LayerSpec>,
    /// Coordinates per object.
    pub coords: usize,
    /// Candidates per output cell.
    pub anchors: usize,
    pub threshold: f64,
    /// Largest representable line height in pixels; `None` means twice the
    /// vertical cell size.
    pub h_max: Option<f64>,
    pub dropout: f64,
    /// Width of the reachable position range, in cells.
    pub cell_span: f64,
}

fn conv(features: usize, filter: (usize, usize), stride: (usize, usize)) -> LayerSpec {
    LayerSpec::Conv {
        features,
        filter,
        stride,
    }
}

impl DetectorConfig {
    /// The full-size architecture: five convolutions interleaved with four
    /// MDLSTM layers, 20 triplet candidates per cell.
    pub fn table_one() -> Self {
        Self {
            layers: vec![
                conv(12, (4, 4), (3, 3)),
                LayerSpec::Lstm { hidden: 12 },
                conv(16, (4, 3), (3, 2)),
                LayerSpec::Lstm { hidden: 16 },
                conv(24, (6, 3), (4, 2)),
                LayerSpec::Lstm { hidden: 24 },
                conv(30, (4, 3), (3, 2)),
                LayerSpec::Lstm { hidden: 30 },
                conv(36, (3, 2), (2, 1)),
            ],
            coords: 3,
            anchors: 20,
            threshold: 0.5,
            h_max: None,
            dropout: 0.5,
            cell_span: 2.0,
        }
    }

    /// Desk-scale detector with the same layer types, sized for the
    /// synthetic corpus defaults.
    pub fn miniature() -> Self {
        Self {
            layers: vec![
                conv(8, (4, 4), (4, 4)),
                LayerSpec::Lstm { hidden: 8 },
                conv(16, (3, 3), (2, 2)),
                LayerSpec::Lstm { hidden: 16 },
                conv(24, (2, 2), (1, 1)),
            ],
            coords: 3,
            anchors: 2,
            threshold: 0.5,
            h_max: None,
            dropout: 0.0,
            cell_span: 2.0,
        }
    }

    pub fn with_coords(mut self, k: usize) -> Self {
        self.coords = k;
        self
    }

    pub fn with_anchors(mut self, a: usize) -> Self {
        self.anchors = a;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_span > 0.0 && self.cell_span.is_finite()) {
            return Err(Error::Config(format!(
                "cell span must be positive, got {}",
                self.cell_span
            )));
        }
        if !(2..=4).contains(&self.coords) {
            return Err(Error::Config(format!("K must be 2, 3 or 4, got {}", self.coords)));
        }
        if self.anchors == 0 {
            return Err(Error::Config("at least one candidate per cell".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1]", self.threshold)));
        }
        if !matches!(self.layers.first(), Some(LayerSpec::Conv { .. })) {
            return Err(Error::Config("detector must start with a convolution".into()));
        }
        if let Some(h) = self.h_max {
            if !(h > 0.0) {
                return Err(Error::Config("h_max must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn head_channels(&self) -> usize {
        (self.coords + 1) * self.anchors
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletCandidate {
    /// `K` coordinates normalised by page width.
    pub coords: Vec<f64>,
    pub confidence: f64,
    /// Output cell row, column and anchor slot.
    pub cell: (usize, usize, usize),
}

impl TripletCandidate {
    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn y(&self) -> f64 {
        self.coords[1]
    }

    /// Line height, when the coordinate set carries one.
    pub fn height(&self) -> Option<f64> {
        match self.coords.len() {
            3 => Some(self.coords[2]),
            4 => Some(self.coords[3]),
            _ => None,
        }
    }

    /// `(x_left, y_bottom, height)` view used by triplet metrics.
    pub fn triplet(&self) -> Option<[f64; 3]> {
        self.height().map(|h| [self.x(), self.y(), h])
    }
}

/// Pixel box in image coordinates (origin top-left, y downward).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineBox {
    pub x_left: f64,
    pub y_top: f64,
    pub x_right: f64,
    pub y_bottom: f64,
}

impl LineBox {
    pub fn width(&self) -> f64 {
        self.x_right - self.x_left
    }

    pub fn height(&self) -> f64 {
        self.y_bottom - self.y_top
    }
}

/// Turns a left-side detection into a crop that runs to the right page edge,
/// expanded by `margin` pixels on the left, top and bottom. Returns `None`
/// when clipping leaves an empty box.
pub fn triplet_to_box(t: &TripletCandidate, page_w: f64, page_h: f64, margin: f64) -> Option<LineBox> {
    let height = t.height().unwrap_or(0.0);
    let b = LineBox {
        x_left: (t.x() * page_w - margin).max(0.0),
        x_right: page_w,
        y_bottom: (t.y() * page_w + margin).min(page_h),
        y_top: (t.y() * page_w - height * page_w - margin).max(0.0),
    };
    (b.y_top < b.y_bottom && b.x_left < b.x_right).then_some(b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detector<T = f32> {
    pub config: DetectorConfig,
    pub stack: FeatureStack<T>,
    pub head: Conv2d<T>,
}

/// Loss, gradients and matching for one page.
pub struct DetectorStep<T> {
    pub loss: f64,
    pub grads: Vec<Tensor<T>>,
    pub assignment: Assignment,
}

impl<T: Real> Detector<T> {
    pub fn new(config: DetectorConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let stack = FeatureStack::new(1, &config.layers, config.dropout, rng)?;
        let feat = stack.out_features(1);
        let head = Conv2d::new(feat, config.head_channels(), (1, 1), (1, 1), rng);
        Ok(Self { config, stack, head })
    }

    /// Parameter count of every layer, head last.
    pub fn layer_param_counts(&self) -> Vec<usize> {
        let mut v = self.stack.param_counts();
        v.push(self.head.param_count());
        v
    }

    pub fn param_count(&self) -> usize {
        self.layer_param_counts().iter().sum()
    }

    /// Feature-map `(channels, height, width)` after every layer, head last.
    pub fn feature_map_sizes(&self, h: usize, w: usize) -> Result<Vec<(usize, usize, usize)>> {
        let mut v = self.stack.shapes(1, h, w).ok_or_else(|| self.too_small(h, w))?;
        let &(_, gh, gw) = v.last().expect("non-empty stack");
        v.push((self.head.c_out(), gh, gw));
        Ok(v)
    }

    pub fn grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let v = self.feature_map_sizes(h, w)?;
        let &(_, gh, gw) = v.last().expect("non-empty");
        Ok((gh, gw))
    }

    /// Cumulative `(S_y, S_x)`.
    pub fn cell_size(&self) -> (usize, usize) {
        self.stack.stride()
    }

    pub fn min_input(&self) -> (usize, usize) {
        self.stack.min_input(1, 1)
    }

    pub fn h_max(&self) -> f64 {
        self.config.h_max.unwrap_or(2.0 * self.cell_size().0 as f64)
    }

    fn too_small(&self, h: usize, w: usize) -> Error {
        let (min_h, min_w) = self.min_input();
        Error::InputTooSmall {
            min_h,
            min_w,
            actual_h: h,
            actual_w: w,
        }
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<(usize, usize)> {
        let (c, h, w) = image.dims3()?;
        if c != 1 {
            return Err(Error::dim("image channels", 1, c));
        }
        let (min_h, min_w) = self.min_input();
        if h < min_h || w < min_w {
            return Err(self.too_small(h, w));
        }
        Ok((h, w))
    }

    /// Raw head output `[(K+1)*A, gh, gw]` in inference mode.
    pub fn forward_raw(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_image(image)?;
        self.head.forward(&self.stack.forward(image)?)
    }

    /// Every candidate of every cell, in `(row, column, anchor)` order.
    pub fn decode(&self, raw: &Tensor<T>, page_w: usize) -> Result<Vec<TripletCandidate>> {
        let (ch, gh, gw) = raw.dims3()?;
        let k = self.config.coords;
        if ch != self.config.head_channels() {
            return Err(Error::dim("head channels", self.config.head_channels(), ch));
        }
        let plane = gh * gw;
        let d = raw.data();
        let mut out = Vec::with_capacity(plane * self.config.anchors);
        for i in 0..gh {
            for j in 0..gw {
                for a in 0..self.config.anchors {
                    let at = |q: usize| d[(a * (k + 1) + q) * plane + i * gw + j].f64();
                    let coords = (0..k)
                        .map(|q| {
                            let (offset, gain) = self.coord_affine(q, i, j, page_w);
                            offset + gain * sigmoid(at(q + 1))
                        })
                        .collect();
                    out.push(TripletCandidate {
                        coords,
                        confidence: sigmoid(at(0)),
                        cell: (i, j, a),
                    });
                }
            }
        }
        Ok(out)
    }

    /// Coordinate `q` decodes as `offset + gain * sigmoid(raw)`.
    fn coord_affine(&self, q: usize, i: usize, j: usize, page_w: usize) -> (f64, f64) {
        let (sy, sx) = self.cell_size();
        let w = page_w as f64;
        let span = self.config.cell_span;
        let position = |cell: usize, size: usize| {
            (
                (cell as f64 + 0.5 - span / 2.0) * size as f64 / w,
                span * size as f64 / w,
            )
        };
        match (self.config.coords, q) {
            (_, 0) => position(j, sx),
            (_, 1) => position(i, sy),
            (4, 2) => (0.0, 1.0),
            _ => (0.0, self.h_max() / w),
        }
    }

    /// Candidates with confidence strictly above `threshold`, most
    /// confident first.
    pub fn detect(&self, image: &Tensor<T>, threshold: f64) -> Result<Vec<TripletCandidate>> {
        let (_, w) = self.check_image(image)?;
        let raw = self.forward_raw(image)?;
        let mut c: Vec<_> = self
            .decode(&raw, w)?
            .into_iter()
            .filter(|c| c.confidence > threshold)
            .collect();
        c.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Ok(c)
    }

    /// Matching loss and parameter gradients for one page. `targets` hold
    /// `K` page-width-normalised coordinates per reference line.
    pub fn compute_gradients(
        &self,
        image: &Tensor<T>,
        targets: &[Vec<f64>],
        loss_config: &MatchLossConfig,
        dropout_rng: Option<&mut Rng>,
    ) -> Result<DetectorStep<T>> {
        let (_, page_w) = self.check_image(image)?;
        let (features, cache): (Tensor<T>, StackCache<T>) = self.stack.forward_train(image, dropout_rng)?;
        let raw = self.head.forward(&features)?;
        let cands = self.decode(&raw, page_w)?;
        let ml = match_and_loss(&cands, targets, loss_config)?;

        let (_, gh, gw) = raw.dims3()?;
        let k = self.config.coords;
        let plane = gh * gw;
        let mut g_raw = Tensor::<T>::zeros(raw.shape());
        {
            let rd = raw.data();
            let gd = g_raw.data_mut();
            for (n, c) in cands.iter().enumerate() {
                let (i, j, a) = c.cell;
                let idx = |q: usize| (a * (k + 1) + q) * plane + i * gw + j;
                // dc/draw = c(1-c)
                gd[idx(0)] = T::of(ml.grad_confidence[n] * c.confidence * (1.0 - c.confidence));
                for q in 0..k {
                    let gl = ml.grad_coords[n][q];
                    if gl != 0.0 {
                        let s = sigmoid(rd[idx(q + 1)].f64());
                        let (_, gain) = self.coord_affine(q, i, j, page_w);
                        gd[idx(q + 1)] = T::of(gl * gain * s * (1.0 - s));
                    }
                }
            }
        }
        let hg = self.head.backward(&features, &g_raw)?;
        let (_, mut grads) = self.stack.backward(&cache, hg.input)?;
        grads.push(hg.filters);
        grads.push(hg.bias);
        Ok(DetectorStep {
            loss: ml.loss,
            grads,
            assignment: ml.assignment,
        })
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

    pub fn cast<U: Real>(&self) -> Detector<U> {
        Detector {
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
