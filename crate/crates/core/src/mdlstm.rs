//! Four-direction two-dimensional LSTM.
//!
//! Each direction scans the grid from one corner. At position `(y, x)` the
//! cell sees the input vector plus the hidden and cell states of its two
//! already-visited neighbours: the horizontal predecessor `(y, x - dx)` and
//! the vertical predecessor `(y - dy, x)`. Missing neighbours contribute a
//! zero state. Five gate units per hidden feature:
//!
//! ```text
//! i  = sigmoid(a_i)         input gate
//! fx = sigmoid(a_fx)        forget gate for the horizontal predecessor
//! fy = sigmoid(a_fy)        forget gate for the vertical predecessor
//! o  = sigmoid(a_o)         output gate
//! g  = tanh(a_g)            cell candidate
//! c  = i*g + fx*c_x + fy*c_y
//! h  = o * tanh(c)
//! ```
//!
//! The layer output is the elementwise sum of the four directional `h`.
//! No peepholes and no output projection, so the parameter count is
//! `4 * 5 * (I + 2H + 1) * H`.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, Real, Rng, Tensor};

/// Scan directions as `(dy, dx)`: `+1` scans towards increasing index.
pub const DIRECTIONS: [(isize, isize); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

const GATES: usize = 5;
const GATE_I: usize = 0;
const GATE_FX: usize = 1;
const GATE_FY: usize = 2;
const GATE_O: usize = 3;
const GATE_G: usize = 4;

/// Weights are stored as one tensor `[4, 5H, I + 2H + 1]`. Rows are grouped
/// by gate (`i, fx, fy, o, g`, `H` rows each); columns hold the input
/// weights, the horizontal-predecessor weights, the vertical-predecessor
/// weights and the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct MdLstm<T = f32> {
    pub weights: Tensor<T>,
    input: usize,
    hidden: usize,
}

pub fn param_count(input: usize, hidden: usize) -> usize {
    4 * GATES * (input + 2 * hidden + 1) * hidden
}

pub struct MdLstmCache<T> {
    input_hwc: Vec<T>,
    height: usize,
    width: usize,
    dirs: Vec<DirState<T>>,
}

struct DirState<T> {
    /// Post-activation gate values, `5H` per position.
    gates: Vec<T>,
    cell: Vec<T>,
    tanh_cell: Vec<T>,
    hidden: Vec<T>,
}

pub struct MdLstmGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
}

impl<T: Real> MdLstm<T> {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let z = input + 2 * hidden + 1;
        let lim_in = (6.0 / (input + hidden) as f64).sqrt();
        let lim_rec = (6.0 / (2 * hidden) as f64).sqrt();
        let weights = Tensor::from_fn(&[4, GATES * hidden, z], |idx| {
            let col = idx % z;
            if col < input {
                T::of(rng.random_range(-lim_in..lim_in))
            } else if col < input + 2 * hidden {
                T::of(rng.random_range(-lim_rec..lim_rec))
            } else {
                T::zero()
            }
        });
        Self { weights, input, hidden }
    }

    pub fn from_weights(input: usize, hidden: usize, weights: Tensor<T>) -> Result<Self> {
        let expected = [4, GATES * hidden, input + 2 * hidden + 1];
        if weights.shape() != expected {
            return Err(Error::dim("mdlstm weights", param_count(input, hidden), weights.len()));
        }
        Ok(Self { weights, input, hidden })
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    fn z_len(&self) -> usize {
        self.input + 2 * self.hidden + 1
    }

    fn dir_weights(&self, d: usize) -> &[T] {
        let n = GATES * self.hidden * self.z_len();
        &self.weights.data()[d * n..(d + 1) * n]
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, MdLstmCache<T>)> {
        let (c, h, w) = input.dims3()?;
        if c != self.input {
            return Err(Error::dim("mdlstm input features", self.input, c));
        }
        let hw = h * w;
        let mut input_hwc = vec![T::zero(); hw * c];
        for (ch, plane) in input.data().chunks_exact(hw).enumerate() {
            for (pos, &v) in plane.iter().enumerate() {
                input_hwc[pos * c + ch] = v;
            }
        }
        let dirs: Vec<DirState<T>> = (0..4).map(|d| self.scan_forward(d, &input_hwc, h, w)).collect();

        let nh = self.hidden;
        let mut out = Tensor::zeros(&[nh, h, w]);
        let od = out.data_mut();
        for st in &dirs {
            for pos in 0..hw {
                for k in 0..nh {
                    od[k * hw + pos] += st.hidden[pos * nh + k];
                }
            }
        }
        Ok((
            out,
            MdLstmCache {
                input_hwc,
                height: h,
                width: w,
                dirs,
            },
        ))
    }

    fn scan_forward(&self, d: usize, x: &[T], h: usize, w: usize) -> DirState<T> {
        let (dy, dx) = DIRECTIONS[d];
        let (ni, nh) = (self.input, self.hidden);
        let zl = self.z_len();
        let rows = GATES * nh;
        let wts = self.dir_weights(d);
        let hw = h * w;
        let mut st = DirState {
            gates: vec![T::zero(); hw * rows],
            cell: vec![T::zero(); hw * nh],
            tanh_cell: vec![T::zero(); hw * nh],
            hidden: vec![T::zero(); hw * nh],
        };
        let mut z = vec![T::zero(); zl];
        let mut a = vec![T::zero(); rows];
        for (y, xi) in scan_order(h, w, dy, dx) {
            let pos = y * w + xi;
            let px = neighbour(xi, dx, w).map(|nx| y * w + nx);
            let py = neighbour(y, dy, h).map(|ny| ny * w + xi);
            z[..ni].copy_from_slice(&x[pos * ni..(pos + 1) * ni]);
            fill_state(&mut z[ni..ni + nh], &st.hidden, px, nh);
            fill_state(&mut z[ni + nh..ni + 2 * nh], &st.hidden, py, nh);
            z[zl - 1] = T::one();
            for (r, av) in a.iter_mut().enumerate() {
                *av = dot(&wts[r * zl..(r + 1) * zl], &z);
            }
            let g = &mut st.gates[pos * rows..(pos + 1) * rows];
            for k in 0..nh {
                let gi = sigmoid(a[GATE_I * nh + k]);
                let gfx = sigmoid(a[GATE_FX * nh + k]);
                let gfy = sigmoid(a[GATE_FY * nh + k]);
                let go = sigmoid(a[GATE_O * nh + k]);
                let gg = a[GATE_G * nh + k].tanh();
                let cx = px.map_or(T::zero(), |p| st.cell[p * nh + k]);
                let cy = py.map_or(T::zero(), |p| st.cell[p * nh + k]);
                let c = gi * gg + gfx * cx + gfy * cy;
                let tc = c.tanh();
                g[GATE_I * nh + k] = gi;
                g[GATE_FX * nh + k] = gfx;
                g[GATE_FY * nh + k] = gfy;
                g[GATE_O * nh + k] = go;
                g[GATE_G * nh + k] = gg;
                st.cell[pos * nh + k] = c;
                st.tanh_cell[pos * nh + k] = tc;
                st.hidden[pos * nh + k] = go * tc;
            }
        }
        st
    }

    /// Gradients given `dL/d(output)`; the forward cache supplies activations.
    pub fn backward(&self, cache: &MdLstmCache<T>, grad_out: &Tensor<T>) -> Result<MdLstmGrads<T>> {
        let (h, w) = (cache.height, cache.width);
        let nh = self.hidden;
        if grad_out.shape() != [nh, h, w] {
            return Err(Error::dim("mdlstm output gradient", nh * h * w, grad_out.len()));
        }
        let hw = h * w;
        let mut g_hwc = vec![T::zero(); hw * nh];
        for (k, plane) in grad_out.data().chunks_exact(hw).enumerate() {
            for (pos, &v) in plane.iter().enumerate() {
                g_hwc[pos * nh + k] = v;
            }
        }
        let mut d_weights = Tensor::zeros(self.weights.shape());
        let mut dx_hwc = vec![T::zero(); hw * self.input];
        let per_dir = GATES * nh * self.z_len();
        for d in 0..4 {
            let dw = &mut d_weights.data_mut()[d * per_dir..(d + 1) * per_dir];
            self.scan_backward(d, cache, &g_hwc, dw, &mut dx_hwc);
        }
        let ni = self.input;
        let mut d_in = Tensor::zeros(&[ni, h, w]);
        let di = d_in.data_mut();
        for pos in 0..hw {
            for ch in 0..ni {
                di[ch * hw + pos] = dx_hwc[pos * ni + ch];
            }
        }
        Ok(MdLstmGrads {
            input: d_in,
            weights: d_weights,
        })
    }

    fn scan_backward(&self, d: usize, cache: &MdLstmCache<T>, g_hwc: &[T], dw: &mut [T], dx_hwc: &mut [T]) {
        let (dy, dx) = DIRECTIONS[d];
        let (h, w) = (cache.height, cache.width);
        let (ni, nh) = (self.input, self.hidden);
        let zl = self.z_len();
        let rows = GATES * nh;
        let wts = self.dir_weights(d);
        let st = &cache.dirs[d];
        let hw = h * w;
        let one = T::one();
        let mut dh_acc = vec![T::zero(); hw * nh];
        let mut dc_acc = vec![T::zero(); hw * nh];
        let mut z = vec![T::zero(); zl];
        let mut da = vec![T::zero(); rows];
        let mut dz = vec![T::zero(); zl];
        let mut dc_here = vec![T::zero(); nh];
        let order: Vec<(usize, usize)> = scan_order(h, w, dy, dx).collect();
        for &(y, xi) in order.iter().rev() {
            let pos = y * w + xi;
            let px = neighbour(xi, dx, w).map(|nx| y * w + nx);
            let py = neighbour(y, dy, h).map(|ny| ny * w + xi);
            let g = &st.gates[pos * rows..(pos + 1) * rows];
            for k in 0..nh {
                let dh = g_hwc[pos * nh + k] + dh_acc[pos * nh + k];
                let gi = g[GATE_I * nh + k];
                let gfx = g[GATE_FX * nh + k];
                let gfy = g[GATE_FY * nh + k];
                let go = g[GATE_O * nh + k];
                let gg = g[GATE_G * nh + k];
                let tc = st.tanh_cell[pos * nh + k];
                let dc = dh * go * (one - tc * tc) + dc_acc[pos * nh + k];
                let cx = px.map_or(T::zero(), |p| st.cell[p * nh + k]);
                let cy = py.map_or(T::zero(), |p| st.cell[p * nh + k]);
                da[GATE_I * nh + k] = dc * gg * gi * (one - gi);
                da[GATE_FX * nh + k] = dc * cx * gfx * (one - gfx);
                da[GATE_FY * nh + k] = dc * cy * gfy * (one - gfy);
                da[GATE_O * nh + k] = dh * tc * go * (one - go);
                da[GATE_G * nh + k] = dc * gi * (one - gg * gg);
                dc_here[k] = dc;
            }
            z[..ni].copy_from_slice(&cache.input_hwc[pos * ni..(pos + 1) * ni]);
            fill_state(&mut z[ni..ni + nh], &st.hidden, px, nh);
            fill_state(&mut z[ni + nh..ni + 2 * nh], &st.hidden, py, nh);
            z[zl - 1] = one;
            dz.fill(T::zero());
            for (r, &dar) in da.iter().enumerate() {
                if dar == T::zero() {
                    continue;
                }
                axpy(dar, &z, &mut dw[r * zl..(r + 1) * zl]);
                axpy(dar, &wts[r * zl..(r + 1) * zl], &mut dz);
            }
            for (dst, &v) in dx_hwc[pos * ni..(pos + 1) * ni].iter_mut().zip(&dz[..ni]) {
                *dst += v;
            }
            if let Some(p) = px {
                for k in 0..nh {
                    dh_acc[p * nh + k] += dz[ni + k];
                    dc_acc[p * nh + k] += dc_here[k] * g[GATE_FX * nh + k];
                }
            }
            if let Some(p) = py {
                for k in 0..nh {
                    dh_acc[p * nh + k] += dz[ni + nh + k];
                    dc_acc[p * nh + k] += dc_here[k] * g[GATE_FY * nh + k];
                }
            }
        }
    }
}

fn scan_order(h: usize, w: usize, dy: isize, dx: isize) -> impl Iterator<Item = (usize, usize)> {
    (0..h).flat_map(move |yi| {
        let y = if dy > 0 { yi } else { h - 1 - yi };
        (0..w).map(move |xi| (y, if dx > 0 { xi } else { w - 1 - xi }))
    })
}

/// Already-visited neighbour along one axis, if inside the grid.
fn neighbour(i: usize, step: isize, len: usize) -> Option<usize> {
    let n = i as isize - step;
    (n >= 0 && (n as usize) < len).then_some(n as usize)
}

fn fill_state<T: Real>(dst: &mut [T], states: &[T], pos: Option<usize>, n: usize) {
    match pos {
        Some(p) => dst.copy_from_slice(&states[p * n..(p + 1) * n]),
        None => dst.fill(T::zero()),
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // Independent lanes let the compiler vectorize.
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (xa, xb) in ca.zip(cb) {
        for k in 0..8 {
            lanes[k] += xa[k] * xb[k];
        }
    }
    lanes.iter().fold(tail, |s, &v| s + v)
}

#[inline]
fn axpy<T: Real>(k: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += k * xv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, seeded};

    fn random_layer(i: usize, h: usize, seed: u64, scale: f64) -> MdLstm<f64> {
        let mut rng = seeded(seed);
        let w = Tensor::from_fn(&[4, 5 * h, i + 2 * h + 1], |_| rng.random_range(-scale..scale));
        MdLstm::from_weights(i, h, w).unwrap()
    }

    #[test]
    fn table_one_parameter_counts() {
        assert_eq!(param_count(12, 12), 8880);
        assert_eq!(param_count(16, 16), 15680);
        assert_eq!(param_count(24, 24), 35040);
        assert_eq!(param_count(30, 30), 54600);
        assert_eq!(MdLstm::<f32>::new(12, 12, &mut seeded(0)).param_count(), 8880);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let layer = MdLstm::<f64>::from_weights(3, 4, Tensor::zeros(&[4, 20, 12])).unwrap();
        let x = Tensor::from_fn(&[3, 5, 6], |i| (i as f64).sin());
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.shape(), &[4, 5, 6]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_mismatch_is_an_error() {
        let layer = MdLstm::<f32>::new(3, 4, &mut seeded(0));
        assert!(matches!(
            layer.forward(&Tensor::zeros(&[2, 3, 3])),
            Err(Error::Dimension {
                expected: 3,
                actual: 2,
                ..
            })
        ));
    }

    /// Textbook LSTM cell step with zero previous state, written against
    /// separate per-gate weight matrices.
    fn scalar_lstm(
        x: &[f64],
        wi: &[Vec<f64>],
        bi: &[f64],
        wo: &[Vec<f64>],
        bo: &[f64],
        wg: &[Vec<f64>],
        bg: &[f64],
    ) -> Vec<f64> {
        let lin =
            |w: &[Vec<f64>], b: &[f64], k: usize| -> f64 { w[k].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[k] };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        (0..bi.len())
            .map(|k| {
                let i = sig(lin(wi, bi, k));
                let o = sig(lin(wo, bo, k));
                let g = lin(wg, bg, k).tanh();
                o * (i * g).tanh()
            })
            .collect()
    }

    #[test]
    fn single_position_matches_scalar_lstm_oracle() {
        let (ni, nh) = (3, 2);
        let mut rng = seeded(5);
        let mut mat = |r: usize, c: usize| -> Vec<Vec<f64>> {
            (0..r)
                .map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let wi = mat(nh, ni);
        let wo = mat(nh, ni);
        let wg = mat(nh, ni);
        let b = mat(3, nh);
        let x: Vec<f64> = vec![0.3, -0.7, 1.1];

        // Same gate weights in every direction; forget gates and recurrent
        // weights are irrelevant at 1x1 so they are filled with noise.
        let zl = ni + 2 * nh + 1;
        let mut w = Tensor::<f64>::zeros(&[4, 5 * nh, zl]);
        let mut noise = seeded(9);
        for d in 0..4 {
            for k in 0..nh {
                for (gate, src, bias) in [(GATE_I, &wi, &b[0]), (GATE_O, &wo, &b[1]), (GATE_G, &wg, &b[2])] {
                    let row = (d * 5 * nh + gate * nh + k) * zl;
                    w.data_mut()[row..row + ni].copy_from_slice(&src[k]);
                    for c in ni..zl - 1 {
                        w.data_mut()[row + c] = noise.random_range(-1.0..1.0);
                    }
                    w.data_mut()[row + zl - 1] = bias[k];
                }
                for gate in [GATE_FX, GATE_FY] {
                    let row = (d * 5 * nh + gate * nh + k) * zl;
                    for c in 0..zl {
                        w.data_mut()[row + c] = noise.random_range(-1.0..1.0);
                    }
                }
            }
        }
        let layer = MdLstm::from_weights(ni, nh, w).unwrap();
        let input = Tensor::new(vec![ni, 1, 1], x.clone()).unwrap();
        let (y, _) = layer.forward(&input).unwrap();
        let oracle = scalar_lstm(&x, &wi, &b[0], &wo, &b[1], &wg, &b[2]);
        for k in 0..nh {
            assert!(
                (y[k] - 4.0 * oracle[k]).abs() < 1e-12,
                "{} vs {}",
                y[k],
                4.0 * oracle[k]
            );
        }
    }

    fn check_gradients(layer: &MdLstm<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
        let (_, cache) = layer.forward(x).unwrap();
        let grads = layer.backward(&cache, r).unwrap();
        let nw = layer.weights.len();
        let mut point = layer.weights.data().to_vec();
        point.extend_from_slice(x.data());
        let mut analytic = grads.weights.data().to_vec();
        analytic.extend_from_slice(grads.input.data());
        let (ni, nh) = (layer.input_size(), layer.hidden_size());
        grad_check(
            |p| {
                let l = MdLstm::from_weights(
                    ni,
                    nh,
                    Tensor::new(layer.weights.shape().to_vec(), p[..nw].to_vec()).unwrap(),
                )
                .unwrap();
                let xi = Tensor::new(x.shape().to_vec(), p[nw..].to_vec()).unwrap();
                let (y, _) = l.forward(&xi).unwrap();
                y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
            },
            &point,
            &analytic,
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let layer = random_layer(2, 3, 21, 0.6);
        let mut rng = seeded(22);
        let x = Tensor::from_fn(&[2, 3, 4], |_| rng.random_range(-1.0..1.0));
        let r = Tensor::from_fn(&[3, 3, 4], |_| rng.random_range(-1.0..1.0));
        let err = check_gradients(&layer, &x, &r);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn sum_loss_at_zero_weights_matches_finite_differences() {
        let layer = MdLstm::<f64>::from_weights(2, 2, Tensor::zeros(&[4, 10, 7])).unwrap();
        let x = Tensor::from_fn(&[2, 2, 3], |i| 0.2 * i as f64 - 0.5);
        let err = check_gradients(&layer, &x, &Tensor::full(&[2, 2, 3], 1.0));
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let layer = random_layer(2, 3, 4, 0.5);
        let x = Tensor::from_fn(&[2, 3, 3], |i| (i as f64 * 0.3).cos());
        let (_, cache) = layer.forward(&x).unwrap();
        let g = layer.backward(&cache, &Tensor::zeros(&[3, 3, 3])).unwrap();
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_mirror_symmetry() {
        let (ni, nh) = (2, 3);
        let layer = random_layer(ni, nh, 8, 0.7);
        let (h, w) = (3, 5);
        let mut rng = seeded(1);
        let x = Tensor::from_fn(&[ni, h, w], |_| rng.random_range(-1.0..1.0));
        let mirror = |t: &Tensor<f64>| {
            let (c, h, w) = t.dims3().unwrap();
            Tensor::from_fn(&[c, h, w], |i| {
                let (ch, rest) = (i / (h * w), i % (h * w));
                let (y, xx) = (rest / w, rest % w);
                t[ch * h * w + y * w + (w - 1 - xx)]
            })
        };
        // Swap the roles of left-to-right and right-to-left scans.
        let per = layer.weights.len() / 4;
        let src = layer.weights.data();
        let mut swapped = Vec::with_capacity(src.len());
        for d in [1, 0, 3, 2] {
            swapped.extend_from_slice(&src[d * per..(d + 1) * per]);
        }
        let mirrored_layer =
            MdLstm::from_weights(ni, nh, Tensor::new(layer.weights.shape().to_vec(), swapped).unwrap()).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        let (ym, _) = mirrored_layer.forward(&mirror(&x)).unwrap();
        assert!(mirror(&y).max_abs_diff(&ym) < 1e-12);
    }
}
