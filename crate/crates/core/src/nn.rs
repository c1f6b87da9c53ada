//! Minimal CNN building blocks with explicit forward and backward passes.
//!
//! Everything operates on single samples — feature maps are `(channels, h, w)`
//! arrays without a batch axis — because the trainer parallelizes across
//! samples, not within layers. Convolutions lower to im2col + matrix
//! multiplication; backward passes recompute the column matrix instead of
//! caching it, trading a little compute for a much smaller per-sample memory
//! footprint.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// 2D convolution with square kernels. Weights are stored pre-lowered as
/// `(c_out, c_in * k * k)` so forward is a single GEMM against the column
/// matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// He-normal initialized convolution (std = sqrt(2 / fan_in), zero bias).
    pub fn new<R: Rng>(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * k * k;
        Conv2d {
            weight: he_normal((c_out, fan_in), fan_in, rng),
            bias: Array1::zeros(c_out),
            c_in,
            c_out,
            k,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&self, input: &Array3<f32>) -> Array3<f32> {
        let (c, h, w) = input.dim();
        debug_assert_eq!(c, self.c_in);
        let (oh, ow) = self.out_hw(h, w);
        let cols = im2col(input, self.k, self.stride, self.pad);
        let mut out = self.weight.dot(&cols);
        for (mut row, b) in out.rows_mut().into_iter().zip(self.bias.iter()) {
            row += *b;
        }
        out.into_shape_with_order((self.c_out, oh, ow))
            .expect("row-major gemm output")
    }

    /// Returns `(d_input, d_weight, d_bias)` for the upstream gradient
    /// `d_out`, recomputing the column matrix from `input`.
    pub fn backward(
        &self,
        input: &Array3<f32>,
        d_out: &Array3<f32>,
    ) -> (Array3<f32>, Array2<f32>, Array1<f32>) {
        let (c, h, w) = input.dim();
        debug_assert_eq!(c, self.c_in);
        let (co, oh, ow) = d_out.dim();
        debug_assert_eq!(co, self.c_out);
        let flat = d_out
            .view()
            .into_shape_with_order((self.c_out, oh * ow))
            .expect("contiguous gradient");
        let d_bias = flat.sum_axis(ndarray::Axis(1));
        let cols = im2col(input, self.k, self.stride, self.pad);
        let d_weight = flat.dot(&cols.t());
        let d_cols = self.weight.t().dot(&flat);
        let d_input = col2im(&d_cols, (c, h, w), self.k, self.stride, self.pad);
        (d_input, d_weight, d_bias)
    }
}

/// Lowers `(c, h, w)` into a `(c*k*k, oh*ow)` column matrix with zero
/// padding. Row index is `(channel * k + ky) * k + kx`.
pub fn im2col(input: &Array3<f32>, k: usize, stride: usize, pad: usize) -> Array2<f32> {
    let (c, h, w) = input.dim();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut cols = Array2::<f32>::zeros((c * k * k, oh * ow));
    let src = input.as_slice().expect("standard layout input");
    let dst = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let row_base = row * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_base = (ci * h + iy as usize) * w;
                    let dst_base = row_base + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dst[dst_base + ox] = src[src_base + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds a column-matrix gradient back onto the
/// `(c, h, w)` input shape.
pub fn col2im(
    d_cols: &Array2<f32>,
    input_dim: (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<f32> {
    let (c, h, w) = input_dim;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    debug_assert_eq!(d_cols.dim(), (c * k * k, oh * ow));
    let mut out = Array3::<f32>::zeros((c, h, w));
    let src = d_cols.as_slice().expect("standard layout gradient");
    let dst = out.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let row_base = row * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_base = (ci * h + iy as usize) * w;
                    let src_base = row_base + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dst[dst_base + ix as usize] += src[src_base + ox];
                    }
                }
            }
        }
    }
    out
}

/// Fully connected layer on flat feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Dense {
    pub fn new<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        Dense {
            weight: he_normal((n_out, n_in), n_in, rng),
            bias: Array1::zeros(n_out),
        }
    }

    pub fn forward(&self, x: &Array1<f32>) -> Array1<f32> {
        self.weight.dot(x) + &self.bias
    }

    /// Returns `(d_x, d_weight, d_bias)`.
    pub fn backward(
        &self,
        x: &Array1<f32>,
        d_out: &Array1<f32>,
    ) -> (Array1<f32>, Array2<f32>, Array1<f32>) {
        let d_x = self.weight.t().dot(d_out);
        let d_w = d_out
            .view()
            .insert_axis(ndarray::Axis(1))
            .dot(&x.view().insert_axis(ndarray::Axis(0)));
        (d_x, d_w, d_out.clone())
    }
}

/// Negative-side slope of the leaky rectifier. Nonzero so that a bad early
/// optimizer step cannot permanently silence a channel: gradient keeps
/// flowing through inactive cells at this reduced rate.
pub const LEAKY_SLOPE: f32 = 0.1;

pub fn leaky_relu(x: &Array3<f32>) -> Array3<f32> {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Gradient through the leaky rectifier given the forward *output*. The
/// activation preserves sign, so the output alone determines the regime.
pub fn leaky_relu_backward(output: &Array3<f32>, d_out: &Array3<f32>) -> Array3<f32> {
    let mut d = d_out.clone();
    d.zip_mut_with(output, |g, y| {
        if *y <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    });
    d
}

pub fn leaky_relu1(x: &Array1<f32>) -> Array1<f32> {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

pub fn leaky_relu1_backward(output: &Array1<f32>, d_out: &Array1<f32>) -> Array1<f32> {
    let mut d = d_out.clone();
    d.zip_mut_with(output, |g, y| {
        if *y <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    });
    d
}

/// 2x2 stride-2 average pooling with ceil-mode output size; partial edge
/// windows average over the cells they actually cover.
pub fn avg_pool2(x: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Array3::<f32>::zeros((c, oh, ow));
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let ys = 2 * oy..(2 * oy + 2).min(h);
                let xs = 2 * ox..(2 * ox + 2).min(w);
                let count = (ys.len() * xs.len()) as f32;
                let mut acc = 0.0;
                for y in ys.clone() {
                    for xk in xs.clone() {
                        acc += x[[ci, y, xk]];
                    }
                }
                out[[ci, oy, ox]] = acc / count;
            }
        }
    }
    out
}

pub fn avg_pool2_backward(d_out: &Array3<f32>, in_h: usize, in_w: usize) -> Array3<f32> {
    let (c, oh, ow) = d_out.dim();
    debug_assert_eq!((oh, ow), (in_h.div_ceil(2), in_w.div_ceil(2)));
    let mut d_in = Array3::<f32>::zeros((c, in_h, in_w));
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let ys = 2 * oy..(2 * oy + 2).min(in_h);
                let xs = 2 * ox..(2 * ox + 2).min(in_w);
                let share = d_out[[ci, oy, ox]] / (ys.len() * xs.len()) as f32;
                for y in ys.clone() {
                    for xk in xs.clone() {
                        d_in[[ci, y, xk]] += share;
                    }
                }
            }
        }
    }
    d_in
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = x.dim();
    let mut out = Array3::<f32>::zeros((c, 2 * h, 2 * w));
    for ci in 0..c {
        for y in 0..2 * h {
            for xk in 0..2 * w {
                out[[ci, y, xk]] = x[[ci, y / 2, xk / 2]];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2x2 block of the upstream gradient.
pub fn upsample2_backward(d_out: &Array3<f32>) -> Array3<f32> {
    let (c, h2, w2) = d_out.dim();
    debug_assert!(h2 % 2 == 0 && w2 % 2 == 0);
    let (h, w) = (h2 / 2, w2 / 2);
    let mut d_in = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h2 {
            for xk in 0..w2 {
                d_in[[ci, y / 2, xk / 2]] += d_out[[ci, y, xk]];
            }
        }
    }
    d_in
}

/// Mean over the spatial axes, one value per channel.
pub fn global_avg_pool(x: &Array3<f32>) -> Array1<f32> {
    let (c, h, w) = x.dim();
    let n = (h * w) as f32;
    let mut out = Array1::<f32>::zeros(c);
    for ci in 0..c {
        let mut acc = 0.0;
        for y in 0..h {
            for xk in 0..w {
                acc += x[[ci, y, xk]];
            }
        }
        out[ci] = acc / n;
    }
    out
}

pub fn global_avg_pool_backward(d_out: &Array1<f32>, h: usize, w: usize) -> Array3<f32> {
    let c = d_out.len();
    let share = 1.0 / (h * w) as f32;
    let mut d_in = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        let g = d_out[ci] * share;
        d_in.index_axis_mut(ndarray::Axis(0), ci).fill(g);
    }
    d_in
}

fn he_normal<R: Rng>(shape: (usize, usize), fan_in: usize, rng: &mut R) -> Array2<f32> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_fn(shape, |_| normal.sample(rng) as f32)
}

/// Adam over one flat parameter vector. Moments are kept in f64 so long runs
/// stay numerically stable; [`AdamState::step`] turns a flat gradient into a
/// parameter delta.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// Advances one step and returns the additive parameter update.
    pub fn step(&mut self, grad: &[f32]) -> Vec<f32> {
        assert_eq!(grad.len(), self.m.len(), "gradient length drifted");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut delta = vec![0.0f32; grad.len()];
        for i in 0..grad.len() {
            let g = f64::from(grad[i]);
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            delta[i] = (-self.lr * m_hat / (v_hat.sqrt() + self.eps)) as f32;
        }
        delta
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> Array3<f32> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((c, h, w), |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn one_by_one_identity_conv_passes_input_through() {
        let mut conv = Conv2d::new(1, 1, 1, 1, 0, &mut rng());
        conv.weight = array![[1.0]];
        let x = random_map(1, 4, 5, 7);
        assert_eq!(conv.forward(&x), x);
    }

    #[test]
    fn all_ones_kernel_sums_the_neighbourhood() {
        let mut conv = Conv2d::new(1, 1, 3, 1, 1, &mut rng());
        conv.weight.fill(1.0);
        let x = Array3::from_shape_fn((1, 3, 3), |(_, y, xk)| (y * 3 + xk) as f32);
        let out = conv.forward(&x);
        assert_eq!(out[[0, 1, 1]], 36.0); // sum of 0..=8
        assert_eq!(out[[0, 0, 0]], 0.0 + 1.0 + 3.0 + 4.0); // corner with padding
    }

    #[test]
    fn strided_conv_halves_spatial_dims() {
        let conv = Conv2d::new(3, 8, 3, 2, 1, &mut rng());
        let out = conv.forward(&random_map(3, 64, 48, 1));
        assert_eq!(out.dim(), (8, 32, 24));
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        // <im2col(x), y> must equal <x, col2im(y)> for random x, y.
        let x = random_map(2, 6, 5, 3);
        let cols = im2col(&x, 3, 2, 1);
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let y = Array2::from_shape_fn(cols.dim(), |_| r.random_range(-1.0..1.0f32));
        let lhs: f64 = cols
            .iter()
            .zip(y.iter())
            .map(|(a, b)| f64::from(a * b))
            .sum();
        let back = col2im(&y, (2, 6, 5), 3, 2, 1);
        let rhs: f64 = x
            .iter()
            .zip(back.iter())
            .map(|(a, b)| f64::from(a * b))
            .sum();
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        // Convolution output is linear in both weights and inputs, so a
        // central difference is exact up to f32 roundoff.
        let conv = Conv2d::new(2, 3, 3, 1, 1, &mut rng());
        let x = random_map(2, 5, 4, 11);
        let d_out = random_map(3, 5, 4, 13);
        let (d_in, d_w, d_b) = conv.backward(&x, &d_out);

        let loss = |c: &Conv2d, inp: &Array3<f32>| -> f64 {
            c.forward(inp)
                .iter()
                .zip(d_out.iter())
                .map(|(o, g)| f64::from(*o) * f64::from(*g))
                .sum()
        };
        let eps = 1e-2;
        for idx in [(0, 0), (1, 7), (2, 17)] {
            let mut plus = conv.clone();
            plus.weight[idx] += eps;
            let mut minus = conv.clone();
            minus.weight[idx] -= eps;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * f64::from(eps));
            assert!((fd - f64::from(d_w[idx])).abs() < 1e-2, "d_w at {idx:?}");
        }
        for ci in 0..3 {
            let mut plus = conv.clone();
            plus.bias[ci] += eps;
            let mut minus = conv.clone();
            minus.bias[ci] -= eps;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * f64::from(eps));
            assert!((fd - f64::from(d_b[ci])).abs() < 1e-2, "d_b at {ci}");
        }
        for idx in [(0, 0, 0), (1, 2, 3), (0, 4, 1)] {
            let mut plus = x.clone();
            plus[idx] += eps;
            let mut minus = x.clone();
            minus[idx] -= eps;
            let fd = (loss(&conv, &plus) - loss(&conv, &minus)) / (2.0 * f64::from(eps));
            assert!((fd - f64::from(d_in[idx])).abs() < 1e-2, "d_in at {idx:?}");
        }
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let dense = Dense::new(4, 3, &mut rng());
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let x = Array1::from_shape_fn(4, |_| r.random_range(-1.0..1.0f32));
        let d_out = Array1::from_shape_fn(3, |_| r.random_range(-1.0..1.0f32));
        let (d_x, d_w, d_b) = dense.backward(&x, &d_out);
        assert_eq!(d_b, d_out);
        let loss = |d: &Dense, inp: &Array1<f32>| -> f64 {
            d.forward(inp)
                .iter()
                .zip(d_out.iter())
                .map(|(o, g)| f64::from(*o) * f64::from(*g))
                .sum()
        };
        let eps = 1e-2;
        let mut plus = dense.clone();
        plus.weight[[1, 2]] += eps;
        let mut minus = dense.clone();
        minus.weight[[1, 2]] -= eps;
        let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * f64::from(eps));
        assert!((fd - f64::from(d_w[[1, 2]])).abs() < 1e-3);
        let mut xp = x.clone();
        xp[2] += eps;
        let mut xm = x.clone();
        xm[2] -= eps;
        let fd = (loss(&dense, &xp) - loss(&dense, &xm)) / (2.0 * f64::from(eps));
        assert!((fd - f64::from(d_x[2])).abs() < 1e-3);
    }

    #[test]
    fn avg_pool_handles_partial_windows() {
        let x = Array3::from_shape_fn((1, 3, 3), |(_, y, xk)| (y * 3 + xk) as f32);
        let out = avg_pool2(&x);
        assert_eq!(out.dim(), (1, 2, 2));
        assert_eq!(out[[0, 0, 0]], (0.0 + 1.0 + 3.0 + 4.0) / 4.0);
        assert_eq!(out[[0, 0, 1]], (2.0 + 5.0) / 2.0); // right edge, 2 cells
        assert_eq!(out[[0, 1, 0]], (6.0 + 7.0) / 2.0); // bottom edge
        assert_eq!(out[[0, 1, 1]], 8.0); // corner, single cell
    }

    #[test]
    fn pool_and_upsample_backwards_are_adjoint() {
        let x = random_map(2, 5, 7, 21);
        let up_d = random_map(2, 6, 8, 22);
        let down = upsample2_backward(&up_d);
        let up = upsample2(&x.slice(ndarray::s![.., ..3, ..4]).to_owned());
        let lhs: f64 = up
            .iter()
            .zip(up_d.iter())
            .map(|(a, b)| f64::from(a * b))
            .sum();
        let rhs: f64 = x
            .slice(ndarray::s![.., ..3, ..4])
            .iter()
            .zip(down.iter())
            .map(|(a, b)| f64::from(a * b))
            .sum();
        assert!((lhs - rhs).abs() < 1e-3);

        let pooled_d = random_map(2, 3, 4, 23);
        let spread = avg_pool2_backward(&pooled_d, 5, 7);
        let pooled = avg_pool2(&x);
        let lhs: f64 = pooled
            .iter()
            .zip(pooled_d.iter())
            .map(|(a, b)| f64::from(a * b))
            .sum();
        let rhs: f64 = x
            .iter()
            .zip(spread.iter())
            .map(|(a, b)| f64::from(a * b))
            .sum();
        assert!((lhs - rhs).abs() < 1e-3);
    }

    #[test]
    fn global_pool_averages_each_channel() {
        let x = Array3::from_shape_fn((2, 2, 2), |(c, y, xk)| (c * 4 + y * 2 + xk) as f32);
        let out = global_avg_pool(&x);
        assert_eq!(out[0], 1.5);
        assert_eq!(out[1], 5.5);
        let d = global_avg_pool_backward(&array![4.0, 8.0], 2, 2);
        assert_eq!(d[[0, 1, 1]], 1.0);
        assert_eq!(d[[1, 0, 0]], 2.0);
    }

    #[test]
    fn leaky_relu_gradient_scales_inactive_cells() {
        let x = array![[[-1.0, 2.0], [0.0, 3.0]]];
        let y = leaky_relu(&x);
        assert_eq!(y, array![[[-0.1, 2.0], [0.0, 3.0]]]);
        let d = leaky_relu_backward(&y, &array![[[5.0, 5.0], [5.0, 5.0]]]);
        assert_eq!(d, array![[[0.5, 5.0], [0.5, 5.0]]]);
    }

    #[test]
    fn adam_first_step_size_is_the_learning_rate() {
        // Bias correction makes the very first update ~lr regardless of the
        // gradient's magnitude.
        for g in [1e-3f32, 1.0, 1e3] {
            let mut adam = AdamState::new(1, 0.01);
            let delta = adam.step(&[g]);
            assert!(
                (f64::from(delta[0]) + 0.01).abs() < 1e-5,
                "grad {g} gave delta {}",
                delta[0]
            );
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = vec![3.0f32, -2.0];
        let mut adam = AdamState::new(2, 0.1);
        for _ in 0..300 {
            let grad: Vec<f32> = p.iter().map(|v| 2.0 * v).collect();
            let delta = adam.step(&grad);
            for (pi, di) in p.iter_mut().zip(&delta) {
                *pi += di;
            }
        }
        assert!(p.iter().all(|v| v.abs() < 0.05), "{p:?}");
        assert_eq!(adam.steps_taken(), 300);
    }
}
