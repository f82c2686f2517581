//! Convolutional Q-network with a hand-written backward pass.
//!
//! Layout: conv, ReLU, conv, ReLU, dense, ReLU, linear head. All parameters
//! live in one flat vector so that syncing, checkpointing and finite
//! differences operate on plain slices.

use std::ops::Range;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkShape {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub conv1_filters: usize,
    pub conv1_kernel: usize,
    pub conv1_stride: usize,
    pub conv2_filters: usize,
    pub conv2_kernel: usize,
    pub conv2_stride: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            channels: 4,
            rows: 12,
            cols: 80,
            conv1_filters: 16,
            conv1_kernel: 4,
            conv1_stride: 2,
            conv2_filters: 32,
            conv2_kernel: 2,
            conv2_stride: 1,
            hidden: 128,
            outputs: 33,
        }
    }
}

fn conv_out(n: usize, k: usize, s: usize) -> usize {
    (n - k) / s + 1
}

impl NetworkShape {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let dims = [
            self.channels,
            self.rows,
            self.cols,
            self.conv1_filters,
            self.conv1_kernel,
            self.conv1_stride,
            self.conv2_filters,
            self.conv2_kernel,
            self.conv2_stride,
            self.hidden,
            self.outputs,
        ];
        if dims.contains(&0) {
            return Err(ConfigError::Invalid(format!("network dimensions must be nonzero: {self:?}")));
        }
        if self.conv1_kernel > self.rows.min(self.cols) {
            return Err(ConfigError::Invalid("first kernel larger than the input".into()));
        }
        let (h1, w1) = self.conv1_out();
        if self.conv2_kernel > h1.min(w1) {
            return Err(ConfigError::Invalid("second kernel larger than its input".into()));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.rows * self.cols
    }

    pub fn conv1_out(&self) -> (usize, usize) {
        (conv_out(self.rows, self.conv1_kernel, self.conv1_stride), conv_out(self.cols, self.conv1_kernel, self.conv1_stride))
    }

    pub fn conv2_out(&self) -> (usize, usize) {
        let (h1, w1) = self.conv1_out();
        (conv_out(h1, self.conv2_kernel, self.conv2_stride), conv_out(w1, self.conv2_kernel, self.conv2_stride))
    }

    pub fn flat_len(&self) -> usize {
        let (h, w) = self.conv2_out();
        self.conv2_filters * h * w
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let k1 = self.conv1_kernel * self.conv1_kernel;
        let k2 = self.conv2_kernel * self.conv2_kernel;
        let w1 = take(self.conv1_filters * self.channels * k1);
        let b1 = take(self.conv1_filters);
        let w2 = take(self.conv2_filters * self.conv1_filters * k2);
        let b2 = take(self.conv2_filters);
        // Stored input-major: row j holds the weights from flat input j.
        let w3 = take(self.flat_len() * self.hidden);
        let b3 = take(self.hidden);
        let w4 = take(self.outputs * self.hidden);
        let b4 = take(self.outputs);
        Layout { w1, b1, w2, b2, w3, b3, w4, b4, total: at }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    /// Parameter blocks with their names, in storage order.
    pub fn blocks(&self) -> Vec<(&'static str, Range<usize>)> {
        let l = self.layout();
        vec![
            ("conv1.weight", l.w1),
            ("conv1.bias", l.b1),
            ("conv2.weight", l.w2),
            ("conv2.bias", l.b2),
            ("dense.weight", l.w3),
            ("dense.bias", l.b3),
            ("head.weight", l.w4),
            ("head.bias", l.b4),
        ]
    }

    pub fn describe(&self) -> String {
        let (h1, w1) = self.conv1_out();
        let (h2, w2) = self.conv2_out();
        format!(
            "{}x{}x{} -> conv{}k{}s{} {}x{}x{} -> conv{}k{}s{} {}x{}x{} -> {} -> {}",
            self.channels,
            self.rows,
            self.cols,
            self.conv1_filters,
            self.conv1_kernel,
            self.conv1_stride,
            self.conv1_filters,
            h1,
            w1,
            self.conv2_filters,
            self.conv2_kernel,
            self.conv2_stride,
            self.conv2_filters,
            h2,
            w2,
            self.hidden,
            self.outputs
        )
    }
}

#[derive(Clone, Debug)]
struct Layout {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    w3: Range<usize>,
    b3: Range<usize>,
    w4: Range<usize>,
    b4: Range<usize>,
    total: usize,
}

/// Intermediate activations kept for the backward pass (post-ReLU).
#[derive(Clone, Debug)]
pub struct Activations<T> {
    pub conv1: Vec<T>,
    pub conv2: Vec<T>,
    pub hidden: Vec<T>,
    pub q: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork<T> {
    shape: NetworkShape,
    layout_total: usize,
    pub params: Vec<T>,
}

fn cast<T: Float>(x: f64) -> T {
    T::from(x).expect("representable")
}

impl<T: Float> QNetwork<T> {
    pub fn zeros(shape: NetworkShape) -> Self {
        let total = shape.param_count();
        Self { shape, layout_total: total, params: vec![T::zero(); total] }
    }

    /// Uniform initialisation in `[-r, r]`, `r = sqrt(6 / (fan_in + fan_out))`
    /// per weight block; biases start at zero.
    pub fn xavier<R: Rng + ?Sized>(shape: NetworkShape, rng: &mut R) -> Self {
        let mut net = Self::zeros(shape);
        let s = shape;
        let k1 = s.conv1_kernel * s.conv1_kernel;
        let k2 = s.conv2_kernel * s.conv2_kernel;
        let l = s.layout();
        let fans = [
            (l.w1, s.channels * k1, s.conv1_filters * k1),
            (l.w2, s.conv1_filters * k2, s.conv2_filters * k2),
            (l.w3, s.flat_len(), s.hidden),
            (l.w4, s.hidden, s.outputs),
        ];
        for (range, fan_in, fan_out) in fans {
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[range] {
                *p = cast(rng.random_range(-r..=r));
            }
        }
        net
    }

    pub fn from_params(shape: NetworkShape, params: Vec<T>) -> Option<Self> {
        (params.len() == shape.param_count()).then(|| Self { shape, layout_total: params.len(), params })
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn param_count(&self) -> usize {
        self.layout_total
    }

    pub fn cast<U: Float>(&self) -> QNetwork<U> {
        QNetwork {
            shape: self.shape,
            layout_total: self.layout_total,
            params: self.params.iter().map(|p| U::from(*p).expect("representable")).collect(),
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.activations(x).q
    }

    pub fn activations(&self, x: &[T]) -> Activations<T> {
        let s = &self.shape;
        assert_eq!(x.len(), s.input_len(), "input length");
        let l = s.layout();
        let p = &self.params;
        let (h1, w1) = s.conv1_out();
        let conv1 = conv_forward(
            x,
            (s.channels, s.rows, s.cols),
            &p[l.w1],
            &p[l.b1],
            s.conv1_filters,
            s.conv1_kernel,
            s.conv1_stride,
        );
        let conv2 = conv_forward(
            &conv1,
            (s.conv1_filters, h1, w1),
            &p[l.w2],
            &p[l.b2],
            s.conv2_filters,
            s.conv2_kernel,
            s.conv2_stride,
        );
        let mut hidden = p[l.b3.clone()].to_vec();
        let w3 = &p[l.w3];
        for (j, &xj) in conv2.iter().enumerate() {
            if xj == T::zero() {
                continue;
            }
            let row = &w3[j * s.hidden..(j + 1) * s.hidden];
            for (h, &w) in hidden.iter_mut().zip(row) {
                *h = *h + w * xj;
            }
        }
        relu(&mut hidden);
        let w4 = &p[l.w4];
        let q = p[l.b4]
            .iter()
            .enumerate()
            .map(|(o, &b)| dot(&w4[o * s.hidden..(o + 1) * s.hidden], &hidden) + b)
            .collect();
        Activations { conv1, conv2, hidden, q }
    }

    /// Adds to `grad` the gradient of `dq * Q(x)[action]` with respect to the
    /// parameters.
    pub fn backward(&self, x: &[T], acts: &Activations<T>, action: usize, dq: T, grad: &mut [T]) {
        let s = &self.shape;
        let l = s.layout();
        let p = &self.params;
        let hsz = s.hidden;
        // Head: only the taken output carries gradient.
        grad[l.b4.start + action] = grad[l.b4.start + action] + dq;
        let w4_row = l.w4.start + action * hsz;
        let mut g_hidden = vec![T::zero(); hsz];
        for i in 0..hsz {
            grad[w4_row + i] = grad[w4_row + i] + dq * acts.hidden[i];
            if acts.hidden[i] > T::zero() {
                g_hidden[i] = dq * p[w4_row + i];
            }
        }
        // Dense.
        for (g, gh) in grad[l.b3.clone()].iter_mut().zip(&g_hidden) {
            *g = *g + *gh;
        }
        let mut g_conv2 = vec![T::zero(); acts.conv2.len()];
        for (j, &xj) in acts.conv2.iter().enumerate() {
            // A zero activation is either a clipped unit (no gradient flows
            // back) or contributes nothing to the weight gradient.
            if xj <= T::zero() {
                continue;
            }
            let base = l.w3.start + j * hsz;
            let (grow, wrow) = (&mut grad[base..base + hsz], &p[base..base + hsz]);
            for (gw, gh) in grow.iter_mut().zip(&g_hidden) {
                *gw = *gw + *gh * xj;
            }
            g_conv2[j] = dot(wrow, &g_hidden);
        }
        let (h1, w1) = s.conv1_out();
        let mut g_conv1 = vec![T::zero(); acts.conv1.len()];
        conv_backward(
            &acts.conv1,
            (s.conv1_filters, h1, w1),
            &p[l.w2.clone()],
            &g_conv2,
            s.conv2_filters,
            s.conv2_kernel,
            s.conv2_stride,
            (l.w2.clone(), l.b2.clone()),
            grad,
            Some(&mut g_conv1),
        );
        for (g, a) in g_conv1.iter_mut().zip(&acts.conv1) {
            if *a <= T::zero() {
                *g = T::zero();
            }
        }
        conv_backward(
            x,
            (s.channels, s.rows, s.cols),
            &p[l.w1.clone()],
            &g_conv1,
            s.conv1_filters,
            s.conv1_kernel,
            s.conv1_stride,
            (l.w1.clone(), l.b1.clone()),
            grad,
            None,
        );
    }

    /// Mean squared TD error over a batch and its gradient.
    pub fn loss_and_grad(&self, inputs: &[&[T]], actions: &[usize], targets: &[T]) -> (T, Vec<T>) {
        let n = cast::<T>(inputs.len() as f64);
        let mut grad = vec![T::zero(); self.layout_total];
        let mut loss = T::zero();
        for ((x, &a), &y) in inputs.iter().zip(actions).zip(targets) {
            let acts = self.activations(x);
            let err = acts.q[a] - y;
            loss = loss + err * err;
            let dq = cast::<T>(2.0) * err / n;
            if dq != T::zero() {
                self.backward(x, &acts, a, dq, &mut grad);
            }
        }
        (loss / n, grad)
    }

    pub fn loss(&self, inputs: &[&[T]], actions: &[usize], targets: &[T]) -> T {
        let n = cast::<T>(inputs.len() as f64);
        let mut loss = T::zero();
        for ((x, &a), &y) in inputs.iter().zip(actions).zip(targets) {
            let err = self.forward(x)[a] - y;
            loss = loss + err * err;
        }
        loss / n
    }

    pub fn sgd_step(&mut self, grad: &[T], lr: T) {
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p = *p - lr * *g;
        }
    }

    /// Sign pattern of every hidden unit; used to detect ReLU kinks.
    pub fn relu_pattern(&self, x: &[T]) -> Vec<bool> {
        let a = self.activations(x);
        a.conv1.iter().chain(&a.conv2).chain(&a.hidden).map(|v| *v > T::zero()).collect()
    }
}

fn relu<T: Float>(xs: &mut [T]) {
    for x in xs {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

/// Valid convolution followed by ReLU. Weights are `[out][in][k][k]`.
fn conv_forward<T: Float>(
    x: &[T],
    (cin, h, w): (usize, usize, usize),
    weights: &[T],
    bias: &[T],
    cout: usize,
    k: usize,
    stride: usize,
) -> Vec<T> {
    let ho = conv_out(h, k, stride);
    let wo = conv_out(w, k, stride);
    let mut out = vec![T::zero(); cout * ho * wo];
    for f in 0..cout {
        let plane = &mut out[f * ho * wo..(f + 1) * ho * wo];
        plane.iter_mut().for_each(|v| *v = bias[f]);
        for c in 0..cin {
            let xin = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let wv = weights[((f * cin + c) * k + ki) * k + kj];
                    if wv == T::zero() {
                        continue;
                    }
                    for oi in 0..ho {
                        let xrow = &xin[(oi * stride + ki) * w..];
                        let orow = &mut plane[oi * wo..(oi + 1) * wo];
                        for (oj, o) in orow.iter_mut().enumerate() {
                            *o = *o + wv * xrow[oj * stride + kj];
                        }
                    }
                }
            }
        }
        relu(plane);
    }
    out
}

/// Accumulates weight and bias gradients of a convolution given the gradient
/// at its (pre-activation) output, and optionally the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Float>(
    x: &[T],
    (cin, h, w): (usize, usize, usize),
    weights: &[T],
    g_out: &[T],
    cout: usize,
    k: usize,
    stride: usize,
    (w_range, b_range): (Range<usize>, Range<usize>),
    grad: &mut [T],
    mut g_in: Option<&mut Vec<T>>,
) {
    let ho = conv_out(h, k, stride);
    let wo = conv_out(w, k, stride);
    for f in 0..cout {
        let gplane = &g_out[f * ho * wo..(f + 1) * ho * wo];
        if gplane.iter().all(|g| *g == T::zero()) {
            continue;
        }
        let gsum = gplane.iter().fold(T::zero(), |a, b| a + *b);
        grad[b_range.start + f] = grad[b_range.start + f] + gsum;
        for c in 0..cin {
            let xin = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let widx = ((f * cin + c) * k + ki) * k + kj;
                    let mut acc = T::zero();
                    for oi in 0..ho {
                        let xrow = &xin[(oi * stride + ki) * w..];
                        let grow = &gplane[oi * wo..(oi + 1) * wo];
                        for (oj, g) in grow.iter().enumerate() {
                            acc = acc + *g * xrow[oj * stride + kj];
                        }
                    }
                    grad[w_range.start + widx] = grad[w_range.start + widx] + acc;
                    if let Some(gi) = g_in.as_deref_mut() {
                        let wv = weights[widx];
                        let gin = &mut gi[c * h * w..(c + 1) * h * w];
                        for oi in 0..ho {
                            let grow = &gplane[oi * wo..(oi + 1) * wo];
                            let base = (oi * stride + ki) * w + kj;
                            for (oj, g) in grow.iter().enumerate() {
                                gin[base + oj * stride] = gin[base + oj * stride] + wv * *g;
                            }
                        }
                    }
                }
            }
        }
    }
}
