//! Dense layers, batch normalization, activations and pooling primitives.

use rand::Rng;

use super::init;
use super::linalg::{gemm, Op};
use super::params::{Grads, ParamId, ParamStore, TensorKind};

/// `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let weight = store.register(
            format!("{name}.weight"),
            vec![in_dim, out_dim],
            TensorKind::Weight,
            init::fan_in_uniform(rng, in_dim, in_dim * out_dim),
        );
        let bias = store.register(
            format!("{name}.bias"),
            vec![out_dim],
            TensorKind::Weight,
            init::fan_in_uniform(rng, in_dim, out_dim),
        );
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    /// Forward over `n` rows. Each output row depends only on its input row.
    pub fn forward(&self, store: &ParamStore, x: &[f64], n: usize) -> Vec<f64> {
        let bias = store.get(self.bias);
        let mut y = Vec::with_capacity(n * self.out_dim);
        for _ in 0..n {
            y.extend_from_slice(bias);
        }
        gemm(n, self.in_dim, self.out_dim, x, Op::N, store.get(self.weight), Op::N, 1.0, &mut y);
        y
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        x: &[f64],
        n: usize,
        dy: &[f64],
        grads: &mut Grads,
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        gemm(self.in_dim, n, self.out_dim, x, Op::T, dy, Op::N, 1.0, grads.get_mut(self.weight));
        let db = grads.get_mut(self.bias);
        for row in dy.chunks(self.out_dim) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        if !need_input_grad {
            return None;
        }
        let mut dx = vec![0.0; n * self.in_dim];
        gemm(n, self.out_dim, self.in_dim, dy, Op::N, store.get(self.weight), Op::T, 0.0, &mut dx);
        Some(dx)
    }
}

/// Batch normalization over rows of an `n x features` matrix.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub features: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub n: usize,
}

/// Batch statistics to fold into the running estimates after a step.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn apply(&self, store: &mut ParamStore) {
        let m = self.momentum;
        for (r, b) in store.get_mut(self.running_mean).iter_mut().zip(&self.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in store.get_mut(self.running_var).iter_mut().zip(&self.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, features: usize, eps: f64, momentum: f64) -> Self {
        Self::with_shape(store, name, vec![features], eps, momentum)
    }

    /// Same layer with tensors registered under an arbitrary shape whose
    /// product is the feature count (used for part-wise heads).
    pub fn with_shape(store: &mut ParamStore, name: &str, shape: Vec<usize>, eps: f64, momentum: f64) -> Self {
        let features = shape.iter().product();
        let gamma = store.register(format!("{name}.gamma"), shape.clone(), TensorKind::Affine, vec![1.0; features]);
        let beta = store.register(format!("{name}.beta"), shape.clone(), TensorKind::Affine, vec![0.0; features]);
        let running_mean = store.register(format!("{name}.running_mean"), shape.clone(), TensorKind::Buffer, vec![0.0; features]);
        let running_var = store.register(format!("{name}.running_var"), shape, TensorKind::Buffer, vec![1.0; features]);
        Self {
            features,
            eps,
            momentum,
            gamma,
            beta,
            running_mean,
            running_var,
        }
    }

    pub fn forward_train(&self, store: &ParamStore, x: &[f64], n: usize) -> (Vec<f64>, BnCache, BnStats) {
        let f = self.features;
        let mut mean = vec![0.0; f];
        for row in x.chunks(f) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for row in x.chunks(f) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let gamma = store.get(self.gamma);
        let beta = store.get(self.beta);
        let mut xhat = vec![0.0; n * f];
        let mut y = vec![0.0; n * f];
        for (r, row) in x.chunks(f).enumerate() {
            for j in 0..f {
                let xh = (row[j] - mean[j]) * inv_std[j];
                xhat[r * f + j] = xh;
                y[r * f + j] = gamma[j] * xh + beta[j];
            }
        }
        let unbiased = if n > 1 {
            var.iter().map(|v| v * n as f64 / (n - 1) as f64).collect()
        } else {
            var
        };
        let stats = BnStats {
            running_mean: self.running_mean,
            running_var: self.running_var,
            momentum: self.momentum,
            mean,
            var: unbiased,
        };
        (y, BnCache { xhat, inv_std, n }, stats)
    }

    /// Uses running statistics; rows are processed independently.
    pub fn forward_eval(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let f = self.features;
        let gamma = store.get(self.gamma);
        let beta = store.get(self.beta);
        let rm = store.get(self.running_mean);
        let rv = store.get(self.running_var);
        let scale: Vec<f64> = (0..f).map(|j| gamma[j] / (rv[j] + self.eps).sqrt()).collect();
        let mut y = vec![0.0; x.len()];
        for (yr, xr) in y.chunks_mut(f).zip(x.chunks(f)) {
            for j in 0..f {
                yr[j] = (xr[j] - rm[j]) * scale[j] + beta[j];
            }
        }
        y
    }

    pub fn backward(&self, store: &ParamStore, cache: &BnCache, dy: &[f64], grads: &mut Grads) -> Vec<f64> {
        let f = self.features;
        let n = cache.n as f64;
        let gamma = store.get(self.gamma);
        let mut sum_dy = vec![0.0; f];
        let mut sum_dy_xhat = vec![0.0; f];
        for (row, xr) in dy.chunks(f).zip(cache.xhat.chunks(f)) {
            for j in 0..f {
                sum_dy[j] += row[j];
                sum_dy_xhat[j] += row[j] * xr[j];
            }
        }
        {
            let dg = grads.get_mut(self.gamma);
            for j in 0..f {
                dg[j] += sum_dy_xhat[j];
            }
        }
        {
            let db = grads.get_mut(self.beta);
            for j in 0..f {
                db[j] += sum_dy[j];
            }
        }
        let mut dx = vec![0.0; dy.len()];
        for ((dxr, row), xr) in dx.chunks_mut(f).zip(dy.chunks(f)).zip(cache.xhat.chunks(f)) {
            for j in 0..f {
                dxr[j] = gamma[j] * cache.inv_std[j] / n
                    * (n * row[j] - sum_dy[j] - xr[j] * sum_dy_xhat[j]);
            }
        }
        dx
    }
}

/// Inverted dropout mask: entries are 0 or 1/(1-p).
pub fn dropout_mask<R: Rng>(rng: &mut R, len: usize, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 - p;
    (0..len)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

pub fn leaky_relu_inplace(x: &mut [f64], slope: f64) {
    for v in x.iter_mut() {
        if *v <= 0.0 {
            *v *= slope;
        }
    }
}

/// Backward of leaky ReLU given its output (sign of output == sign of input).
pub fn leaky_relu_backward(y: &[f64], dy: &mut [f64], slope: f64) {
    for (d, &o) in dy.iter_mut().zip(y) {
        if o <= 0.0 {
            *d *= slope;
        }
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn relu_backward(y: &[f64], dy: &mut [f64]) {
    for (d, &o) in dy.iter_mut().zip(y) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

/// 2x2 stride-2 max pooling over `c x h x w`. Returns the pooled map and the
/// flat input index chosen for every output (first maximum in scan order).
pub fn max_pool2(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (ch * h + 2 * y + dy) * w + 2 * xx + dx;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                let o = (ch * oh + y) * ow + xx;
                out[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(dy: &[f64], arg: &[u32], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (g, &i) in dy.iter().zip(arg) {
        dx[i as usize] += g;
    }
    dx
}
