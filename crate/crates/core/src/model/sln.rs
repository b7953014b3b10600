//! Silhouette learning network: six 'same' convolutions with leaky ReLU and
//! two 2x2 max pools (after the second and fourth convolution).

use rand::Rng;

use crate::nn::layers::{leaky_relu_backward, leaky_relu_inplace, max_pool2, max_pool2_backward};
use crate::nn::{Conv2d, Grads, ParamStore};

#[derive(Debug, Clone)]
pub struct Sln {
    convs: Vec<Conv2d>,
    slope: f64,
    height: usize,
    width: usize,
}

/// Activations kept for the backward pass of one frame.
#[derive(Debug, Clone)]
pub struct SlnCache {
    /// Input of each convolution.
    inputs: Vec<Vec<f64>>,
    /// Output (after activation) of each convolution.
    outputs: Vec<Vec<f64>>,
    pool_args: [Vec<u32>; 2],
}

const POOL_AFTER: [bool; 6] = [false, true, false, true, false, false];

impl Sln {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        channels: &[usize],
        slope: f64,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        assert_eq!(channels.len(), 6, "SLN has six convolutions");
        let mut convs = Vec::with_capacity(6);
        let mut in_ch = 1;
        for (i, &out_ch) in channels.iter().enumerate() {
            let (k, p) = if i == 0 { (5, 2) } else { (3, 1) };
            convs.push(Conv2d::new(store, &format!("sln.conv{}", i + 1), in_ch, out_ch, k, p, rng));
            in_ch = out_ch;
        }
        Self {
            convs,
            slope,
            height,
            width,
        }
    }

    pub fn convs(&self) -> &[Conv2d] {
        &self.convs
    }

    pub fn out_channels(&self) -> usize {
        self.convs[5].out_channels
    }

    /// `(channels, h, w)` of the output map.
    pub fn out_shape(&self) -> (usize, usize, usize) {
        (self.out_channels(), self.height / 4, self.width / 4)
    }

    pub fn forward(&self, store: &ParamStore, frame: &[f64]) -> Vec<f64> {
        self.run(store, frame, None)
    }

    pub fn forward_cached(&self, store: &ParamStore, frame: &[f64]) -> (Vec<f64>, SlnCache) {
        let mut cache = SlnCache {
            inputs: Vec::with_capacity(6),
            outputs: Vec::with_capacity(6),
            pool_args: [Vec::new(), Vec::new()],
        };
        let out = self.run(store, frame, Some(&mut cache));
        (out, cache)
    }

    fn run(&self, store: &ParamStore, frame: &[f64], mut cache: Option<&mut SlnCache>) -> Vec<f64> {
        assert_eq!(frame.len(), self.height * self.width, "SLN input size");
        let (mut h, mut w) = (self.height, self.width);
        let mut x = frame.to_vec();
        let mut pool_idx = 0;
        for (i, conv) in self.convs.iter().enumerate() {
            let mut y = conv.forward(store, &x, h, w);
            leaky_relu_inplace(&mut y, self.slope);
            if let Some(c) = cache.as_deref_mut() {
                c.inputs.push(std::mem::take(&mut x));
                c.outputs.push(y.clone());
            }
            if POOL_AFTER[i] {
                let (p, arg) = max_pool2(&y, conv.out_channels, h, w);
                if let Some(c) = cache.as_deref_mut() {
                    c.pool_args[pool_idx] = arg;
                }
                pool_idx += 1;
                h /= 2;
                w /= 2;
                x = p;
            } else {
                x = y;
            }
        }
        x
    }

    /// Accumulates parameter gradients for one frame given the gradient of
    /// its output map.
    pub fn backward(&self, store: &ParamStore, cache: &SlnCache, d_out: Vec<f64>, grads: &mut Grads) {
        let mut d = d_out;
        let mut pool_idx = 2;
        let (mut h, mut w) = (self.height / 4, self.width / 4);
        for i in (0..6).rev() {
            let conv = &self.convs[i];
            if POOL_AFTER[i] {
                pool_idx -= 1;
                h *= 2;
                w *= 2;
                d = max_pool2_backward(&d, &cache.pool_args[pool_idx], conv.out_channels * h * w);
            }
            leaky_relu_backward(&cache.outputs[i], &mut d, self.slope);
            match conv.backward(store, &cache.inputs[i], h, w, &d, grads, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }
}
