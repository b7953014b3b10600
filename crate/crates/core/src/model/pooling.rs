//! Set pooling over frames and horizontal pyramid pooling into part vectors.

use rand::Rng;

use crate::error::{GaitError, Result};
use crate::nn::linalg::{gemm, Op};
use crate::nn::{init, Grads, ParamId, ParamStore, TensorKind};

use super::transform::FeatureMap;

/// Elementwise maximum over frames.
pub fn set_pool(maps: &[FeatureMap]) -> Result<FeatureMap> {
    let first = maps
        .first()
        .ok_or_else(|| GaitError::Empty("set pooling needs at least one frame".into()))?;
    let mut pooled = SetPool::new(first.data.len());
    for m in maps {
        if m.shape() != first.shape() {
            return Err(GaitError::Shape(format!(
                "set pooling over mixed shapes {:?} and {:?}",
                first.shape(),
                m.shape()
            )));
        }
        pooled.push(&m.data);
    }
    let (data, _) = pooled.finish();
    FeatureMap::new(first.channels, first.height, first.width, data)
}

/// Running elementwise max that remembers which frame won each entry.
#[derive(Debug, Clone)]
pub struct SetPool {
    max: Vec<f64>,
    arg: Vec<u32>,
    frames: u32,
}

impl SetPool {
    pub fn new(len: usize) -> Self {
        Self {
            max: vec![f64::NEG_INFINITY; len],
            arg: vec![0; len],
            frames: 0,
        }
    }

    pub fn push(&mut self, map: &[f64]) {
        for ((m, a), &v) in self.max.iter_mut().zip(self.arg.iter_mut()).zip(map) {
            if v > *m {
                *m = v;
                *a = self.frames;
            }
        }
        self.frames += 1;
    }

    /// Pooled map (signed zeros folded to +0) and the winning frame per entry.
    pub fn finish(self) -> (Vec<f64>, Vec<u32>) {
        let max = self.max.into_iter().map(|v| v + 0.0).collect();
        (max, self.arg)
    }
}

/// Horizontal pyramid pooling with one independent projection per strip.
///
/// For every scale `k` the map height is cut into `k` equal strips; each strip
/// is reduced to a channel vector as `max + mean` over its area and projected
/// by that strip's own `in_dim x out_dim` matrix.
#[derive(Debug, Clone)]
pub struct Hpp {
    pub scales: Vec<usize>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub proj: ParamId,
}

#[derive(Debug, Clone)]
pub struct HppCache {
    height: usize,
    width: usize,
    /// Strip vectors, `parts x in_dim`.
    strips: Vec<f64>,
    /// Flat map index of each strip/channel maximum.
    arg: Vec<usize>,
}

impl Hpp {
    pub fn new<R: Rng>(store: &mut ParamStore, scales: &[usize], in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let parts: usize = scales.iter().sum();
        let proj = store.register(
            "hpp.proj",
            vec![parts, in_dim, out_dim],
            TensorKind::Weight,
            init::he_normal(rng, in_dim, parts * in_dim * out_dim),
        );
        Self {
            scales: scales.to_vec(),
            in_dim,
            out_dim,
            proj,
        }
    }

    pub fn parts(&self) -> usize {
        self.scales.iter().sum()
    }

    /// Strips as `(row_start, row_end)` in part order.
    pub fn strips(&self, height: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.parts());
        for &k in &self.scales {
            let step = height / k;
            for i in 0..k {
                out.push((i * step, (i + 1) * step));
            }
        }
        out
    }

    pub fn check_height(&self, height: usize) -> Result<()> {
        match self.scales.iter().find(|&&k| k == 0 || !height.is_multiple_of(k)) {
            Some(k) => Err(GaitError::Config(format!(
                "map height {height} not divisible by pyramid scale {k}"
            ))),
            None => Ok(()),
        }
    }

    pub fn forward(&self, store: &ParamStore, map: &[f64], height: usize, width: usize) -> (Vec<f64>, HppCache) {
        let c = self.in_dim;
        debug_assert_eq!(map.len(), c * height * width);
        let strips = self.strips(height);
        let parts = strips.len();
        let mut vecs = vec![0.0; parts * c];
        let mut arg = vec![0usize; parts * c];
        for (p, &(r0, r1)) in strips.iter().enumerate() {
            let area = ((r1 - r0) * width) as f64;
            for ch in 0..c {
                let region = &map[(ch * height + r0) * width..(ch * height + r1) * width];
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                let mut sum = 0.0;
                for (i, &v) in region.iter().enumerate() {
                    sum += v;
                    if v > best {
                        best = v;
                        best_i = i;
                    }
                }
                vecs[p * c + ch] = best + sum / area;
                arg[p * c + ch] = (ch * height + r0) * width + best_i;
            }
        }
        let w = store.get(self.proj);
        let mut out = vec![0.0; parts * self.out_dim];
        for p in 0..parts {
            gemm(
                1,
                c,
                self.out_dim,
                &vecs[p * c..(p + 1) * c],
                Op::N,
                &w[p * c * self.out_dim..(p + 1) * c * self.out_dim],
                Op::N,
                0.0,
                &mut out[p * self.out_dim..(p + 1) * self.out_dim],
            );
        }
        (
            out,
            HppCache {
                height,
                width,
                strips: vecs,
                arg,
            },
        )
    }

    pub fn backward(&self, store: &ParamStore, cache: &HppCache, d_out: &[f64], grads: &mut Grads) -> Vec<f64> {
        let c = self.in_dim;
        let d = self.out_dim;
        let (height, width) = (cache.height, cache.width);
        let strips = self.strips(height);
        let parts = strips.len();
        let w = store.get(self.proj);
        let mut dv = vec![0.0; parts * c];
        {
            let dw = grads.get_mut(self.proj);
            for p in 0..parts {
                gemm(
                    c,
                    1,
                    d,
                    &cache.strips[p * c..(p + 1) * c],
                    Op::N,
                    &d_out[p * d..(p + 1) * d],
                    Op::N,
                    1.0,
                    &mut dw[p * c * d..(p + 1) * c * d],
                );
            }
        }
        for p in 0..parts {
            gemm(
                1,
                d,
                c,
                &d_out[p * d..(p + 1) * d],
                Op::N,
                &w[p * c * d..(p + 1) * c * d],
                Op::T,
                0.0,
                &mut dv[p * c..(p + 1) * c],
            );
        }
        let mut dmap = vec![0.0; c * height * width];
        for (p, &(r0, r1)) in strips.iter().enumerate() {
            let area = ((r1 - r0) * width) as f64;
            for ch in 0..c {
                let g = dv[p * c + ch];
                dmap[cache.arg[p * c + ch]] += g;
                let mean_g = g / area;
                for v in &mut dmap[(ch * height + r0) * width..(ch * height + r1) * width] {
                    *v += mean_g;
                }
            }
        }
        dmap
    }
}
