//! Feature-space alignment `F (I + G)` applied channel-wise with one `G` per frame.

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::nn::linalg::{gemm, Op};

/// A `channels x height x width` map, row-major per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(GaitError::Shape(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }
}

/// Transformation vector `g` of one frame for an `h x w` feature map.
///
/// Viewed as a `w x h` matrix `G` (row-major over `g`), and as an `s x s`
/// square with `s = max(h, w)` whose extra entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformVector {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
}

impl TransformVector {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w {
            return Err(GaitError::Shape(format!(
                "transform vector for {h}x{w} needs {} values, got {}",
                h * w,
                values.len()
            )));
        }
        Ok(Self { h, w, values })
    }

    /// `G[i][j]` for `i < w`, `j < h`.
    pub fn matrix_entry(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.h + j]
    }

    pub fn padded_square(&self) -> Vec<f64> {
        let s = self.h.max(self.w);
        let mut out = vec![0.0; s * s];
        for i in 0..self.w {
            for j in 0..self.h {
                out[i * s + j] = self.matrix_entry(i, j);
            }
        }
        out
    }
}

/// Zero-pads (or crops) every channel of an `h x w` map to `out_h x out_w`.
pub fn pad_map(f: &[f64], c: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * out_h * out_w];
    let rows = h.min(out_h);
    let cols = w.min(out_w);
    for ch in 0..c {
        for r in 0..rows {
            let src = &f[(ch * h + r) * w..(ch * h + r) * w + cols];
            out[(ch * out_h + r) * out_w..(ch * out_h + r) * out_w + cols].copy_from_slice(src);
        }
    }
    out
}

/// `out_c = pad(F_c) (I + pad(G))`, restricted to the top-left
/// `out_h x out_w` block (the full `s x s` square when both equal `max(h, w)`).
pub fn transform_raw(
    f: &[f64],
    g: &[f64],
    c: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    // F viewed as (c*h) x w times G (w x h)
    let mut fg = vec![0.0; c * h * h];
    gemm(c * h, w, h, f, Op::N, g, Op::N, 0.0, &mut fg);
    let mut out = pad_map(f, c, h, w, out_h, out_w);
    let rows = h.min(out_h);
    let cols = h.min(out_w);
    for ch in 0..c {
        for r in 0..rows {
            let o = &mut out[(ch * out_h + r) * out_w..(ch * out_h + r) * out_w + cols];
            let t = &fg[(ch * h + r) * h..(ch * h + r) * h + cols];
            for (a, b) in o.iter_mut().zip(t) {
                *a += b;
            }
        }
    }
    out
}

/// Gradients of [`transform_raw`] with respect to `f` and `g`.
#[allow(clippy::too_many_arguments)]
pub fn transform_backward(
    f: &[f64],
    g: &[f64],
    d_out: &[f64],
    c: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> (Vec<f64>, Vec<f64>) {
    let rows = h.min(out_h);
    let cols = h.min(out_w);
    let mut dt = vec![0.0; c * h * h];
    for ch in 0..c {
        for r in 0..rows {
            let src = &d_out[(ch * out_h + r) * out_w..(ch * out_h + r) * out_w + cols];
            dt[(ch * h + r) * h..(ch * h + r) * h + cols].copy_from_slice(src);
        }
    }
    let mut df = pad_map(d_out, c, out_h, out_w, h, w);
    gemm(c * h, h, w, &dt, Op::N, g, Op::T, 1.0, &mut df);
    let mut dg = vec![0.0; w * h];
    gemm(w, c * h, h, f, Op::T, &dt, Op::N, 0.0, &mut dg);
    (df, dg)
}

/// Applies one frame's transformation to its feature map; the output is the
/// `s x s` square with `s = max(h, w)`.
pub fn apply_spatial_transform(map: &FeatureMap, g: &TransformVector) -> Result<FeatureMap> {
    if map.height != g.h || map.width != g.w {
        return Err(GaitError::Shape(format!(
            "transform built for {}x{} applied to {}x{} map",
            g.h, g.w, map.height, map.width
        )));
    }
    let s = map.height.max(map.width);
    let out = transform_raw(&map.data, &g.values, map.channels, map.height, map.width, s, s);
    FeatureMap::new(map.channels, s, s, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_oracle() {
        let f = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // G = [[0,1],[0,0]]
        let g = TransformVector::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let out = apply_spatial_transform(&f, &g).unwrap();
        assert_eq!(out.data, vec![1.0, 3.0, 3.0, 7.0]);
    }

    #[test]
    fn zero_transform_is_padding() {
        let f = FeatureMap::new(2, 3, 2, (0..12).map(|i| i as f64 - 3.5).collect()).unwrap();
        let g = TransformVector::new(3, 2, vec![0.0; 6]).unwrap();
        let out = apply_spatial_transform(&f, &g).unwrap();
        assert_eq!(out.shape(), (2, 3, 3));
        assert_eq!(out.data, pad_map(&f.data, 2, 3, 2, 3, 3));
    }

    #[test]
    fn identity_map_gives_i_plus_g() {
        let s = 3;
        let mut eye = vec![0.0; s * s];
        for i in 0..s {
            eye[i * s + i] = 1.0;
        }
        let f = FeatureMap::new(1, s, s, eye.clone()).unwrap();
        let gv: Vec<f64> = (0..9).map(|i| i as f64 * 0.25 - 1.0).collect();
        let g = TransformVector::new(s, s, gv.clone()).unwrap();
        let out = apply_spatial_transform(&f, &g).unwrap();
        for i in 0..9 {
            assert_eq!(out.data[i], eye[i] + gv[i]);
        }
    }

    #[test]
    fn padded_square_zeroes_short_edge() {
        let g = TransformVector::new(3, 2, vec![1.0; 6]).unwrap();
        let sq = g.padded_square();
        assert_eq!(sq.len(), 9);
        assert_eq!(&sq[6..9], &[0.0, 0.0, 0.0]);
        assert_eq!(sq.iter().sum::<f64>(), 6.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let f = FeatureMap::new(1, 2, 2, vec![0.0; 4]).unwrap();
        let g = TransformVector::new(3, 2, vec![0.0; 6]).unwrap();
        assert!(apply_spatial_transform(&f, &g).is_err());
    }

    #[test]
    fn same_g_for_every_channel() {
        let (h, w) = (3, 2);
        let data: Vec<f64> = (0..3 * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let f = FeatureMap::new(3, h, w, data).unwrap();
        let g = TransformVector::new(h, w, (0..6).map(|i| i as f64 * 0.3).collect()).unwrap();
        let out = apply_spatial_transform(&f, &g).unwrap();
        let s = 3;
        let mut ig = g.padded_square();
        for i in 0..s {
            ig[i * s + i] += 1.0;
        }
        for c in 0..3 {
            let fp = pad_map(f.channel(c), 1, h, w, s, s);
            for r in 0..s {
                for j in 0..s {
                    let want: f64 = (0..s).map(|k| fp[r * s + k] * ig[k * s + j]).sum();
                    assert!((out.get(c, r, j) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (c, h, w) = (2, 4, 3);
        let f: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let g: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.71).cos() * 0.5).collect();
        for (oh, ow) in [(4, 4), (4, 3)] {
            let wts: Vec<f64> = (0..c * oh * ow).map(|i| (i as f64 * 1.3).sin()).collect();
            let loss = |f: &[f64], g: &[f64]| -> f64 {
                transform_raw(f, g, c, h, w, oh, ow).iter().zip(&wts).map(|(a, b)| a * b).sum()
            };
            let (df, dg) = transform_backward(&f, &g, &wts, c, h, w, oh, ow);
            let eps = 1e-6;
            for i in 0..f.len() {
                let (mut p, mut m) = (f.clone(), f.clone());
                p[i] += eps;
                m[i] -= eps;
                let fd = (loss(&p, &g) - loss(&m, &g)) / (2.0 * eps);
                assert!((fd - df[i]).abs() < 1e-7);
            }
            for i in 0..g.len() {
                let (mut p, mut m) = (g.clone(), g.clone());
                p[i] += eps;
                m[i] -= eps;
                let fd = (loss(&f, &p) - loss(&f, &m)) / (2.0 * eps);
                assert!((fd - dg[i]).abs() < 1e-7);
            }
        }
    }
}
