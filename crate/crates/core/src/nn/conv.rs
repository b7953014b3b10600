use super::linalg::{gemm, Op};
use super::params::{Grads, ParamId, ParamStore, TensorKind};
use super::init;

use rand::Rng;

/// Stride-1 "same" convolution with odd square kernels.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.register(
            format!("{name}.weight"),
            vec![out_channels, in_channels, kernel, kernel],
            TensorKind::Weight,
            init::he_normal(rng, fan_in, out_channels * fan_in),
        );
        let bias = store.register(
            format!("{name}.bias"),
            vec![out_channels],
            TensorKind::Weight,
            vec![0.0; out_channels],
        );
        Self {
            in_channels,
            out_channels,
            kernel,
            padding,
            weight,
            bias,
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_channels * h * w);
        let hw = h * w;
        let col = im2col(x, self.in_channels, h, w, self.kernel, self.padding);
        let bias = store.get(self.bias);
        let mut out = vec![0.0; self.out_channels * hw];
        for (o, chunk) in out.chunks_mut(hw).enumerate() {
            chunk.fill(bias[o]);
        }
        gemm(
            self.out_channels,
            self.patch_len(),
            hw,
            store.get(self.weight),
            Op::N,
            &col,
            Op::N,
            1.0,
            &mut out,
        );
        out
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `need_input_grad` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &[f64],
        h: usize,
        w: usize,
        dy: &[f64],
        grads: &mut Grads,
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let hw = h * w;
        let col = im2col(x, self.in_channels, h, w, self.kernel, self.padding);
        gemm(
            self.out_channels,
            hw,
            self.patch_len(),
            dy,
            Op::N,
            &col,
            Op::T,
            1.0,
            grads.get_mut(self.weight),
        );
        let db = grads.get_mut(self.bias);
        for (o, chunk) in dy.chunks(hw).enumerate() {
            db[o] += chunk.iter().sum::<f64>();
        }
        if !need_input_grad {
            return None;
        }
        let mut dcol = vec![0.0; self.patch_len() * hw];
        gemm(
            self.patch_len(),
            self.out_channels,
            hw,
            store.get(self.weight),
            Op::T,
            dy,
            Op::N,
            0.0,
            &mut dcol,
        );
        Some(col2im(&dcol, self.in_channels, h, w, self.kernel, self.padding))
    }
}

/// Unfolds `c x h x w` into a `(c*k*k) x (h*w)` patch matrix.
pub fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize) -> Vec<f64> {
    let hw = h * w;
    let mut col = vec![0.0; c * k * k * hw];
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad as isize;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let d = &mut dst[y * w + x_lo..y * w + x_hi];
                    let s_lo = (x_lo as isize + dx) as usize;
                    d.copy_from_slice(&src_row[s_lo..s_lo + (x_hi - x_lo)]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
pub fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize) -> Vec<f64> {
    let hw = h * w;
    let mut x = vec![0.0; c * hw];
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad as isize;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s_lo = (x_lo as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + s_lo..sy as usize * w + s_lo + (x_hi - x_lo)];
                    for (d, s) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &[f64], wt: &[f64], b: &[f64], ci: usize, co: usize, h: usize, w: usize, k: usize, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; co * h * w];
        for o in 0..co {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = b[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - p as isize;
                                let sx = xx as isize + kx as isize - p as isize;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += wt[((o * ci + c) * k + ky) * k + kx]
                                    * x[(c * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(o * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, p) in [(3, 1), (5, 2)] {
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, "c", 2, 3, k, p, &mut rng);
            store.get_mut(conv.bias).copy_from_slice(&[0.1, -0.2, 0.3]);
            let (h, w) = (6, 5);
            let x: Vec<f64> = (0..2 * h * w).map(|_| rng.random::<f64>() - 0.5).collect();
            let got = conv.forward(&store, &x, h, w);
            let want = naive_conv(&x, store.get(conv.weight), store.get(conv.bias), 2, 3, h, w, k, p);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (c, h, w, k, p) = (2, 4, 3, 3, 1);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..c * k * k * h * w).map(|_| rng.random::<f64>()).collect();
        let ax = im2col(&x, c, h, w, k, p);
        let aty = col2im(&y, c, h, w, k, p);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
