//! The two-branch gait network.
//!
//! Silhouettes go through the SLN backbone, SMPL vectors through the 3D-STN;
//! the per-frame transformation aligns each feature map, frames are merged by
//! set pooling and the pooled map is cut into horizontal pyramid parts.

pub mod pooling;
pub mod sln;
pub mod stn;
pub mod transform;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::nn::{BnStats, Grads, ParamStore};
use crate::types::{GaitSample, PartEmbedding, SilhouetteFrame, SmplVector, SMPL_DIM};

pub use pooling::{set_pool, Hpp, HppCache, SetPool};
pub use sln::{Sln, SlnCache};
pub use stn::{Stn, StnCache};
pub use transform::{apply_spatial_transform, pad_map, FeatureMap, TransformVector};

/// Frames per work unit when the backward pass is split across threads. The
/// split is fixed so gradient sums do not depend on the thread count.
const FRAME_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Output channels of the six SLN convolutions.
    pub channels: Vec<usize>,
    pub leaky_slope: f64,
    pub stn_hidden: Vec<usize>,
    /// Dropout rate in front of each of the three STN batch norms.
    pub stn_dropout: Vec<f64>,
    /// Initial scale of the last STN batch norm.
    pub stn_out_gain: f64,
    pub hpp_scales: Vec<usize>,
    pub part_dim: usize,
    pub enable_3d_branch: bool,
    /// Pool parts over the zero-padded `s x s` map (`true`) or over the
    /// original `h x w` window.
    pub pool_padded: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_height: 128,
            input_width: 88,
            channels: vec![64, 64, 128, 128, 256, 256],
            leaky_slope: 0.01,
            stn_hidden: vec![128, 256],
            stn_dropout: vec![0.0, 0.2, 0.2],
            stn_out_gain: 0.1,
            hpp_scales: vec![1, 2, 4, 8, 16],
            part_dim: 256,
            enable_3d_branch: true,
            pool_padded: true,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
        }
    }
}

impl ModelConfig {
    /// Reduced network that trains on a single CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            input_height: 32,
            input_width: 24,
            channels: vec![8, 8, 16, 16, 32, 32],
            hpp_scales: vec![1, 2, 4, 8],
            part_dim: 32,
            ..Self::default()
        }
    }

    pub fn with_input(mut self, height: usize, width: usize) -> Self {
        self.input_height = height;
        self.input_width = width;
        self
    }

    /// `(h, w)` of the SLN output.
    pub fn feature_size(&self) -> (usize, usize) {
        (self.input_height / 4, self.input_width / 4)
    }

    pub fn side(&self) -> usize {
        let (h, w) = self.feature_size();
        h.max(w)
    }

    /// `(height, width)` of the map fed to pyramid pooling.
    pub fn pooled_map_size(&self) -> (usize, usize) {
        if self.pool_padded {
            (self.side(), self.side())
        } else {
            self.feature_size()
        }
    }

    pub fn stn_out_dim(&self) -> usize {
        let (h, w) = self.feature_size();
        h * w
    }

    pub fn parts(&self) -> usize {
        self.hpp_scales.iter().sum()
    }

    pub fn feature_channels(&self) -> usize {
        self.channels.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(GaitError::Config(m));
        let (h, w) = (self.input_height, self.input_width);
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return err(format!("input {h}x{w} must be positive and divisible by 4"));
        }
        if self.channels.len() != 6 || self.channels.contains(&0) {
            return err(format!("channels must list six positive sizes, got {:?}", self.channels));
        }
        if self.stn_hidden.len() != 2 || self.stn_hidden.contains(&0) {
            return err(format!("stn_hidden must list two positive sizes, got {:?}", self.stn_hidden));
        }
        if self.stn_dropout.len() != 3 || self.stn_dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return err(format!("stn_dropout must list three rates in [0,1), got {:?}", self.stn_dropout));
        }
        if self.hpp_scales.is_empty() || self.part_dim == 0 {
            return err("hpp_scales and part_dim must be non-empty".into());
        }
        let (mh, _) = self.pooled_map_size();
        if let Some(k) = self.hpp_scales.iter().find(|&&k| k == 0 || mh % k != 0) {
            return err(format!("pooled map height {mh} not divisible by pyramid scale {k}"));
        }
        if !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return err("bn_eps must be > 0 and bn_momentum in [0,1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Batch statistics and dropout; the seed drives the dropout masks.
    Train { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct SmplGait {
    cfg: ModelConfig,
    sln: Sln,
    stn: Option<Stn>,
    hpp: Hpp,
}

/// Everything the batch backward pass needs from the forward pass.
#[derive(Debug)]
pub struct BatchCache {
    frame_counts: Vec<usize>,
    sln: Vec<SlnCache>,
    feats: Vec<Vec<f64>>,
    g: Vec<f64>,
    stn: Option<StnCache>,
    set_args: Vec<Vec<u32>>,
    hpp: Vec<HppCache>,
    pub bn_stats: Vec<BnStats>,
}

impl SmplGait {
    /// Builds the network, registering its tensors in `store`. The 3D-STN
    /// tensors are only allocated when the 3D branch is enabled.
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sln = Sln::new(store, &cfg.channels, cfg.leaky_slope, cfg.input_height, cfg.input_width, &mut rng);
        let stn = cfg.enable_3d_branch.then(|| {
            Stn::new(
                store,
                &cfg.stn_hidden,
                cfg.stn_out_dim(),
                &cfg.stn_dropout,
                cfg.stn_out_gain,
                cfg.bn_eps,
                cfg.bn_momentum,
                &mut rng,
            )
        });
        let hpp = Hpp::new(store, &cfg.hpp_scales, cfg.feature_channels(), cfg.part_dim, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            sln,
            stn,
            hpp,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn sln(&self) -> &Sln {
        &self.sln
    }

    pub fn stn(&self) -> Option<&Stn> {
        self.stn.as_ref()
    }

    pub fn hpp(&self) -> &Hpp {
        &self.hpp
    }

    fn check_frame(&self, frame: &SilhouetteFrame) -> Result<()> {
        if frame.height() != self.cfg.input_height || frame.width() != self.cfg.input_width {
            return Err(GaitError::Shape(format!(
                "frame is {}x{}, model expects {}x{}",
                frame.height(),
                frame.width(),
                self.cfg.input_height,
                self.cfg.input_width
            )));
        }
        Ok(())
    }

    fn check_sample(&self, sample: &GaitSample) -> Result<()> {
        sample.frames().iter().try_for_each(|f| self.check_frame(f))
    }

    /// Per-frame backbone maps of shape `channels x H/4 x W/4`.
    pub fn sln_forward(&self, store: &ParamStore, frames: &[SilhouetteFrame]) -> Result<Vec<FeatureMap>> {
        frames.iter().try_for_each(|f| self.check_frame(f))?;
        let (c, h, w) = self.sln.out_shape();
        frames
            .par_iter()
            .map(|f| FeatureMap::new(c, h, w, self.sln.forward(store, &f.to_unit())))
            .collect()
    }

    /// Per-frame transformation vectors of length `h * w`.
    pub fn stn_forward(&self, store: &ParamStore, smpls: &[SmplVector], mode: Mode) -> Result<Vec<TransformVector>> {
        let stn = self
            .stn
            .as_ref()
            .ok_or_else(|| GaitError::Config("3D branch disabled".into()))?;
        let (h, w) = self.cfg.feature_size();
        let n = smpls.len();
        let x: Vec<f64> = smpls.iter().flat_map(|v| v.0).collect();
        let g = match mode {
            Mode::Eval => stn.forward_eval(store, &x, n),
            Mode::Train { seed } => stn.forward_train(store, &x, n, &mut ChaCha8Rng::seed_from_u64(seed)).0,
        };
        g.chunks(h * w)
            .map(|row| TransformVector::new(h, w, row.to_vec()))
            .collect()
    }

    /// Pyramid parts of an already pooled map.
    pub fn hpp_forward(&self, store: &ParamStore, map: &FeatureMap) -> Result<PartEmbedding> {
        if map.channels != self.hpp.in_dim {
            return Err(GaitError::Shape(format!(
                "map has {} channels, pyramid expects {}",
                map.channels, self.hpp.in_dim
            )));
        }
        self.hpp.check_height(map.height)?;
        let (out, _) = self.hpp.forward(store, &map.data, map.height, map.width);
        PartEmbedding::new(self.hpp.parts(), self.hpp.out_dim, out)
    }

    /// Aligned (or, without the 3D branch, padded) map of one frame.
    fn aligned_map(&self, feat: &[f64], g: Option<&[f64]>) -> Vec<f64> {
        let (c, h, w) = self.sln.out_shape();
        let (mh, mw) = self.cfg.pooled_map_size();
        match g {
            Some(g) => transform::transform_raw(feat, g, c, h, w, mh, mw),
            None => pad_map(feat, c, h, w, mh, mw),
        }
    }

    pub fn embed_sequence(&self, store: &ParamStore, sample: &GaitSample, mode: Mode) -> Result<PartEmbedding> {
        match mode {
            Mode::Eval => self.embed_eval(store, sample),
            Mode::Train { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (mut emb, _) = self.forward_train(store, std::slice::from_ref(sample), &mut rng)?;
                PartEmbedding::new(self.hpp.parts(), self.hpp.out_dim, emb.remove(0))
            }
        }
    }

    fn embed_eval(&self, store: &ParamStore, sample: &GaitSample) -> Result<PartEmbedding> {
        self.check_sample(sample)?;
        let (c, _, _) = self.sln.out_shape();
        let (mh, mw) = self.cfg.pooled_map_size();
        let mut pool = SetPool::new(c * mh * mw);
        for (frames, smpls) in sample.frames().chunks(FRAME_CHUNK).zip(sample.smpls().chunks(FRAME_CHUNK)) {
            let maps: Vec<Vec<f64>> = frames
                .par_iter()
                .zip(smpls.par_iter())
                .map(|(f, v)| {
                    let feat = self.sln.forward(store, &f.to_unit());
                    match &self.stn {
                        Some(stn) => {
                            let g = stn.forward_eval(store, &v.0, 1);
                            self.aligned_map(&feat, Some(&g))
                        }
                        None => self.aligned_map(&feat, None),
                    }
                })
                .collect();
            for m in &maps {
                pool.push(m);
            }
        }
        let (pooled, _) = pool.finish();
        let (out, _) = self.hpp.forward(store, &pooled, mh, mw);
        PartEmbedding::new(self.hpp.parts(), self.hpp.out_dim, out)
    }

    /// Training-mode forward over a batch of sequences. Returns one flat
    /// `parts x part_dim` embedding per sample.
    pub fn forward_train<R: rand::Rng>(
        &self,
        store: &ParamStore,
        samples: &[GaitSample],
        rng: &mut R,
    ) -> Result<(Vec<Vec<f64>>, BatchCache)> {
        if samples.is_empty() {
            return Err(GaitError::Empty("empty batch".into()));
        }
        samples.iter().try_for_each(|s| self.check_sample(s))?;
        let frames: Vec<&SilhouetteFrame> = samples.iter().flat_map(|s| s.frames()).collect();
        let n = frames.len();
        let (sln_out, sln_cache): (Vec<Vec<f64>>, Vec<SlnCache>) = frames
            .par_iter()
            .map(|f| self.sln.forward_cached(store, &f.to_unit()))
            .unzip();

        let mut bn_stats = Vec::new();
        let (g, stn_cache) = match &self.stn {
            Some(stn) => {
                let x: Vec<f64> = samples
                    .iter()
                    .flat_map(|s| s.smpls().iter().flat_map(|v| v.0))
                    .collect();
                debug_assert_eq!(x.len(), n * SMPL_DIM);
                let (g, cache, stats) = stn.forward_train(store, &x, n, rng);
                bn_stats.extend(stats);
                (g, Some(cache))
            }
            None => (Vec::new(), None),
        };
        let gdim = self.cfg.stn_out_dim();

        let (c, _, _) = self.sln.out_shape();
        let (mh, mw) = self.cfg.pooled_map_size();
        let mut embeddings = Vec::with_capacity(samples.len());
        let mut set_args = Vec::with_capacity(samples.len());
        let mut hpp_caches = Vec::with_capacity(samples.len());
        let mut offset = 0;
        for s in samples {
            let mut pool = SetPool::new(c * mh * mw);
            for f in offset..offset + s.len() {
                let g_row = stn_cache.as_ref().map(|_| &g[f * gdim..(f + 1) * gdim]);
                pool.push(&self.aligned_map(&sln_out[f], g_row));
            }
            offset += s.len();
            let (pooled, args) = pool.finish();
            let (emb, hc) = self.hpp.forward(store, &pooled, mh, mw);
            embeddings.push(emb);
            set_args.push(args);
            hpp_caches.push(hc);
        }
        let cache = BatchCache {
            frame_counts: samples.iter().map(GaitSample::len).collect(),
            sln: sln_cache,
            feats: sln_out,
            g,
            stn: stn_cache,
            set_args,
            hpp: hpp_caches,
            bn_stats,
        };
        Ok((embeddings, cache))
    }

    /// Accumulates into `grads` the parameter gradients given the gradient of
    /// every sample embedding.
    pub fn backward_train(&self, store: &ParamStore, cache: &BatchCache, d_emb: &[Vec<f64>], grads: &mut Grads) {
        let (c, h, w) = self.sln.out_shape();
        let (mh, mw) = self.cfg.pooled_map_size();
        let gdim = self.cfg.stn_out_dim();

        // pyramid -> pooled map -> per-frame gradient of the aligned map
        let mut frame_owner = Vec::new();
        let mut dmaps = Vec::with_capacity(d_emb.len());
        for (i, d) in d_emb.iter().enumerate() {
            dmaps.push(self.hpp.backward(store, &cache.hpp[i], d, grads));
            frame_owner.extend((0..cache.frame_counts[i]).map(|k| (i, k as u32)));
        }
        let per_frame: Vec<(Vec<f64>, Vec<f64>)> = frame_owner
            .par_iter()
            .enumerate()
            .map(|(f, &(i, k))| {
                let mut d_aligned = vec![0.0; c * mh * mw];
                for ((d, &arg), &src) in d_aligned.iter_mut().zip(&cache.set_args[i]).zip(&dmaps[i]) {
                    if arg == k {
                        *d = src;
                    }
                }
                if cache.stn.is_some() {
                    let g = &cache.g[f * gdim..(f + 1) * gdim];
                    transform::transform_backward(&cache.feats[f], g, &d_aligned, c, h, w, mh, mw)
                } else {
                    (pad_map(&d_aligned, c, mh, mw, h, w), Vec::new())
                }
            })
            .collect();

        if let (Some(stn), Some(stn_cache)) = (&self.stn, &cache.stn) {
            let dg: Vec<f64> = per_frame.iter().flat_map(|(_, dg)| dg.iter().copied()).collect();
            stn.backward(store, stn_cache, dg, grads);
        }

        let chunk_grads: Vec<Grads> = per_frame
            .par_chunks(FRAME_CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut local = Grads::zeros_like(store);
                for (j, (df, _)) in chunk.iter().enumerate() {
                    let f = ci * FRAME_CHUNK + j;
                    self.sln.backward(store, &cache.sln[f], df.clone(), &mut local);
                }
                local
            })
            .collect();
        for g in &chunk_grads {
            grads.add_assign(g);
        }
    }

    /// Zeroes the last STN layer so every transformation vector is exactly zero.
    pub fn zero_stn_output(&self, store: &mut ParamStore) {
        if let Some(stn) = &self.stn {
            stn.zero_output_layer(store);
        }
    }
}
