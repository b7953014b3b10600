//! Batch-all triplet loss on part embeddings plus a part-wise softmax head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::nn::linalg::{gemm, Op};
use crate::nn::{init, BatchNorm1d, BnCache, BnStats, Grads, ParamId, ParamStore, TensorKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the triplet term.
    pub alpha: f64,
    /// Weight of the cross-entropy term.
    pub beta: f64,
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            margin: 0.2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.margin >= 0.0) {
            return Err(GaitError::Config(format!(
                "loss weights and margin must be non-negative, got alpha={} beta={} margin={}",
                self.alpha, self.beta, self.margin
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub triplet: f64,
    pub ce: f64,
    pub total: f64,
    /// Triplets with positive loss, summed over parts.
    pub active_triplets: usize,
}

/// Triplet loss and its gradient for a batch of flat `parts x dim` embeddings.
///
/// For every part, each anchor/positive/negative triple contributes
/// `max(0, margin + d(a,p) - d(a,n))` with Euclidean `d`; the part loss is the
/// mean over triples with a positive term (zero if there are none) and the
/// returned loss is the mean over parts.
pub fn triplet_loss(
    emb: &[Vec<f64>],
    labels: &[usize],
    parts: usize,
    dim: usize,
    margin: f64,
) -> (f64, Vec<Vec<f64>>, usize) {
    let n = emb.len();
    let mut grads = vec![vec![0.0; parts * dim]; n];
    let mut total = 0.0;
    let mut active_all = 0;
    for p in 0..parts {
        let part = |i: usize| &emb[i][p * dim..(p + 1) * dim];
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = part(i)
                    .iter()
                    .zip(part(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        // coefficient of each distance in the summed loss
        let mut coef = vec![0.0; n * n];
        let mut sum = 0.0;
        let mut active = 0usize;
        for a in 0..n {
            for pos in 0..n {
                if pos == a || labels[pos] != labels[a] {
                    continue;
                }
                for neg in 0..n {
                    if labels[neg] == labels[a] {
                        continue;
                    }
                    let l = margin + dist[a * n + pos] - dist[a * n + neg];
                    if l > 0.0 {
                        sum += l;
                        active += 1;
                        coef[a * n + pos] += 1.0;
                        coef[a * n + neg] -= 1.0;
                    }
                }
            }
        }
        if active == 0 {
            continue;
        }
        active_all += active;
        total += sum / active as f64;
        let scale = 1.0 / (active as f64 * parts as f64);
        for i in 0..n {
            for j in 0..n {
                let c = coef[i * n + j];
                let d = dist[i * n + j];
                if c == 0.0 || d == 0.0 {
                    continue;
                }
                let k = c * scale / d;
                for t in 0..dim {
                    let diff = emb[i][p * dim + t] - emb[j][p * dim + t];
                    grads[i][p * dim + t] += k * diff;
                    grads[j][p * dim + t] -= k * diff;
                }
            }
        }
    }
    (total / parts as f64, grads, active_all)
}

/// Per-part batch norm followed by a bias-free per-part linear classifier.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub parts: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub bn: BatchNorm1d,
    pub fc: ParamId,
}

#[derive(Debug)]
pub struct HeadCache {
    n: usize,
    bn: BnCache,
    normed: Vec<f64>,
    /// Softmax probabilities, `n x parts x classes`.
    probs: Vec<f64>,
}

impl ClassifierHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        parts: usize,
        dim: usize,
        num_classes: usize,
        eps: f64,
        momentum: f64,
        rng: &mut R,
    ) -> Self {
        let bn = BatchNorm1d::with_shape(store, "head.bn", vec![parts, dim], eps, momentum);
        let fc = store.register(
            "head.fc",
            vec![parts, dim, num_classes],
            TensorKind::Weight,
            init::fan_in_uniform(rng, dim, parts * dim * num_classes),
        );
        Self {
            parts,
            dim,
            num_classes,
            bn,
            fc,
        }
    }

    fn logits(&self, store: &ParamStore, normed: &[f64], n: usize) -> Vec<f64> {
        let (s, c, k) = (self.parts, self.dim, self.num_classes);
        let w = store.get(self.fc);
        let mut out = vec![0.0; n * s * k];
        for i in 0..n {
            for p in 0..s {
                let row = (i * s + p) * c;
                gemm(
                    1,
                    c,
                    k,
                    &normed[row..row + c],
                    Op::N,
                    &w[p * c * k..(p + 1) * c * k],
                    Op::N,
                    0.0,
                    &mut out[(i * s + p) * k..(i * s + p + 1) * k],
                );
            }
        }
        out
    }

    /// Mean cross-entropy over samples and parts, in training mode.
    pub fn forward_train(
        &self,
        store: &ParamStore,
        emb: &[Vec<f64>],
        labels: &[usize],
    ) -> Result<(f64, HeadCache, BnStats)> {
        let n = emb.len();
        if let Some(&label) = labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(GaitError::Label {
                label,
                num_classes: self.num_classes,
            });
        }
        let flat: Vec<f64> = emb.iter().flat_map(|e| e.iter().copied()).collect();
        let (normed, bn, stats) = self.bn.forward_train(store, &flat, n);
        let mut probs = self.logits(store, &normed, n);
        let k = self.num_classes;
        let mut loss = 0.0;
        for (r, row) in probs.chunks_mut(k).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
            loss -= row[labels[r / self.parts]].max(f64::MIN_POSITIVE).ln();
        }
        loss /= (n * self.parts) as f64;
        Ok((
            loss,
            HeadCache {
                n,
                bn,
                normed,
                probs,
            },
            stats,
        ))
    }

    /// Adds the head gradients to `grads`; returns the embedding gradient
    /// scaled by `weight`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &HeadCache,
        labels: &[usize],
        weight: f64,
        grads: &mut Grads,
    ) -> Vec<Vec<f64>> {
        let (n, s, c, k) = (cache.n, self.parts, self.dim, self.num_classes);
        let scale = weight / (n * s) as f64;
        let mut dlogits = cache.probs.clone();
        for (r, row) in dlogits.chunks_mut(k).enumerate() {
            row[labels[r / s]] -= 1.0;
            row.iter_mut().for_each(|v| *v *= scale);
        }
        let w = store.get(self.fc);
        let mut dnormed = vec![0.0; n * s * c];
        {
            let dw = grads.get_mut(self.fc);
            for i in 0..n {
                for p in 0..s {
                    let row = (i * s + p) * c;
                    let dl = &dlogits[(i * s + p) * k..(i * s + p + 1) * k];
                    gemm(c, 1, k, &cache.normed[row..row + c], Op::N, dl, Op::N, 1.0, &mut dw[p * c * k..(p + 1) * c * k]);
                    gemm(1, k, c, dl, Op::N, &w[p * c * k..(p + 1) * c * k], Op::T, 0.0, &mut dnormed[row..row + c]);
                }
            }
        }
        let dx = self.bn.backward(store, &cache.bn, &dnormed, grads);
        dx.chunks(s * c).map(<[f64]>::to_vec).collect()
    }
}

/// Everything produced by one loss evaluation.
#[derive(Debug)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    /// Gradient of the total loss with respect to each embedding.
    pub d_emb: Vec<Vec<f64>>,
    pub bn_stats: Vec<BnStats>,
}

/// `alpha * triplet + beta * ce`; head gradients are added to `grads`.
pub fn total_loss(
    cfg: &LossConfig,
    head: &ClassifierHead,
    store: &ParamStore,
    emb: &[Vec<f64>],
    labels: &[usize],
    grads: &mut Grads,
) -> Result<LossOutput> {
    if emb.len() != labels.len() {
        return Err(GaitError::Shape(format!(
            "{} embeddings but {} labels",
            emb.len(),
            labels.len()
        )));
    }
    let (tri, mut d_emb, active) = triplet_loss(emb, labels, head.parts, head.dim, cfg.margin);
    d_emb.iter_mut().flatten().for_each(|v| *v *= cfg.alpha);
    let (ce, cache, stats) = head.forward_train(store, emb, labels)?;
    let d_ce = head.backward(store, &cache, labels, cfg.beta, grads);
    for (d, e) in d_emb.iter_mut().zip(&d_ce) {
        for (a, b) in d.iter_mut().zip(e) {
            *a += b;
        }
    }
    Ok(LossOutput {
        breakdown: LossBreakdown {
            triplet: tri,
            ce,
            total: cfg.alpha * tri + cfg.beta * ce,
            active_triplets: active,
        },
        d_emb,
        bn_stats: vec![stats],
    })
}
