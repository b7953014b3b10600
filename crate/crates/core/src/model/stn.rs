//! 3D spatial transformation network: three FC + BN + ReLU blocks mapping an
//! SMPL vector to a per-frame transformation vector of length `h * w`.

use rand::Rng;

use crate::nn::layers::{dropout_mask, relu_backward, relu_inplace};
use crate::nn::{BatchNorm1d, BnCache, BnStats, Grads, Linear, ParamStore};
use crate::types::SMPL_DIM;

#[derive(Debug, Clone)]
pub struct Stn {
    fcs: Vec<Linear>,
    bns: Vec<BatchNorm1d>,
    dropout: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StnCache {
    n: usize,
    /// Input of each FC layer.
    inputs: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    bn: Vec<BnCache>,
    /// ReLU outputs.
    outputs: Vec<Vec<f64>>,
}

impl Stn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        hidden: &[usize],
        out_dim: usize,
        dropout: &[f64],
        out_gain: f64,
        eps: f64,
        momentum: f64,
        rng: &mut R,
    ) -> Self {
        let dims = [SMPL_DIM, hidden[0], hidden[1], out_dim];
        let mut fcs = Vec::new();
        let mut bns = Vec::new();
        for i in 0..3 {
            fcs.push(Linear::new(store, &format!("stn.fc{}", i + 1), dims[i], dims[i + 1], rng));
            bns.push(BatchNorm1d::new(store, &format!("stn.bn{}", i + 1), dims[i + 1], eps, momentum));
        }
        store.get_mut(bns[2].gamma).fill(out_gain);
        Self {
            fcs,
            bns,
            dropout: dropout.to_vec(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.fcs[2].out_dim
    }

    pub fn layers(&self) -> (&[Linear], &[BatchNorm1d]) {
        (&self.fcs, &self.bns)
    }

    /// Eval mode: running statistics, no dropout; rows are independent.
    pub fn forward_eval(&self, store: &ParamStore, x: &[f64], n: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for (fc, bn) in self.fcs.iter().zip(&self.bns) {
            let z = fc.forward(store, &h, n);
            h = bn.forward_eval(store, &z);
            relu_inplace(&mut h);
        }
        h
    }

    pub fn forward_train<R: Rng>(
        &self,
        store: &ParamStore,
        x: &[f64],
        n: usize,
        rng: &mut R,
    ) -> (Vec<f64>, StnCache, Vec<BnStats>) {
        let mut cache = StnCache {
            n,
            inputs: Vec::new(),
            masks: Vec::new(),
            bn: Vec::new(),
            outputs: Vec::new(),
        };
        let mut stats = Vec::new();
        let mut h = x.to_vec();
        for ((fc, bn), &p) in self.fcs.iter().zip(&self.bns).zip(&self.dropout) {
            let mut z = fc.forward(store, &h, n);
            let mask = dropout_mask(rng, z.len(), p);
            for (v, m) in z.iter_mut().zip(&mask) {
                *v *= m;
            }
            let (mut y, bc, st) = bn.forward_train(store, &z, n);
            relu_inplace(&mut y);
            cache.inputs.push(h);
            cache.masks.push(mask);
            cache.bn.push(bc);
            cache.outputs.push(y.clone());
            stats.push(st);
            h = y;
        }
        (h, cache, stats)
    }

    pub fn backward(&self, store: &ParamStore, cache: &StnCache, d_out: Vec<f64>, grads: &mut Grads) {
        let mut d = d_out;
        for i in (0..3).rev() {
            relu_backward(&cache.outputs[i], &mut d);
            let mut dz = self.bns[i].backward(store, &cache.bn[i], &d, grads);
            for (v, m) in dz.iter_mut().zip(&cache.masks[i]) {
                *v *= m;
            }
            match self.fcs[i].backward(store, &cache.inputs[i], cache.n, &dz, grads, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }

    /// Forces the transformation output to exactly zero in both modes.
    pub fn zero_output_layer(&self, store: &mut ParamStore) {
        store.get_mut(self.fcs[2].weight).fill(0.0);
        store.get_mut(self.fcs[2].bias).fill(0.0);
        store.get_mut(self.bns[2].gamma).fill(0.0);
        store.get_mut(self.bns[2].beta).fill(0.0);
        store.get_mut(self.bns[2].running_mean).fill(0.0);
    }
}
