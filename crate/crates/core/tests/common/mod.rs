#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smplgait::losses::LossConfig;
use smplgait::model::ModelConfig;
use smplgait::nn::TensorKind;
use smplgait::train::{Batch, TrainConfig, Trainer};
use smplgait::{GaitSample, SilhouetteFrame, SmplVector};

/// 16x16 input, two channels everywhere, scales {1, 2}, batch of 2 x 2.
pub fn mini_trainer(enable_3d: bool) -> Trainer {
    let cfg = ModelConfig {
        input_height: 16,
        input_width: 16,
        channels: vec![2; 6],
        stn_hidden: vec![6, 5],
        stn_dropout: vec![0.0; 3],
        stn_out_gain: 0.5,
        hpp_scales: vec![1, 2],
        part_dim: 3,
        enable_3d_branch: enable_3d,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        ids_per_batch: 2,
        samples_per_id: 2,
        frames: 3,
        epochs: 1,
        lr_milestones: vec![],
        ..TrainConfig::default()
    };
    Trainer::new(cfg, LossConfig::default(), train, vec![0, 1]).unwrap()
}

pub fn random_sample(rng: &mut ChaCha8Rng, subject: u32, frames: usize, h: usize, w: usize) -> GaitSample {
    let fs = (0..frames)
        .map(|_| SilhouetteFrame::new(h, w, (0..h * w).map(|_| rng.random()).collect()).unwrap())
        .collect();
    let smpls = (0..frames)
        .map(|_| {
            let v: Vec<f64> = (0..85).map(|_| rng.random_range(-1.0..1.0)).collect();
            SmplVector::from_slice(&v).unwrap()
        })
        .collect();
    GaitSample::new(subject, 0, format!("s{subject}-{}", rng.random::<u32>()), fs, smpls).unwrap()
}

/// Four sequences of three random frames, two per identity.
pub fn random_batch(seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Batch::default();
    for i in 0..4 {
        let label = i / 2;
        let s = random_sample(&mut rng, label as u32, 3, 16, 16);
        batch.sequence_ids.push(s.sequence_id.clone());
        batch.samples.push(s);
        batch.labels.push(label);
    }
    batch
}

pub struct GroupCheck {
    pub name: String,
    pub rel_err: f64,
    /// Coordinates whose stencil straddled a kink and were re-measured with a
    /// smaller step.
    pub refined: usize,
}

/// Central differences of the total loss for every trainable tensor.
///
/// Every coordinate is measured with `step` and `step / 10`. When the two
/// disagree, a non-differentiable point (max, ReLU or hinge switch) lies inside
/// the stencil and the pair is shifted one decade down, at most three times.
/// A wrong analytic gradient disagrees at every step, so this only removes
/// stencil artefacts.
pub fn gradient_check(t: &mut Trainer, batch: &Batch, step: f64) -> Vec<GroupCheck> {
    let rng = ChaCha8Rng::seed_from_u64(0);
    let loss = |t: &Trainer| t.compute_gradients(batch, &mut rng.clone()).unwrap().0.total;
    let (_, grads, _) = t.compute_gradients(batch, &mut rng.clone()).unwrap();
    let ids: Vec<_> = t.store.iter().map(|(id, tt)| (id, tt.kind, tt.name.clone())).collect();
    let mut out = Vec::new();
    for (id, kind, name) in ids {
        if kind == TensorKind::Buffer {
            continue;
        }
        let n = t.store.get(id).len();
        let mut num = vec![0.0; n];
        let mut refined = 0;
        for j in 0..n {
            let orig = t.store.get(id)[j];
            let central = |t: &mut Trainer, h: f64| {
                t.store.get_mut(id)[j] = orig + h;
                let lp = loss(t);
                t.store.get_mut(id)[j] = orig - h;
                let lm = loss(t);
                t.store.get_mut(id)[j] = orig;
                (lp - lm) / (2.0 * h)
            };
            let mut h = step;
            let mut coarse = central(t, h);
            for depth in 0..4 {
                let fine = central(t, h / 10.0);
                if (coarse - fine).abs() <= 1e-6 * coarse.abs().max(fine.abs()) + 1e-10 || depth == 3 {
                    break;
                }
                refined += 1;
                h /= 10.0;
                coarse = fine;
            }
            num[j] = coarse;
        }
        let ana = grads.get(id);
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = ana.iter().zip(&num).map(|(a, b)| a - b).collect();
        // floor keeps groups with a vanishing gradient (biases ahead of a
        // batch norm) from dividing noise by noise
        let scale = norm(ana).max(norm(&num)).max(1e-7);
        out.push(GroupCheck {
            name,
            rel_err: norm(&diff) / scale,
            refined,
        });
    }
    out
}
