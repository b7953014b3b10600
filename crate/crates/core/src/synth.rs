//! Procedural silhouette + SMPL gait sequences.
//!
//! Every subject is a articulated figure (capsule limbs, tapered torso, round
//! head) walking in place with a sinusoidal gait. A frame is rendered purely
//! from its [`SmplVector`] and the frame size, so the SMPL file written next
//! to the silhouettes reproduces them exactly.
//!
//! Encoding of the 85 slots (all angles in radians):
//!
//! | slots       | meaning                                                   |
//! |-------------|-----------------------------------------------------------|
//! | pose 0..3   | global orientation, `[0, azimuth, 0]`                     |
//! | pose 3..6   | left hip `[swing, 0, 0]` (joint 1)                        |
//! | pose 6..9   | right hip (joint 2)                                       |
//! | pose 12..15 | left knee `[flexion, 0, 0]` (joint 4)                     |
//! | pose 15..18 | right knee (joint 5)                                      |
//! | pose 48..51 | left shoulder `[swing, 0, 0]` (joint 16)                  |
//! | pose 51..54 | right shoulder (joint 17)                                 |
//! | pose 54..57 | left elbow `[flexion, 0, 0]` (joint 18)                   |
//! | pose 57..60 | right elbow (joint 19)                                    |
//! | shape 0..10 | body parameters mapped to `[-1, 1]`, see [`BodyParams`]   |
//! | camera      | `(scale, tx, ty)`: figure height as a fraction of the     |
//! |             | frame height, figure centre offset as fractions of width  |
//! |             | and height                                                |
//!
//! Azimuth 0 faces the camera; 90 degrees is a side view.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::manifest::{DatasetManifest, InputSize, SequenceEntry, Split, MANIFEST_FILE};
use crate::preprocess::{write_silhouette, write_smpl_file};
use crate::types::{SilhouetteFrame, SmplVector, POSE_DIM};

const J_PELVIS: usize = 0;
const J_HIP: [usize; 2] = [1, 2];
const J_KNEE: [usize; 2] = [4, 5];
const J_SHOULDER: [usize; 2] = [16, 17];
const J_ELBOW: [usize; 2] = [18, 19];

const STREAM_SUBJECT: u64 = 11;
const STREAM_SEQUENCE: u64 = 12;
const STREAM_VIEW: u64 = 13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewCluster {
    pub center_deg: f64,
    pub spread_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_subjects: usize,
    pub sequences_per_subject: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Sequence `i` of a subject is filmed from cluster `i % clusters`.
    pub views: Vec<ViewCluster>,
    /// Raw frame width range `[lo, hi]` in pixels.
    pub frame_width: [usize; 2],
    pub frame_height: [usize; 2],
    /// Gait cycles per frame, `[lo, hi]`.
    pub cadence: [f64; 2],
    /// Probability that a frame gets a rectangular cutout.
    pub noise: f64,
    /// Subjects `0..train_subjects` form the training split; the rest are
    /// split into query and gallery. Defaults to half.
    pub train_subjects: Option<usize>,
    /// Normalized frame size recorded in the manifest.
    pub input_height: usize,
    pub input_width: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_subjects: 16,
            sequences_per_subject: 4,
            min_frames: 60,
            max_frames: 60,
            views: vec![ViewCluster {
                center_deg: 0.0,
                spread_deg: 10.0,
            }],
            frame_width: [100, 400],
            frame_height: [200, 800],
            cadence: [1.0 / 32.0, 1.0 / 20.0],
            noise: 0.0,
            train_subjects: None,
            input_height: 64,
            input_width: 44,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn train_subject_count(&self) -> usize {
        self.train_subjects.unwrap_or(self.num_subjects / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(GaitError::Config(m));
        if self.num_subjects == 0 || self.sequences_per_subject < 2 {
            return err("need at least one subject and two sequences per subject".into());
        }
        if self.min_frames < 25 || self.max_frames > 500 || self.min_frames > self.max_frames {
            return err(format!(
                "frame range [{}, {}] must lie within [25, 500]",
                self.min_frames, self.max_frames
            ));
        }
        if self.views.is_empty() || self.views.iter().any(|v| !(v.spread_deg >= 0.0)) {
            return err("need at least one view cluster with non-negative spread".into());
        }
        let ordered = |r: [usize; 2], min: usize| r[0] >= min && r[0] <= r[1];
        if !ordered(self.frame_width, 16) || !ordered(self.frame_height, 32) {
            return err(format!(
                "frame size ranges {:?} x {:?} invalid",
                self.frame_width, self.frame_height
            ));
        }
        if !(self.cadence[0] > 0.0 && self.cadence[0] <= self.cadence[1] && self.cadence[1] < 0.5) {
            return err(format!("cadence range {:?} invalid", self.cadence));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return err(format!("noise {} outside [0, 1]", self.noise));
        }
        let train = self.train_subject_count();
        if train >= self.num_subjects {
            return err(format!(
                "{train} training subjects leave no test subjects out of {}",
                self.num_subjects
            ));
        }
        if !self.input_height.is_multiple_of(4) || !self.input_width.is_multiple_of(4) || self.input_height == 0 || self.input_width == 0 {
            return err("input size must be positive and divisible by 4".into());
        }
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

/// Physical body description of one subject. Lengths are fractions of
/// stature except `stature` itself (metres).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyParams {
    pub stature: f64,
    pub leg: f64,
    pub arm: f64,
    pub shoulder_width: f64,
    pub hip_width: f64,
    pub torso_depth: f64,
    pub head_radius: f64,
    pub leg_thickness: f64,
    pub arm_thickness: f64,
    pub neck: f64,
}

/// `(lo, hi)` of every body parameter, in shape-slot order.
const BODY_RANGES: [(f64, f64); 10] = [
    (1.50, 1.95),
    (0.44, 0.54),
    (0.36, 0.46),
    (0.20, 0.30),
    (0.14, 0.22),
    (0.10, 0.17),
    (0.050, 0.075),
    (0.035, 0.065),
    (0.025, 0.045),
    (0.025, 0.05),
];

impl BodyParams {
    fn to_array(self) -> [f64; 10] {
        [
            self.stature,
            self.leg,
            self.arm,
            self.shoulder_width,
            self.hip_width,
            self.torso_depth,
            self.head_radius,
            self.leg_thickness,
            self.arm_thickness,
            self.neck,
        ]
    }

    fn from_array(a: [f64; 10]) -> Self {
        Self {
            stature: a[0],
            leg: a[1],
            arm: a[2],
            shoulder_width: a[3],
            hip_width: a[4],
            torso_depth: a[5],
            head_radius: a[6],
            leg_thickness: a[7],
            arm_thickness: a[8],
            neck: a[9],
        }
    }

    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let mut a = [0.0; 10];
        for (v, &(lo, hi)) in a.iter_mut().zip(&BODY_RANGES) {
            *v = rng.random_range(lo..=hi);
        }
        Self::from_array(a)
    }

    /// Shape slots: every parameter mapped linearly from its range to `[-1, 1]`.
    pub fn encode(&self) -> [f64; 10] {
        let mut out = [0.0; 10];
        for ((o, v), &(lo, hi)) in out.iter_mut().zip(self.to_array()).zip(&BODY_RANGES) {
            *o = 2.0 * (v - lo) / (hi - lo) - 1.0;
        }
        out
    }

    pub fn decode(slots: &[f64]) -> Self {
        let mut a = [0.0; 10];
        for ((v, s), &(lo, hi)) in a.iter_mut().zip(slots).zip(&BODY_RANGES) {
            *v = lo + (s + 1.0) * 0.5 * (hi - lo);
        }
        Self::from_array(a)
    }
}

/// Per-subject walking style.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitStyle {
    /// Gait cycles per frame.
    pub cadence: f64,
    pub hip_swing: f64,
    pub knee_flex: f64,
    pub arm_swing: f64,
    pub elbow_flex: f64,
}

impl GaitStyle {
    pub fn random<R: Rng>(rng: &mut R, cadence: [f64; 2]) -> Self {
        Self {
            cadence: rng.random_range(cadence[0]..=cadence[1]),
            hip_swing: rng.random_range(0.25..0.55),
            knee_flex: rng.random_range(0.3..0.9),
            arm_swing: rng.random_range(0.15..0.6),
            elbow_flex: rng.random_range(0.1..0.6),
        }
    }

    /// Joint angles at gait phase `phase` (radians).
    fn pose(&self, phase: f64, azimuth: f64) -> [f64; POSE_DIM] {
        let mut pose = [0.0; POSE_DIM];
        let mut set = |joint: usize, x: f64, y: f64| {
            pose[joint * 3] = x;
            pose[joint * 3 + 1] = y;
        };
        set(J_PELVIS, 0.0, azimuth);
        for side in 0..2 {
            let p = phase + side as f64 * PI;
            set(J_HIP[side], self.hip_swing * p.sin(), 0.0);
            set(J_KNEE[side], self.knee_flex * (p - 0.5 * PI).sin().max(0.0), 0.0);
            set(J_SHOULDER[side], -self.arm_swing * p.sin(), 0.0);
            set(J_ELBOW[side], self.elbow_flex * (1.0 + 0.5 * p.cos()), 0.0);
        }
        pose
    }
}

/// Camera of one (subject, view): figure scale and placement in the frame.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Framing {
    height: usize,
    width: usize,
    scale: f64,
    tx: f64,
    ty: f64,
}

/// Framing is a function of the subject and the exact azimuth, so sequences
/// of the same subject seen from the same direction render identically.
fn framing(cfg: &SynthConfig, subject: u32, azimuth: f64) -> Framing {
    let mut rng = rng_for(cfg.seed ^ azimuth.to_bits(), STREAM_VIEW, subject as u64);
    Framing {
        height: rng.random_range(cfg.frame_height[0]..=cfg.frame_height[1]),
        width: rng.random_range(cfg.frame_width[0]..=cfg.frame_width[1]),
        scale: rng.random_range(0.55..0.85),
        tx: rng.random_range(-0.08..0.08),
        ty: rng.random_range(-0.04..0.04),
    }
}

/// Filled shapes in pixel coordinates.
struct Canvas {
    frame: SilhouetteFrame,
}

impl Canvas {
    fn new(height: usize, width: usize) -> Self {
        Self {
            frame: SilhouetteFrame::zeros(height, width),
        }
    }

    fn fill_where(&mut self, bbox: [f64; 4], inside: impl Fn(f64, f64) -> bool) {
        let (h, w) = (self.frame.height() as f64, self.frame.width() as f64);
        let c0 = bbox[0].floor().clamp(0.0, w) as usize;
        let c1 = bbox[1].ceil().clamp(0.0, w) as usize;
        let r0 = bbox[2].floor().clamp(0.0, h) as usize;
        let r1 = bbox[3].ceil().clamp(0.0, h) as usize;
        for r in r0..r1 {
            for c in c0..c1 {
                if inside(c as f64 + 0.5, r as f64 + 0.5) {
                    self.frame.set(r, c, 255);
                }
            }
        }
    }

    fn capsule(&mut self, a: [f64; 2], b: [f64; 2], radius: f64) {
        let bbox = [
            a[0].min(b[0]) - radius,
            a[0].max(b[0]) + radius,
            a[1].min(b[1]) - radius,
            a[1].max(b[1]) + radius,
        ];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        self.fill_where(bbox, |x, y| {
            let t = if len2 > 0.0 {
                (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (px, py) = (a[0] + t * dx - x, a[1] + t * dy - y);
            px * px + py * py <= radius * radius
        });
    }

    /// Convex polygon with vertices in either winding order.
    fn polygon(&mut self, pts: &[[f64; 2]]) {
        let bbox = [
            pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min),
            pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max),
            pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min),
            pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max),
        ];
        self.fill_where(bbox, |x, y| {
            let mut sign = 0.0;
            for i in 0..pts.len() {
                let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
                let cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
                if cross != 0.0 {
                    if sign == 0.0 {
                        sign = cross.signum();
                    } else if cross.signum() != sign {
                        return false;
                    }
                }
            }
            true
        });
    }
}

/// Renders one silhouette of `height x width` pixels from its SMPL vector.
pub fn render_frame(v: &SmplVector, height: usize, width: usize) -> SilhouetteFrame {
    let body = BodyParams::decode(v.shape());
    let azimuth = v.joint(J_PELVIS)[1];
    let cam = v.camera();
    let (scale, tx, ty) = (cam[0], cam[1], cam[2]);
    let s = body.stature;
    let px = scale * height as f64 / s;
    let leg = body.leg * s;
    let (ca, sa) = (azimuth.cos(), azimuth.sin());
    // body frame: x lateral, y up, z forward; pelvis at the origin
    let centre_u = width as f64 * (0.5 + tx);
    let pelvis_v = height as f64 * (0.5 + ty) + (leg - 0.5 * s) * px;
    let project = |p: [f64; 3]| -> [f64; 2] { [centre_u + (p[0] * ca + p[2] * sa) * px, pelvis_v - p[1] * px] };
    let mut canvas = Canvas::new(height, width);

    let hip_x = 0.35 * body.hip_width * s;
    let (thigh, shin) = (0.52 * leg, 0.48 * leg);
    for (side, sign) in [(0usize, -1.0), (1, 1.0)] {
        let hip = [sign * hip_x, 0.0, 0.0];
        let swing = v.joint(J_HIP[side])[0];
        let knee_angle = swing - v.joint(J_KNEE[side])[0];
        let knee = [hip[0], -thigh * swing.cos(), thigh * swing.sin()];
        let ankle = [hip[0], knee[1] - shin * knee_angle.cos(), knee[2] + shin * knee_angle.sin()];
        let r = 0.5 * body.leg_thickness * s * px;
        canvas.capsule(project(hip), project(knee), r);
        canvas.capsule(project(knee), project(ankle), r * 0.85);
    }

    let head_r = body.head_radius * s;
    let neck = body.neck * s;
    let torso = s - leg - neck - 2.0 * head_r;
    let half_width = |w: f64| 0.5 * ((w * s * ca).powi(2) + (body.torso_depth * s * sa).powi(2)).sqrt() * px;
    let bottom = project([0.0, 0.0, 0.0]);
    let top = project([0.0, torso, 0.0]);
    let (hb, ht) = (half_width(body.hip_width), half_width(body.shoulder_width));
    canvas.polygon(&[
        [bottom[0] - hb, bottom[1]],
        [bottom[0] + hb, bottom[1]],
        [top[0] + ht, top[1]],
        [top[0] - ht, top[1]],
    ]);
    canvas.capsule(top, project([0.0, torso + neck, 0.0]), 0.35 * head_r * px);
    let head = project([0.0, torso + neck + head_r, 0.0]);
    canvas.capsule(head, head, head_r * px);

    let arm = body.arm * s;
    let (upper, fore) = (0.55 * arm, 0.45 * arm);
    let shoulder_x = 0.5 * body.shoulder_width * s;
    for (side, sign) in [(0usize, -1.0), (1, 1.0)] {
        let shoulder = [sign * shoulder_x, 0.95 * torso, 0.0];
        let swing = v.joint(J_SHOULDER[side])[0];
        let fore_angle = swing + v.joint(J_ELBOW[side])[0];
        let elbow = [shoulder[0], shoulder[1] - upper * swing.cos(), upper * swing.sin()];
        let wrist = [elbow[0], elbow[1] - fore * fore_angle.cos(), elbow[2] + fore * fore_angle.sin()];
        let r = 0.5 * body.arm_thickness * s * px;
        canvas.capsule(project(shoulder), project(elbow), r);
        canvas.capsule(project(elbow), project(wrist), r * 0.85);
    }
    canvas.frame
}

/// Full description of one generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePlan {
    pub subject_id: u32,
    pub index: usize,
    pub camera_id: u32,
    pub azimuth_deg: f64,
    pub height: usize,
    pub width: usize,
    pub smpls: Vec<SmplVector>,
    /// Cutout rectangles `(frame, row0, row1, col0, col1)`.
    pub cutouts: Vec<(usize, usize, usize, usize, usize)>,
}

impl SequencePlan {
    pub fn sequence_id(&self) -> String {
        format!("s{:04}_q{:02}", self.subject_id, self.index)
    }

    /// Frame `i` including its cutout, if any.
    pub fn render(&self, i: usize) -> SilhouetteFrame {
        let mut frame = render_frame(&self.smpls[i], self.height, self.width);
        for &(_, r0, r1, c0, c1) in self.cutouts.iter().filter(|c| c.0 == i) {
            let mut cut = frame.clone();
            for r in r0..r1 {
                for c in c0..c1 {
                    cut.set(r, c, 0);
                }
            }
            if cut.foreground_count(1) > 0 {
                frame = cut;
            }
        }
        frame
    }
}

fn plan_subject(cfg: &SynthConfig, subject: u32) -> Vec<SequencePlan> {
    let mut rng = rng_for(cfg.seed, STREAM_SUBJECT, subject as u64);
    let body = BodyParams::random(&mut rng);
    let style = GaitStyle::random(&mut rng, cfg.cadence);
    let shape = body.encode();
    (0..cfg.sequences_per_subject)
        .map(|index| {
            let mut rng = rng_for(cfg.seed, STREAM_SEQUENCE, ((subject as u64) << 16) | index as u64);
            let cluster = index % cfg.views.len();
            let view = cfg.views[cluster];
            let azimuth_deg = if view.spread_deg > 0.0 {
                view.center_deg + rng.random_range(-view.spread_deg..=view.spread_deg)
            } else {
                view.center_deg
            };
            let azimuth = azimuth_deg.to_radians();
            let fr = framing(cfg, subject, azimuth);
            let len = rng.random_range(cfg.min_frames..=cfg.max_frames);
            let phase0 = rng.random_range(0.0..2.0 * PI);
            let smpls: Vec<SmplVector> = (0..len)
                .map(|t| {
                    let phase = phase0 + 2.0 * PI * style.cadence * t as f64;
                    let mut v = SmplVector::zeros();
                    v.pose_mut().copy_from_slice(&style.pose(phase, azimuth));
                    v.shape_mut().copy_from_slice(&shape);
                    v.camera_mut().copy_from_slice(&[fr.scale, fr.tx, fr.ty]);
                    v
                })
                .collect();
            let mut cutouts = Vec::new();
            for t in 0..len {
                if cfg.noise > 0.0 && rng.random::<f64>() < cfg.noise {
                    let ch = rng.random_range(1..=(fr.height / 6).max(1));
                    let cw = rng.random_range(1..=(fr.width / 4).max(1));
                    let r0 = rng.random_range(0..fr.height - ch.min(fr.height - 1));
                    let c0 = rng.random_range(0..fr.width - cw.min(fr.width - 1));
                    cutouts.push((t, r0, (r0 + ch).min(fr.height), c0, (c0 + cw).min(fr.width)));
                }
            }
            SequencePlan {
                subject_id: subject,
                index,
                camera_id: cluster as u32,
                azimuth_deg,
                height: fr.height,
                width: fr.width,
                smpls,
                cutouts,
            }
        })
        .collect()
}

/// Every sequence of the dataset, without rendering any pixel.
pub fn plan_dataset(cfg: &SynthConfig) -> Result<Vec<SequencePlan>> {
    cfg.validate()?;
    Ok((0..cfg.num_subjects as u32)
        .flat_map(|s| plan_subject(cfg, s))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Test subjects: first sequence is the query, the rest form the gallery.
    Standard,
    /// Test subjects: the first view-0 sequence is the query and only
    /// sequences from other view clusters enter the gallery.
    Confounded,
}

/// Split of one planned sequence, `None` when it is left out.
fn assign(cfg: &SynthConfig, plan: &SequencePlan, mode: SplitMode) -> Option<Split> {
    if (plan.subject_id as usize) < cfg.train_subject_count() {
        return Some(Split::Train);
    }
    match mode {
        SplitMode::Standard => Some(if plan.index == 0 { Split::Query } else { Split::Gallery }),
        SplitMode::Confounded => match (plan.camera_id, plan.index) {
            (0, 0) => Some(Split::Query),
            (0, _) => None,
            _ => Some(Split::Gallery),
        },
    }
}

fn write_sequence(out: &Path, plan: &SequencePlan) -> Result<SequenceEntry> {
    let id = plan.sequence_id();
    let sil_dir = out.join("sil").join(&id);
    fs::create_dir_all(&sil_dir).map_err(|e| GaitError::io(&sil_dir, e))?;
    let mut frames = Vec::with_capacity(plan.smpls.len());
    for i in 0..plan.smpls.len() {
        let rel = format!("sil/{id}/{i:04}.png");
        write_silhouette(&out.join(&rel), &plan.render(i))?;
        frames.push(rel);
    }
    let smpl_dir = out.join("smpl");
    fs::create_dir_all(&smpl_dir).map_err(|e| GaitError::io(&smpl_dir, e))?;
    let smpl = format!("smpl/{id}.txt");
    write_smpl_file(&out.join(&smpl), &plan.smpls)?;
    Ok(SequenceEntry {
        subject_id: plan.subject_id,
        camera_id: plan.camera_id,
        sequence_id: id,
        split: Split::Train,
        frames,
        smpl,
    })
}

/// Renders the dataset under `out` and writes its manifest.
pub fn generate_dataset(cfg: &SynthConfig, out: &Path, mode: SplitMode) -> Result<DatasetManifest> {
    if mode == SplitMode::Confounded && cfg.views.len() < 2 {
        return Err(GaitError::Config("need ≥2 clusters".into()));
    }
    let plans = plan_dataset(cfg)?;
    fs::create_dir_all(out).map_err(|e| GaitError::io(out, e))?;
    let kept: Vec<(&SequencePlan, Split)> = plans
        .iter()
        .filter_map(|p| assign(cfg, p, mode).map(|s| (p, s)))
        .collect();
    let entries = kept
        .par_iter()
        .map(|(p, split)| {
            let mut e = write_sequence(out, p)?;
            e.split = *split;
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = DatasetManifest::new(InputSize {
        height: cfg.input_height,
        width: cfg.input_width,
    });
    manifest.sequences = entries;
    manifest.save(out.join(MANIFEST_FILE))?;
    manifest.base_dir = out.to_path_buf();
    Ok(manifest)
}

/// [`generate_dataset`] with the view-confounded split.
pub fn make_confounded_split(cfg: &SynthConfig, out: &Path) -> Result<DatasetManifest> {
    generate_dataset(cfg, out, SplitMode::Confounded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_subjects: 4,
            sequences_per_subject: 2,
            min_frames: 25,
            max_frames: 30,
            frame_width: [60, 120],
            frame_height: [120, 240],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn body_encoding_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = BodyParams::random(&mut rng);
        let back = BodyParams::decode(&b.encode());
        for (x, y) in b.to_array().iter().zip(back.to_array()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(b.encode().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn frames_have_foreground_in_bounds() {
        let plans = plan_dataset(&small()).unwrap();
        for p in &plans {
            for i in [0, p.smpls.len() - 1] {
                let f = p.render(i);
                assert_eq!((f.height(), f.width()), (p.height, p.width));
                assert!(f.foreground_count(1) > 50);
            }
        }
    }

    #[test]
    fn view_changes_width_not_shape() {
        let plans = plan_dataset(&small()).unwrap();
        let mut front = plans[0].smpls[0];
        let mut side = front;
        front.pose_mut()[1] = 0.0;
        side.pose_mut()[1] = PI / 2.0;
        let width = |f: &SilhouetteFrame| {
            let cols: Vec<usize> = (0..f.width()).filter(|&c| (0..f.height()).any(|r| f.get(r, c) > 0)).collect();
            cols.last().unwrap() - cols.first().unwrap()
        };
        let (a, b) = (render_frame(&front, 400, 300), render_frame(&side, 400, 300));
        assert_ne!(width(&a), width(&b));
        assert_eq!(front.shape(), side.shape());
    }

    #[test]
    fn rerender_matches() {
        let plans = plan_dataset(&small()).unwrap();
        let p = &plans[3];
        assert_eq!(p.render(5), render_frame(&p.smpls[5], p.height, p.width));
    }

    #[test]
    fn plan_is_seeded() {
        assert_eq!(plan_dataset(&small()).unwrap(), plan_dataset(&small()).unwrap());
        let other = SynthConfig { seed: 8, ..small() };
        assert_ne!(plan_dataset(&small()).unwrap(), plan_dataset(&other).unwrap());
    }

    #[test]
    fn confounded_needs_two_clusters() {
        let dir = tempfile::tempdir().unwrap();
        let err = make_confounded_split(&small(), dir.path()).unwrap_err();
        assert!(err.to_string().contains("need ≥2 clusters"));
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(SynthConfig { min_frames: 10, ..small() }.validate().is_err());
        assert!(SynthConfig { max_frames: 501, ..small() }.validate().is_err());
        assert!(SynthConfig { train_subjects: Some(4), ..small() }.validate().is_err());
        assert!(SynthConfig { views: vec![], ..small() }.validate().is_err());
    }
}
