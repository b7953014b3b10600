//! Silhouette normalization, SMPL file parsing and frame sampling.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::manifest::{DatasetManifest, SequenceEntry, Split};
use crate::types::{GaitSample, SilhouetteFrame, SmplVector, SMPL_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub target_height: usize,
    pub target_width: usize,
    /// Pixels at or above this value count as foreground.
    pub threshold: u8,
    /// Maximum number of frames used per sequence at test time.
    pub test_frame_cap: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_height: 128,
            target_width: 88,
            threshold: 128,
            test_frame_cap: 500,
        }
    }
}

impl PreprocessConfig {
    pub fn with_size(target_height: usize, target_width: usize) -> Self {
        Self {
            target_height,
            target_width,
            ..Self::default()
        }
    }

    /// `max_scale` is the largest horizontal pyramid scale of the model fed by
    /// this pipeline; the pooled height must split evenly into it.
    pub fn validate(&self, max_scale: usize) -> Result<()> {
        let (h, w) = (self.target_height, self.target_width);
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(GaitError::Config(format!(
                "target size {h}x{w} must be positive and divisible by 4"
            )));
        }
        let pooled = (h / 4).max(w / 4);
        if max_scale == 0 || pooled % max_scale != 0 {
            return Err(GaitError::Config(format!(
                "pooled height {pooled} not divisible by pyramid scale {max_scale}"
            )));
        }
        if self.test_frame_cap == 0 {
            return Err(GaitError::Config("test_frame_cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// Aligns a raw silhouette to the configured size.
///
/// The foreground rows are cropped and scaled to the full target height, the
/// width is scaled by the same factor, and the result is shifted so that the
/// horizontal centre of mass sits in the middle column before the width is
/// padded or cropped. The procedure is repeated until it reaches a fixed point,
/// which makes it idempotent on its own outputs.
pub fn normalize_silhouette(raw: &SilhouetteFrame, cfg: &PreprocessConfig) -> Result<SilhouetteFrame> {
    let mut current = binarize(raw, cfg.threshold);
    for _ in 0..8 {
        let next = normalize_once(&current, cfg.target_height, cfg.target_width)?;
        if next == current {
            break;
        }
        current = next;
    }
    Ok(current)
}

fn binarize(raw: &SilhouetteFrame, threshold: u8) -> SilhouetteFrame {
    let pixels = raw
        .pixels()
        .iter()
        .map(|&p| if p >= threshold { 255 } else { 0 })
        .collect();
    SilhouetteFrame::new(raw.height(), raw.width(), pixels).expect("same shape")
}

fn normalize_once(bin: &SilhouetteFrame, out_h: usize, out_w: usize) -> Result<SilhouetteFrame> {
    let (src_h, src_w) = (bin.height(), bin.width());
    let row_has_fg = |r: usize| bin.pixels()[r * src_w..(r + 1) * src_w].iter().any(|&p| p > 0);
    let top = (0..src_h)
        .find(|&r| row_has_fg(r))
        .ok_or(GaitError::EmptySilhouette { frame: 0 })?;
    let bottom = (0..src_h).rev().find(|&r| row_has_fg(r)).unwrap_or(top);
    let crop_h = bottom - top + 1;

    // Endpoints map exactly onto the first and last foreground rows.
    let src_row = |i: usize| -> usize {
        if out_h == 1 || crop_h == 1 {
            top
        } else {
            top + ((i * (crop_h - 1)) as f64 / (out_h - 1) as f64).round() as usize
        }
    };
    let scale = if crop_h == out_h {
        1.0
    } else if crop_h > 1 && out_h > 1 {
        (out_h - 1) as f64 / (crop_h - 1) as f64
    } else {
        out_h as f64 / crop_h as f64
    };
    let scaled_w = ((src_w as f64 * scale).ceil() as usize).max(1);
    let src_col = |x: usize| -> usize {
        (((x as f64 + 0.5) / scale).floor() as usize).min(src_w - 1)
    };

    let mut scaled = vec![0u8; out_h * scaled_w];
    let mut count: i64 = 0;
    let mut col_sum: i64 = 0;
    for i in 0..out_h {
        let row = src_row(i) * src_w;
        for x in 0..scaled_w {
            if bin.pixels()[row + src_col(x)] > 0 {
                scaled[i * scaled_w + x] = 255;
                count += 1;
                col_sum += x as i64;
            }
        }
    }
    if count == 0 {
        return Err(GaitError::EmptySilhouette { frame: 0 });
    }
    // floor(W/2 - com + 1/2) with com = mean(col) + 1/2, in exact integers.
    let num = out_w as i64 * count - 2 * col_sum;
    let shift = num.div_euclid(2 * count);

    let mut out = SilhouetteFrame::zeros(out_h, out_w);
    for i in 0..out_h {
        for x in 0..out_w {
            let sx = x as i64 - shift;
            if sx >= 0 && (sx as usize) < scaled_w && scaled[i * scaled_w + sx as usize] > 0 {
                out.set(i, x, 255);
            }
        }
    }
    Ok(out)
}

/// Picks `count` frames: a uniform subset without replacement when the
/// sequence is long enough (kept in temporal order), otherwise cyclic
/// repetition of the whole sequence.
pub fn sample_frames(sample: &GaitSample, count: usize, seed: u64) -> Result<GaitSample> {
    sample.select(&sample_indices(sample.len(), count, seed)?)
}

pub fn sample_indices(len: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(GaitError::Empty("cannot sample from an empty sequence".into()));
    }
    if count == 0 {
        return Err(GaitError::Config("frame count must be >= 1".into()));
    }
    if len >= count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, len, count).into_vec();
        idx.sort_unstable();
        Ok(idx)
    } else {
        Ok((0..count).map(|i| i % len).collect())
    }
}

/// Keeps a fraction of the frames (at least one), used by the test-length sweep.
pub fn subsample_fraction(sample: &GaitSample, fraction: f64, seed: u64) -> Result<GaitSample> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(GaitError::Config(format!(
            "frame fraction {fraction} outside (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(sample.clone());
    }
    let count = ((sample.len() as f64 * fraction).round() as usize).clamp(1, sample.len());
    sample_frames(sample, count, seed)
}

/// First `cap` frames of a sequence.
pub fn limit_frames(sample: &GaitSample, cap: usize) -> Result<GaitSample> {
    if sample.len() <= cap {
        return Ok(sample.clone());
    }
    let idx: Vec<usize> = (0..cap).collect();
    sample.select(&idx)
}

pub fn read_smpl_file(path: &Path) -> Result<Vec<SmplVector>> {
    let text = fs::read_to_string(path).map_err(|e| GaitError::io(path, e))?;
    parse_smpl_text(&text, path)
}

pub fn parse_smpl_text(text: &str, origin: &Path) -> Result<Vec<SmplVector>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| GaitError::Parse {
                    path: origin.to_path_buf(),
                    msg: format!("line {}: bad number {tok:?}", i + 1),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != SMPL_DIM {
            return Err(GaitError::SmplArity {
                path: origin.to_path_buf(),
                line: i + 1,
                got: values.len(),
            });
        }
        out.push(SmplVector::from_slice(&values).map_err(|e| GaitError::Parse {
            path: origin.to_path_buf(),
            msg: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Writes one line per frame; values use the shortest exact decimal form.
pub fn write_smpl_file(path: &Path, smpls: &[SmplVector]) -> Result<()> {
    let mut text = String::with_capacity(smpls.len() * SMPL_DIM * 8);
    for v in smpls {
        let line: Vec<String> = v.as_slice().iter().map(|x| format!("{x}")).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| GaitError::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| GaitError::io(path, e))
}

pub fn read_silhouette(path: &Path) -> Result<SilhouetteFrame> {
    let img = image::open(path)
        .map_err(|source| GaitError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    SilhouetteFrame::new(h as usize, w as usize, img.into_raw())
}

pub fn write_silhouette(path: &Path, frame: &SilhouetteFrame) -> Result<()> {
    image::save_buffer(
        path,
        frame.pixels(),
        frame.width() as u32,
        frame.height() as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|source| GaitError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads one manifest entry: normalized frames plus aligned SMPL vectors.
pub fn load_sequence(
    manifest: &DatasetManifest,
    entry: &SequenceEntry,
    cfg: &PreprocessConfig,
) -> Result<GaitSample> {
    let smpl_path = manifest.resolve(&entry.smpl);
    let smpls = read_smpl_file(&smpl_path)?;
    let frame_paths = entry.ordered_frames();
    if smpls.len() != frame_paths.len() {
        return Err(GaitError::Data(format!(
            "sequence {}: {} frames but {} SMPL rows",
            entry.sequence_id,
            frame_paths.len(),
            smpls.len()
        )));
    }
    let frames = frame_paths
        .iter()
        .enumerate()
        .map(|(i, rel)| {
            let raw = read_silhouette(&manifest.resolve(rel))?;
            normalize_silhouette(&raw, cfg).map_err(|e| match e {
                GaitError::EmptySilhouette { .. } => GaitError::Data(format!(
                    "sequence {}: empty silhouette at frame {i}",
                    entry.sequence_id
                )),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GaitSample::new(
        entry.subject_id,
        entry.camera_id,
        entry.sequence_id.clone(),
        frames,
        smpls,
    )
}

/// Loads every sequence of a split in manifest order; sequences load in parallel.
pub fn load_split(
    manifest: &DatasetManifest,
    split: Split,
    cfg: &PreprocessConfig,
) -> Result<Vec<GaitSample>> {
    let entries: Vec<&SequenceEntry> = manifest.split(split).collect();
    entries
        .par_iter()
        .map(|e| load_sequence(manifest, e, cfg))
        .collect()
}
