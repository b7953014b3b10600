//! Domain types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};

pub const POSE_DIM: usize = 72;
pub const SHAPE_DIM: usize = 10;
pub const CAMERA_DIM: usize = 3;
/// Length of one per-frame SMPL vector.
pub const SMPL_DIM: usize = POSE_DIM + SHAPE_DIM + CAMERA_DIM;

/// One grayscale silhouette frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SilhouetteFrame {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl SilhouetteFrame {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(GaitError::Shape(format!(
                "silhouette must be non-empty, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(GaitError::Shape(format!(
                "silhouette {height}x{width} needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn foreground_count(&self, threshold: u8) -> usize {
        self.pixels.iter().filter(|&&p| p >= threshold).count()
    }

    /// Pixel values scaled to `[0, 1]` as network input.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }
}

/// Per-frame SMPL parameters in the fixed order `pose(72) | shape(10) | camera(3)`.
///
/// Pose holds 24 joints of axis-angle rotation, shape holds the 10 body
/// coefficients, camera holds `(scale, tx, ty)`. Files exported by other
/// tools with a different ordering must be permuted before loading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmplVector(pub [f64; SMPL_DIM]);

impl SmplVector {
    pub fn zeros() -> Self {
        SmplVector([0.0; SMPL_DIM])
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != SMPL_DIM {
            return Err(GaitError::Shape(format!(
                "SMPL vector needs {SMPL_DIM} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GaitError::Data(format!(
                "SMPL entry {i} is not finite"
            )));
        }
        let mut out = [0.0; SMPL_DIM];
        out.copy_from_slice(values);
        Ok(SmplVector(out))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn pose(&self) -> &[f64] {
        &self.0[..POSE_DIM]
    }

    pub fn shape(&self) -> &[f64] {
        &self.0[POSE_DIM..POSE_DIM + SHAPE_DIM]
    }

    pub fn camera(&self) -> &[f64] {
        &self.0[POSE_DIM + SHAPE_DIM..]
    }

    pub fn pose_mut(&mut self) -> &mut [f64] {
        &mut self.0[..POSE_DIM]
    }

    pub fn shape_mut(&mut self) -> &mut [f64] {
        &mut self.0[POSE_DIM..POSE_DIM + SHAPE_DIM]
    }

    pub fn camera_mut(&mut self) -> &mut [f64] {
        &mut self.0[POSE_DIM + SHAPE_DIM..]
    }

    /// Axis-angle rotation of SMPL joint `joint` (0 = pelvis / global orientation).
    pub fn joint(&self, joint: usize) -> [f64; 3] {
        let p = &self.0[joint * 3..joint * 3 + 3];
        [p[0], p[1], p[2]]
    }

    pub fn set_joint(&mut self, joint: usize, value: [f64; 3]) {
        self.0[joint * 3..joint * 3 + 3].copy_from_slice(&value);
    }
}

/// A silhouette sequence with its index-aligned SMPL vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitSample {
    pub subject_id: u32,
    pub camera_id: u32,
    pub sequence_id: String,
    frames: Vec<SilhouetteFrame>,
    smpls: Vec<SmplVector>,
}

impl GaitSample {
    pub fn new(
        subject_id: u32,
        camera_id: u32,
        sequence_id: impl Into<String>,
        frames: Vec<SilhouetteFrame>,
        smpls: Vec<SmplVector>,
    ) -> Result<Self> {
        let sequence_id = sequence_id.into();
        if frames.is_empty() {
            return Err(GaitError::Empty(format!(
                "sequence {sequence_id} has no frames"
            )));
        }
        if frames.len() != smpls.len() {
            return Err(GaitError::Data(format!(
                "sequence {sequence_id}: {} frames but {} SMPL vectors",
                frames.len(),
                smpls.len()
            )));
        }
        Ok(Self {
            subject_id,
            camera_id,
            sequence_id,
            frames,
            smpls,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[SilhouetteFrame] {
        &self.frames
    }

    pub fn smpls(&self) -> &[SmplVector] {
        &self.smpls
    }

    /// Sub-sequence made of the given frame indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<GaitSample> {
        let frames = indices.iter().map(|&i| self.frames[i].clone()).collect();
        let smpls = indices.iter().map(|&i| self.smpls[i]).collect();
        GaitSample::new(
            self.subject_id,
            self.camera_id,
            self.sequence_id.clone(),
            frames,
            smpls,
        )
    }
}

/// Sequence descriptor: `parts` strip vectors of `dim` entries each, part-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartEmbedding {
    pub parts: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl PartEmbedding {
    pub fn new(parts: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != parts * dim {
            return Err(GaitError::Shape(format!(
                "embedding {parts}x{dim} needs {} values, got {}",
                parts * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GaitError::Data("embedding has non-finite entries".into()));
        }
        Ok(Self { parts, dim, values })
    }

    pub fn part(&self, p: usize) -> &[f64] {
        &self.values[p * self.dim..(p + 1) * self.dim]
    }

    pub fn scaled(&self, factor: f64) -> PartEmbedding {
        PartEmbedding {
            parts: self.parts,
            dim: self.dim,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smpl_layout() {
        let mut v = SmplVector::zeros();
        v.shape_mut()[0] = 1.0;
        v.camera_mut()[2] = 2.0;
        assert_eq!(v.0[72], 1.0);
        assert_eq!(v.0[84], 2.0);
        assert_eq!(SMPL_DIM, 85);
    }

    #[test]
    fn smpl_rejects_non_finite() {
        let mut vals = vec![0.0; 85];
        vals[3] = f64::NAN;
        assert!(SmplVector::from_slice(&vals).is_err());
        assert!(SmplVector::from_slice(&vals[..84]).is_err());
    }

    #[test]
    fn sample_requires_alignment() {
        let f = SilhouetteFrame::zeros(4, 4);
        let err = GaitSample::new(1, 0, "s", vec![f.clone(), f], vec![SmplVector::zeros()]);
        assert!(err.is_err());
        assert!(GaitSample::new(1, 0, "s", vec![], vec![]).is_err());
    }
}
