//! On-disk dataset manifest and its validation.
//!
//! A dataset root holds one `manifest.json`:
//!
//! ```json
//! {
//!   "format": "smplgait-manifest/1",
//!   "root": ".",
//!   "input_size": { "height": 128, "width": 88 },
//!   "sequences": [
//!     {
//!       "subject_id": 3,
//!       "camera_id": 0,
//!       "sequence_id": "s0003_q00",
//!       "split": "train",
//!       "frames": ["sil/s0003_q00/0000.png", "sil/s0003_q00/0001.png"],
//!       "smpl": "smpl/s0003_q00.txt"
//!     }
//!   ]
//! }
//! ```
//!
//! `root` is resolved relative to the directory containing the manifest and
//! every frame/SMPL path is relative to `root`. Frames are 8-bit grayscale PNG
//! files and are consumed in lexicographic filename order. The SMPL file has
//! one line per frame with 85 whitespace-separated decimals in the order
//! `pose(72) | shape(10) | camera(3)`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::types::SMPL_DIM;

pub const MANIFEST_FORMAT: &str = "smplgait-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn is_test(self) -> bool {
        matches!(self, Split::Query | Split::Gallery)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSize {
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub subject_id: u32,
    pub camera_id: u32,
    pub sequence_id: String,
    pub split: Split,
    pub frames: Vec<String>,
    pub smpl: String,
}

impl SequenceEntry {
    /// Frame paths in consumption order (lexicographic by file name).
    pub fn ordered_frames(&self) -> Vec<&str> {
        let mut frames: Vec<&str> = self.frames.iter().map(String::as_str).collect();
        frames.sort_by(|a, b| file_name(a).cmp(file_name(b)).then(a.cmp(b)));
        frames
    }
}

fn file_name(path: &str) -> &str {
    path.rsplit(['/', '\\']).next().unwrap_or(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    #[serde(default = "default_root")]
    pub root: String,
    pub input_size: InputSize,
    pub sequences: Vec<SequenceEntry>,
    /// Directory of the manifest file; set by [`DatasetManifest::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_root() -> String {
    ".".to_string()
}

impl DatasetManifest {
    pub fn new(input_size: InputSize) -> Self {
        Self {
            format: MANIFEST_FORMAT.to_string(),
            root: default_root(),
            input_size,
            sequences: Vec::new(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let manifest: DatasetManifest =
            serde_json::from_str(text).map_err(|e| GaitError::Parse {
                path: origin.to_path_buf(),
                msg: format!("line {} column {}: {e}", e.line(), e.column()),
            })?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(GaitError::Parse {
                path: origin.to_path_buf(),
                msg: format!(
                    "unsupported format {:?}, expected {MANIFEST_FORMAT:?}",
                    manifest.format
                ),
            });
        }
        Ok(manifest)
    }

    /// Reads a manifest file, or `<dir>/manifest.json` when given a directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path = path.join(MANIFEST_FILE);
        }
        let text = fs::read_to_string(&path).map_err(|e| GaitError::io(&path, e))?;
        let mut manifest = Self::from_json_str(&text, &path)?;
        manifest.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(manifest)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string() + "\n").map_err(|e| GaitError::io(path, e))
    }

    pub fn root_dir(&self) -> PathBuf {
        self.base_dir.join(&self.root)
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root_dir().join(relative)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SequenceEntry> {
        self.sequences.iter().filter(move |s| s.split == split)
    }

    pub fn subjects(&self, split: Split) -> BTreeSet<u32> {
        self.split(split).map(|s| s.subject_id).collect()
    }

    /// Copy keeping only the train entries of the given subjects.
    pub fn restrict_train_subjects(&self, keep: &BTreeSet<u32>) -> DatasetManifest {
        let mut out = self.clone();
        out.sequences
            .retain(|s| s.split != Split::Train || keep.contains(&s.subject_id));
        out
    }
}

/// Bounds applied by [`validate_manifest`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationPolicy {
    pub min_frames: usize,
    pub max_frames: usize,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self {
            min_frames: 25,
            max_frames: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub sequence_id: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.sequence_id {
            Some(id) => write!(f, "{id}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, sequence_id: Option<&str>, message: String) {
        self.violations.push(Violation {
            sequence_id: sequence_id.map(str::to_string),
            message,
        });
    }
}

pub fn validate_manifest(manifest: &DatasetManifest) -> ValidationReport {
    validate_manifest_with(manifest, ValidationPolicy::default())
}

pub fn validate_manifest_with(
    manifest: &DatasetManifest,
    policy: ValidationPolicy,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let size = manifest.input_size;
    if size.height == 0 || size.width == 0 || !size.height.is_multiple_of(4) || !size.width.is_multiple_of(4) {
        report.push(
            None,
            format!(
                "input size {}x{} (HxW) must be positive and divisible by 4",
                size.height, size.width
            ),
        );
    }

    let mut seen = HashSet::new();
    for entry in &manifest.sequences {
        let id = entry.sequence_id.as_str();
        if !seen.insert(id) {
            report.push(Some(id), "duplicate sequence id".into());
        }
        let n = entry.frames.len();
        if n < policy.min_frames || n > policy.max_frames {
            report.push(
                Some(id),
                format!(
                    "{n} frames outside [{}, {}]",
                    policy.min_frames, policy.max_frames
                ),
            );
        }
        let missing = entry
            .frames
            .iter()
            .filter(|f| !manifest.resolve(f).is_file())
            .count();
        if missing > 0 {
            report.push(Some(id), format!("{missing} frame file(s) missing"));
        }
        let smpl_path = manifest.resolve(&entry.smpl);
        match fs::read_to_string(&smpl_path) {
            Err(_) => report.push(
                Some(id),
                format!("SMPL file {} missing or unreadable", smpl_path.display()),
            ),
            Ok(text) => {
                let mut rows = 0;
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    rows += 1;
                    let got = line.split_whitespace().count();
                    if got != SMPL_DIM {
                        report.push(
                            Some(id),
                            format!("line {}: expected {SMPL_DIM}, got {got}", i + 1),
                        );
                    }
                }
                if rows != n {
                    report.push(
                        Some(id),
                        format!("{rows} SMPL rows but {n} frames"),
                    );
                }
            }
        }
    }

    let train = manifest.subjects(Split::Train);
    let mut test: BTreeSet<u32> = manifest.subjects(Split::Query);
    test.extend(manifest.subjects(Split::Gallery));
    for subject in train.intersection(&test) {
        report.push(None, format!("split overlap: subject {subject}"));
    }
    report
}

/// Number of sequences per subject for one split.
pub fn sequences_per_subject(manifest: &DatasetManifest, split: Split) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for entry in manifest.split(split) {
        *counts.entry(entry.subject_id).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(subject: u32, id: &str, split: Split) -> SequenceEntry {
        SequenceEntry {
            subject_id: subject,
            camera_id: 0,
            sequence_id: id.into(),
            split,
            frames: vec!["b/0001.png".into(), "a/0000.png".into()],
            smpl: format!("{id}.txt"),
        }
    }

    #[test]
    fn frames_ordered_by_file_name() {
        let e = entry(1, "x", Split::Train);
        assert_eq!(e.ordered_frames(), vec!["a/0000.png", "b/0001.png"]);
    }

    #[test]
    fn parse_error_has_location() {
        let err = DatasetManifest::from_json_str("{\n  \"format\": ,\n}", Path::new("m.json"))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = r#"{"format":"smplgait-manifest/1","input_size":{"height":8,"width":8},"sequences":[],"extra":1}"#;
        assert!(DatasetManifest::from_json_str(text, Path::new("m")).is_err());
    }

    #[test]
    fn split_overlap_reported() {
        let mut m = DatasetManifest::new(InputSize {
            height: 64,
            width: 44,
        });
        m.sequences.push(entry(7, "a", Split::Train));
        m.sequences.push(entry(7, "b", Split::Gallery));
        let report = validate_manifest(&m);
        assert!(report
            .violations
            .iter()
            .any(|v| v.sequence_id.is_none() && v.message == "split overlap: subject 7"));
    }

    #[test]
    fn serialize_round_trip() {
        let mut m = DatasetManifest::new(InputSize {
            height: 64,
            width: 44,
        });
        m.sequences.push(entry(1, "a", Split::Query));
        let text = m.to_json_string();
        let back = DatasetManifest::from_json_str(&text, Path::new("m")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json_string(), text);
    }
}
