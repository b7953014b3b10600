//! Run configuration: one TOML file with a section per component, then
//! `SMPLGAIT_<SECTION>_<KEY>` environment overrides, then command-line flags.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use smplgait::eval::EvalConfig;
use smplgait::losses::LossConfig;
use smplgait::preprocess::PreprocessConfig;
use smplgait::synth::SynthConfig;
use smplgait::train::TrainConfig;
use smplgait::ModelConfig;

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "SMPLGAIT_";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub preprocess: PreprocessConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            preprocess: PreprocessConfig::with_size(model.input_height, model.input_width),
            synth: SynthConfig {
                input_height: model.input_height,
                input_width: model.input_width,
                ..SynthConfig::default()
            },
            model,
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

const SECTIONS: [&str; 6] = ["model", "train", "loss", "preprocess", "synth", "eval"];

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Applies `SMPLGAIT_<SECTION>_<KEY>=value` pairs. Values are parsed as
    /// TOML (numbers, booleans, arrays) and fall back to plain strings.
    pub fn apply_env<I>(self, vars: I) -> CliResult<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = toml::from_str(&self.to_toml()).expect("run config round-trips");
        let mut touched = false;
        for (name, raw) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let rest = rest.to_ascii_lowercase();
            let (section, key) = rest
                .split_once('_')
                .filter(|(s, k)| SECTIONS.contains(s) && !k.is_empty())
                .ok_or_else(|| CliError::Config(format!("{name}: expected {ENV_PREFIX}<SECTION>_<KEY>")))?;
            let value = parse_value(&raw);
            table
                .entry(section)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .expect("sections are tables")
                .insert(key.to_string(), value);
            touched = true;
        }
        if !touched {
            return Ok(self);
        }
        let text = toml::to_string(&table).expect("table serializes");
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("environment override: {e}")))
    }

    /// Sets the model, preprocessing and synthetic input size together.
    pub fn set_input_size(&mut self, height: usize, width: usize) {
        self.model = self.model.clone().with_input(height, width);
        self.preprocess.target_height = height;
        self.preprocess.target_width = width;
        self.synth.input_height = height;
        self.synth.input_width = width;
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.synth.seed = seed;
        self.eval.seed = seed;
    }

    /// Checks everything a model-facing command relies on.
    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        let max_scale = self.model.hpp_scales.iter().copied().max().unwrap_or(1);
        self.preprocess.validate(max_scale)?;
        let model = (self.model.input_height, self.model.input_width);
        let pre = (self.preprocess.target_height, self.preprocess.target_width);
        if model != pre {
            return Err(CliError::Config(format!(
                "model input {}x{} differs from preprocess target {}x{}",
                model.0, model.1, pre.0, pre.1
            )));
        }
        self.validate_eval()
    }

    pub fn validate_eval(&self) -> CliResult<()> {
        if !(self.eval.test_frac > 0.0 && self.eval.test_frac <= 1.0) {
            return Err(CliError::Config(format!("test fraction {} outside (0, 1]", self.eval.test_frac)));
        }
        if self.eval.frame_cap == 0 {
            return Err(CliError::Config("eval.frame_cap must be >= 1".into()));
        }
        Ok(())
    }

    pub fn write_echo(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// `WxH`, e.g. `88x128`. Returns `(height, width)`.
pub fn parse_input_size(text: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Config(format!("input size {text:?}: expected WxH, e.g. 88x128"));
    let (w, h) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    Ok((h, w))
}

/// Frame counts for a sweep: `10..50` (step 10), `10..50:5`, or `10,20,30`.
/// Ranges include both ends.
pub fn parse_frames(text: &str) -> CliResult<Vec<usize>> {
    let bad = |why: &str| CliError::Config(format!("frames {text:?}: {why}"));
    let values = if let Some((lo, rest)) = text.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, step.trim().parse::<usize>().map_err(|_| bad("bad step"))?),
            None => (rest, 10),
        };
        let lo: usize = lo.trim().parse().map_err(|_| bad("bad start"))?;
        let hi: usize = hi.trim().parse().map_err(|_| bad("bad end"))?;
        if step == 0 || lo > hi {
            return Err(bad("empty range"));
        }
        (lo..=hi).step_by(step).collect()
    } else {
        parse_list(text)?
    };
    if values.contains(&0) {
        return Err(bad("frame counts must be positive"));
    }
    Ok(values)
}

pub fn parse_list<T: std::str::FromStr>(text: &str) -> CliResult<Vec<T>> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<T>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::Config(format!("{text:?}: expected a comma-separated list")))?;
    if values.is_empty() {
        return Err(CliError::Config("empty list".into()));
    }
    Ok(values)
}
