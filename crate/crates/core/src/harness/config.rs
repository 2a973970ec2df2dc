//! JSON run configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind, Direction, DEFAULT_EPSILON, DEFAULT_F_IMAGE, DEFAULT_F_VIDEO};
use crate::error::{Error, Result};
use crate::harness::align::{AlignParams, DEFAULT_MAX_PROBES, DEFAULT_N_STOP, DEFAULT_STEP};
use crate::metrics::MetricSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub name: String,
    pub epsilon: f64,
    /// Defaults differ between images and videos when unset.
    pub f: Option<f64>,
    pub iterations: usize,
    pub direction: Direction,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            name: AttackKind::Ioi.name().into(),
            epsilon: DEFAULT_EPSILON,
            f: None,
            iterations: 1,
            direction: Direction::Increase,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSection {
    pub rg_target: Option<f64>,
    pub d: f64,
    pub n_stop: usize,
}

impl Default for AlignSection {
    fn default() -> Self {
        Self {
            rg_target: None,
            d: DEFAULT_STEP,
            n_stop: DEFAULT_N_STOP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub input: Option<String>,
    pub output: Option<String>,
    pub frame_pattern: String,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            frame_pattern: "%03d.png".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub metric: MetricSpec,
    pub attack: AttackSection,
    pub align: AlignSection,
    pub io: IoSection,
    /// Master seed; per-item seeds derive from it.
    pub seed: u64,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }

    /// Attack parameters for an image (`video = false`) or a video.
    pub fn attack_config(&self, video: bool) -> Result<AttackConfig> {
        let kind: AttackKind = self.attack.name.parse()?;
        let default_f = if video { DEFAULT_F_VIDEO } else { DEFAULT_F_IMAGE };
        let cfg = AttackConfig {
            kind,
            epsilon: self.attack.epsilon,
            f: self.attack.f.unwrap_or(default_f),
            iterations: self.attack.iterations,
            direction: self.attack.direction,
            clamp_steps: false,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn align_params(&self) -> Result<AlignParams> {
        let rg_target = self
            .align
            .rg_target
            .ok_or_else(|| Error::Config("align.rg_target is required".into()))?;
        Ok(AlignParams {
            rg_target,
            d: self.align.d,
            n_stop: self.align.n_stop,
            max_probes: DEFAULT_MAX_PROBES,
        })
    }
}
