use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::changepoint::{DEFAULT_BIN_MONTHS, DEFAULT_N_BREAKPOINTS};
use crate::diagnostics::{DEFAULT_MARKOV_BINS, DEFAULT_MIN_OCCUPANCY};
use crate::error::{Error, Result};
use crate::ingest::{PriceColumns, DEFAULT_CLIP_K};
use crate::km::{Orders, DEFAULT_MIN_COUNT};
use crate::langevin::LangevinModel;
use crate::rolling::RollingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    #[default]
    Prices,
    /// An already computed `date,return` file.
    Returns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub kind: InputKind,
    #[serde(default = "default_date_col")]
    pub date_col: String,
    #[serde(default = "default_price_col")]
    pub price_col: String,
    #[serde(default)]
    pub date_format: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_date_col() -> String {
    "date".into()
}
fn default_price_col() -> String {
    "price".into()
}
fn default_delimiter() -> char {
    ','
}

impl InputConfig {
    pub fn columns(&self) -> PriceColumns {
        PriceColumns {
            date_col: self.date_col.clone(),
            price_col: self.price_col.clone(),
            date_format: self.date_format.clone(),
            delimiter: self.delimiter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub drift: [f64; 3],
    pub diffusion: [f64; 3],
    pub length: usize,
}

/// Synthetic input: back-to-back Langevin segments sharing `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub dt: f64,
    #[serde(default)]
    pub x0: f64,
    pub segments: Vec<SegmentSpec>,
}

impl SimulationConfig {
    pub fn models(&self) -> Vec<(LangevinModel, usize)> {
        self.segments
            .iter()
            .map(|s| {
                (
                    LangevinModel {
                        drift: s.drift,
                        diffusion: s.diffusion,
                        dt: self.dt,
                        x0: self.x0,
                        domain: None,
                    },
                    s.length,
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    pub lags: Vec<usize>,
    pub bins: usize,
    pub min_occupancy: usize,
    /// Defaults to a log-spaced grid up to half the series.
    pub window_sizes: Option<Vec<usize>>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            lags: (1..=10).collect(),
            bins: DEFAULT_MARKOV_BINS,
            min_occupancy: DEFAULT_MIN_OCCUPANCY,
            window_sizes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KmStageConfig {
    pub bins: usize,
    pub min_count: usize,
    /// Comma-separated subset of `1,2,4`.
    pub orders: String,
    pub diffusion_constant_term: bool,
}

impl Default for KmStageConfig {
    fn default() -> Self {
        Self {
            bins: 50,
            min_count: DEFAULT_MIN_COUNT,
            orders: Orders::ALL.to_string(),
            diffusion_constant_term: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RollingStageConfig {
    #[serde(flatten)]
    pub rolling: RollingConfig,
    /// Alternative window lengths for the sensitivity report; none skips it.
    pub alt_windows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BreaksConfig {
    pub n_bkps: usize,
    pub min_segment: usize,
    pub jump: usize,
    pub bin_months: u32,
}

impl Default for BreaksConfig {
    fn default() -> Self {
        Self {
            n_bkps: DEFAULT_N_BREAKPOINTS,
            min_segment: 2,
            jump: 1,
            bin_months: DEFAULT_BIN_MONTHS,
        }
    }
}

/// Declarative description of a full run. Every CLI flag overrides one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Sampling interval of the input; 1 observation step when unset.
    pub step: Option<f64>,
    pub clip_k: f64,
    pub input: Option<InputConfig>,
    pub simulate: Option<SimulationConfig>,
    pub diagnostics: DiagnosticsConfig,
    pub km: KmStageConfig,
    pub rolling: RollingStageConfig,
    pub breaks: BreaksConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            seed: 42,
            step: None,
            clip_k: DEFAULT_CLIP_K,
            input: None,
            simulate: None,
            diagnostics: DiagnosticsConfig::default(),
            km: KmStageConfig::default(),
            rolling: RollingStageConfig::default(),
            breaks: BreaksConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.input, &self.simulate) {
            (None, None) => {
                return Err(Error::Config(
                    "either [input] or [simulate] is required".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "[input] and [simulate] are mutually exclusive".into(),
                ))
            }
            (Some(input), None) if !input.path.exists() => {
                return Err(Error::Config(format!(
                    "input file {} does not exist",
                    input.path.display()
                )))
            }
            _ => {}
        }
        if !(self.clip_k.is_finite() && self.clip_k > 0.0) {
            return Err(Error::Config(format!(
                "clip_k must be positive, got {}",
                self.clip_k
            )));
        }
        if let Some(s) = self.step {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!("step must be positive, got {s}")));
            }
        }
        self.km
            .orders
            .parse::<Orders>()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.rolling
            .rolling
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig {
            simulate: Some(SimulationConfig {
                dt: 0.1,
                x0: 0.0,
                segments: vec![SegmentSpec {
                    drift: [0.0, -1.0, 0.0],
                    diffusion: [0.01, 0.0, 0.5],
                    length: 100,
                }],
            }),
            ..PipelineConfig::default()
        };
        let text = cfg.to_toml().unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg: PipelineConfig = toml::from_str(
            r#"
            output_dir = "runs/a"
            [rolling]
            window_length = 1000
            alt_windows = [700, 1300]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.rolling.rolling.window_length, 1000);
        assert_eq!(cfg.rolling.rolling.step, 10);
        assert_eq!(cfg.rolling.alt_windows, vec![700, 1300]);
        assert_eq!(cfg.breaks.n_bkps, 30);
        assert_eq!(cfg.diagnostics.lags, (1..=10).collect::<Vec<_>>());
        assert!(cfg.validate().is_err(), "no input given");
    }
}
