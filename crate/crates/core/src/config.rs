//! Run configuration, read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::scoring::{Aggregation, ScoreMode};
use crate::series::{LabelFormat, WindowSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub label_format: LabelFormat,
    #[serde(default)]
    pub header: bool,
    #[serde(default)]
    pub forward_fill: bool,
    /// Rescale every series with min-max statistics of the training part.
    #[serde(default)]
    pub min_max_scale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventsConfig {
    pub motifs_per_series: usize,
    pub min_cluster_size: usize,
    /// Expected catalog size; only reported.
    #[serde(default)]
    pub event_target: Option<usize>,
    /// Band for matching and forecast distances; defaults to ceil(length / 10).
    #[serde(default)]
    pub match_band: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotConfig {
    pub q: f64,
    /// Keep adapting thresholds while streaming the test part.
    #[serde(default = "yes")]
    pub adapt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    #[default]
    BestF1,
    /// Streaming threshold fitted on training-window scores.
    Spot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default = "yes")]
    pub use_forecast: bool,
    #[serde(default = "yes")]
    pub use_residual: bool,
    /// Baseline that scores change surprisal only.
    #[serde(default)]
    pub surprisal_only: bool,
    #[serde(default)]
    pub threshold: ThresholdRule,
    #[serde(default = "default_score_q")]
    pub spot_q: f64,
}

fn yes() -> bool {
    true
}

fn default_score_q() -> f64 {
    1e-3
}

impl ScoreConfig {
    pub fn mode(&self) -> ScoreMode {
        if self.surprisal_only {
            ScoreMode::SurprisalOnly
        } else {
            ScoreMode::Full {
                use_forecast: self.use_forecast,
                use_residual: self.use_residual,
            }
        }
    }
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::Sum,
            use_forecast: true,
            use_residual: true,
            surprisal_only: false,
            threshold: ThresholdRule::BestF1,
            spot_q: default_score_q(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    pub window: WindowSpec,
    pub events: EventsConfig,
    pub spot: SpotConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub train: TrainingConfig,
    #[serde(default)]
    pub score: ScoreConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.data.resolve(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        WindowSpec::new(self.window.length, self.window.stride)?;
        if self.window.length < 2 {
            return bad("window length must be at least 2".into());
        }
        if self.events.motifs_per_series == 0 {
            return bad("motifs_per_series must be positive".into());
        }
        if self.events.min_cluster_size < 2 {
            return bad("min_cluster_size must be at least 2".into());
        }
        if !(self.spot.q > 0.0 && self.spot.q < 1.0)
            || !(self.score.spot_q > 0.0 && self.score.spot_q < 1.0)
        {
            return bad("risk levels must lie in (0, 1)".into());
        }
        if self.train.epochs == 0 || !(self.train.lr > 0.0) {
            return bad("epochs and lr must be positive".into());
        }
        self.model.validate()
    }

    /// Canonical hash of the whole configuration.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    /// Hash of the settings a stage depends on, including its upstream stages.
    pub fn stage_hash(&self, stage: &str) -> String {
        let d = &self.data;
        let v = match stage {
            "events" => serde_json::json!([
                d.min_max_scale,
                d.header,
                d.forward_fill,
                self.window,
                self.events
            ]),
            "graph" => serde_json::json!([self.stage_hash("events"), self.spot]),
            "train" => {
                serde_json::json!([self.stage_hash("graph"), self.seed, self.model, self.train])
            }
            "score" => serde_json::json!([self.stage_hash("train"), self.score]),
            "eval" => serde_json::json!([self.stage_hash("score"), d.label_format]),
            "plot" => serde_json::json!([self.stage_hash("eval")]),
            other => serde_json::json!(other),
        };
        sha256_hex(v.to_string().as_bytes())
    }

    /// Synthetic-data defaults: short windows, small dimensions and min-max
    /// scaling so patterns are shared across series of different ranges.
    pub fn synthetic(train: PathBuf, test: PathBuf, labels: PathBuf) -> Self {
        Self {
            seed: 0,
            data: DataConfig {
                train,
                test,
                labels: Some(labels),
                label_format: LabelFormat::Points,
                header: true,
                forward_fill: false,
                min_max_scale: true,
            },
            window: WindowSpec {
                length: 20,
                stride: 5,
            },
            events: EventsConfig {
                motifs_per_series: 3,
                min_cluster_size: 3,
                event_target: None,
                match_band: None,
            },
            spot: SpotConfig {
                q: 1e-3,
                adapt: true,
            },
            model: ModelConfig {
                d_mem: 16,
                d_emb: 16,
                d_time: 16,
                ..ModelConfig::default()
            },
            train: TrainingConfig {
                epochs: 10,
                lr: 1e-3,
            },
            score: ScoreConfig::default(),
        }
    }
}

impl DataConfig {
    fn resolve(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.train);
        fix(&mut self.test);
        if let Some(l) = self.labels.as_mut() {
            fix(l);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMD: &str = include_str!("../../../configs/smd.toml");

    #[test]
    fn smd_config_mirrors_published_settings() {
        let cfg = PipelineConfig::from_toml(SMD).unwrap();
        assert_eq!(cfg.window.length, 50);
        assert_eq!(cfg.window.stride, 10);
        assert_eq!(cfg.events.event_target, Some(64));
        assert_eq!(cfg.events.motifs_per_series, 3);
        assert_eq!(cfg.events.min_cluster_size, 3);
        assert_eq!(
            (
                cfg.model.d_mem,
                cfg.model.d_emb,
                cfg.model.d_time,
                cfg.model.heads
            ),
            (64, 64, 64, 2)
        );
        assert_eq!((cfg.train.epochs, cfg.train.lr), (10, 1e-4));
        assert_eq!(cfg.score.aggregation, Aggregation::Sum);
    }

    #[test]
    fn round_trip_and_hash_stability() {
        let cfg = PipelineConfig::synthetic("a.csv".into(), "b.csv".into(), "c.csv".into());
        let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.score.aggregation = Aggregation::Max;
        assert_ne!(other.hash(), cfg.hash());
        assert_eq!(other.stage_hash("train"), cfg.stage_hash("train"));
        assert_ne!(other.stage_hash("score"), cfg.stage_hash("score"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = PipelineConfig::synthetic("a".into(), "b".into(), "c".into());
        cfg.events.min_cluster_size = 1;
        assert!(cfg.validate().is_err());
        let text = PipelineConfig::synthetic("a".into(), "b".into(), "c".into())
            .to_toml()
            .unwrap()
            .replace("seed = 0", "seed = 0\nbogus = 1");
        assert!(PipelineConfig::from_toml(&text).is_err());
    }
}
