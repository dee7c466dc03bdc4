//! Experiment config files.
//!
//! A config is a flat TOML document: every [`TrainConfig`] key, plus the
//! optional experiment keys `data`, `out`, `runs`, `metric` and
//! `fixed_split`.
//!
//! ```
//! let cfg = grace_cli::config::ExperimentConfig::parse(r#"
//!     p_m_1 = 0.3
//!     p_m_2 = 0.4
//!     p_r_1 = 0.2
//!     p_r_2 = 0.4
//!     learning_rate = 0.005
//!     weight_decay = 1e-5
//!     epochs = 200
//!     hidden_dim = 128
//!     activation = "relu"
//!     data = "data/cora"
//!     runs = 5
//! "#).unwrap();
//! assert_eq!(cfg.runs, 5);
//! assert_eq!(cfg.train.hidden_dim, 128);
//! ```

use std::path::{Path, PathBuf};

use grace_core::{Metric, TrainConfig};

use crate::failure::{CliResult, Failure};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub runs: usize,
    pub metric: Metric,
    /// Evaluate every run on one split: the dataset's `splits.json` when
    /// present, otherwise the split drawn with the base seed.
    pub fixed_split: bool,
}

impl ExperimentConfig {
    pub fn new(train: TrainConfig) -> Self {
        ExperimentConfig {
            train,
            data: None,
            out: None,
            runs: 1,
            metric: Metric::Accuracy,
            fixed_split: false,
        }
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let bad = |m: String| Failure::Config(m);
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        let path = |v: toml::Value, key: &str| match v {
            toml::Value::String(s) => Ok(PathBuf::from(s)),
            other => Err(bad(format!("{key} must be a string, got {other}"))),
        };
        let data = table.remove("data").map(|v| path(v, "data")).transpose()?;
        let out = table.remove("out").map(|v| path(v, "out")).transpose()?;
        let runs = match table.remove("runs") {
            None => 1,
            Some(toml::Value::Integer(n)) if n >= 1 => n as usize,
            Some(other) => return Err(bad(format!("runs must be a positive integer, got {other}"))),
        };
        let metric = match table.remove("metric") {
            None => Metric::Accuracy,
            Some(toml::Value::String(s)) => s.parse().map_err(|e: grace_core::Error| bad(e.to_string()))?,
            Some(other) => return Err(bad(format!("metric must be a string, got {other}"))),
        };
        let fixed_split = match table.remove("fixed_split") {
            None => false,
            Some(toml::Value::Boolean(b)) => b,
            Some(other) => return Err(bad(format!("fixed_split must be a boolean, got {other}"))),
        };
        let train: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
        train.validate().map_err(|e| bad(e.to_string()))?;
        Ok(ExperimentConfig {
            train,
            data,
            out,
            runs,
            metric,
            fixed_split,
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Failure::Config(m) => Failure::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The flat TOML text [`parse`](Self::parse) accepts.
    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(&self.train).expect("train config serialises");
        if let Some(d) = &self.data {
            table.insert("data".into(), d.display().to_string().into());
        }
        if let Some(o) = &self.out {
            table.insert("out".into(), o.display().to_string().into());
        }
        table.insert("runs".into(), (self.runs as i64).into());
        let metric = serde_json::to_value(self.metric).expect("metric serialises");
        table.insert("metric".into(), metric.as_str().unwrap_or_default().into());
        table.insert("fixed_split".into(), self.fixed_split.into());
        toml::to_string(&table).expect("flat table serialises")
    }

    pub fn data_dir(&self) -> CliResult<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Failure::Config("no dataset: set `data` in the config or pass --data".into()))
    }

    /// Config digest carried by every artifact and report.
    pub fn digest(&self) -> String {
        self.train.digest()
    }
}
