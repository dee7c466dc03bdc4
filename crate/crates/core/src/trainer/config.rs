use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{Activation, Arch};
use crate::error::{Error, Result};
use crate::objective::{LossConfig, LossMode, DEFAULT_TAU};
use crate::views::CorruptionParams;
use crate::Real;

/// Hyperparameters of one training run.
///
/// Field names follow the hyperparameter table of the method, so a config
/// file can list them verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub p_m_1: Real,
    pub p_m_2: Real,
    pub p_r_1: Real,
    pub p_r_2: Real,
    pub learning_rate: Real,
    pub weight_decay: Real,
    pub epochs: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    #[serde(default = "default_tau")]
    pub tau: Real,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_arch")]
    pub arch: Arch,
    #[serde(default = "default_objective")]
    pub objective: LossMode,
    /// InfoNCE only; see [`LossConfig::nce_temperature`].
    #[serde(default = "default_true")]
    pub nce_temperature: bool,
}

fn default_tau() -> Real {
    DEFAULT_TAU
}

fn default_arch() -> Arch {
    Arch::Gcn2
}

fn default_objective() -> LossMode {
    LossMode::Grace
}

fn default_true() -> bool {
    true
}

/// Names accepted by [`TrainConfig::preset`].
pub const PRESETS: [&str; 4] = ["cora", "citeseer", "pubmed", "dblp"];

impl TrainConfig {
    /// Dataset presets from the published hyperparameter table.
    /// The Cora learning rate is the table's 0.005.
    pub fn preset(name: &str) -> Option<TrainConfig> {
        let row = |pm1, pm2, pr1, pr2, lr, epochs, hidden, act| TrainConfig {
            p_m_1: pm1,
            p_m_2: pm2,
            p_r_1: pr1,
            p_r_2: pr2,
            learning_rate: lr,
            weight_decay: 1e-5,
            epochs,
            hidden_dim: hidden,
            activation: act,
            tau: DEFAULT_TAU,
            seed: 0,
            arch: Arch::Gcn2,
            objective: LossMode::Grace,
            nce_temperature: true,
        };
        Some(match name.to_ascii_lowercase().as_str() {
            "cora" => row(0.3, 0.4, 0.2, 0.4, 0.005, 200, 128, Activation::Relu),
            "citeseer" => row(0.3, 0.2, 0.2, 0.0, 0.001, 200, 256, Activation::Prelu),
            "pubmed" => row(0.0, 0.2, 0.4, 0.1, 0.001, 1500, 256, Activation::Relu),
            "dblp" => row(0.1, 0.0, 0.1, 0.4, 0.001, 1000, 256, Activation::Relu),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (k, p) in [
            ("p_m_1", self.p_m_1),
            ("p_m_2", self.p_m_2),
            ("p_r_1", self.p_r_1),
            ("p_r_2", self.p_r_2),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{k} = {p} outside [0, 1]"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1".into());
        }
        self.loss_config().validate()
    }

    pub fn views(&self) -> (CorruptionParams, CorruptionParams) {
        (
            CorruptionParams {
                p_r: self.p_r_1,
                p_m: self.p_m_1,
            },
            CorruptionParams {
                p_r: self.p_r_2,
                p_m: self.p_m_2,
            },
        )
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            mode: self.objective,
            nce_temperature: self.nce_temperature,
        }
    }

    /// Sorted `key=value` lines.
    pub fn canonical(&self) -> String {
        canonical_lines(&serde_json::to_value(self).expect("config serialises"))
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn digest(&self) -> String {
        digest_str(&self.canonical())
    }
}

/// Sorted `key=value` lines of a flat JSON object. Nested values are written
/// as compact JSON.
pub fn canonical_lines(value: &serde_json::Value) -> String {
    let map: BTreeMap<&String, &serde_json::Value> = match value {
        serde_json::Value::Object(m) => m.iter().collect(),
        other => return format!("{other}\n"),
    };
    let mut out = String::new();
    for (k, v) in map {
        match v {
            serde_json::Value::String(s) => out.push_str(&format!("{k}={s}\n")),
            other => out.push_str(&format!("{k}={other}\n")),
        }
    }
    out
}

pub fn digest_str(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cora_preset_row() {
        let c = TrainConfig::preset("cora").unwrap();
        assert_eq!((c.p_m_1, c.p_m_2, c.p_r_1, c.p_r_2), (0.3, 0.4, 0.2, 0.4));
        assert_eq!((c.learning_rate, c.weight_decay), (0.005, 1e-5));
        assert_eq!((c.epochs, c.hidden_dim, c.activation), (200, 128, Activation::Relu));
        assert_eq!(c.tau, 0.5);
        c.validate().unwrap();
    }

    #[test]
    fn every_preset_is_valid() {
        for name in PRESETS {
            TrainConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(TrainConfig::preset("reddit").is_none());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let ok = TrainConfig::preset("cora").unwrap();
        let mut c = ok.clone();
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.p_r_2 = 1.5;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = ok;
        c.tau = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn digest_tracks_every_field() {
        let a = TrainConfig::preset("cora").unwrap();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
        assert!(a.canonical().starts_with("activation=relu\narch=gcn2\n"));
        assert_eq!(a.digest().len(), 64);
    }
}
