use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{InterReduction, DYKSTRA_MAX_ITER, DYKSTRA_TOL};
use crate::error::{Error, Result};

/// How per-modality embeddings are combined before classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Mean,
    Sum,
    Concat,
}

impl Fusion {
    pub fn fused_dim(self, modalities: usize, d: usize) -> usize {
        match self {
            Fusion::Mean | Fusion::Sum => d,
            Fusion::Concat => modalities * d,
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Mean => "mean",
            Fusion::Sum => "sum",
            Fusion::Concat => "concat",
        })
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Fusion::Mean),
            "sum" => Ok(Fusion::Sum),
            "concat" => Ok(Fusion::Concat),
            other => Err(Error::Parameter(format!("unknown fusion mode '{other}'"))),
        }
    }
}

/// Parameter update rule. Both apply weight decay decoupled from the
/// gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Gd,
    #[default]
    Adam,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Gd => "gd",
            Optimizer::Adam => "adam",
        })
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gd" | "sgd" => Ok(Optimizer::Gd),
            "adam" | "adamw" => Ok(Optimizer::Adam),
            other => Err(Error::Parameter(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub tau: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub fusion: Fusion,
    pub optimizer: Optimizer,
    pub inter_reduction: InterReduction,
    pub seed: u64,
    pub label_ratio: f64,
    pub latent_dim: usize,
    pub dykstra_tol: f64,
    pub dykstra_max_iter: usize,
    pub spectral_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 3,
            tau: 10.0,
            learning_rate: 1e-2,
            epochs: 200,
            weight_decay: 5e-5,
            dropout: 0.5,
            fusion: Fusion::Mean,
            optimizer: Optimizer::Adam,
            inter_reduction: InterReduction::Cosine,
            seed: 0,
            label_ratio: 0.1,
            latent_dim: 64,
            dykstra_tol: DYKSTRA_TOL,
            dykstra_max_iter: DYKSTRA_MAX_ITER,
            spectral_tol: 1e-10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.label_ratio > 0.0 && self.label_ratio < 1.0) {
            return bad(format!("label_ratio must lie in (0, 1), got {}", self.label_ratio));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        for (name, v) in [
            ("tau", self.tau),
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ] {
            if !v.is_finite() || (name != "tau" && v < 0.0) {
                return bad(format!("{name} must be finite{}, got {v}", if name == "tau" { "" } else { " and non-negative" }));
            }
        }
        if !(self.dykstra_tol > 0.0) || !(self.spectral_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        Ok(())
    }

    /// Applies one `key=value` setting. Keys match the field names; `-` and
    /// `_` are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Parameter(format!("invalid value '{v}' for {key}")))
        }
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "k" => self.k = num(&key, value)?,
            "tau" => self.tau = num(&key, value)?,
            "learning_rate" | "lr" => self.learning_rate = num(&key, value)?,
            "epochs" => self.epochs = num(&key, value)?,
            "weight_decay" => self.weight_decay = num(&key, value)?,
            "dropout" => self.dropout = num(&key, value)?,
            "fusion" => self.fusion = value.parse()?,
            "optimizer" => self.optimizer = value.parse()?,
            "inter_reduction" => self.inter_reduction = value.parse()?,
            "seed" => self.seed = num(&key, value)?,
            "label_ratio" => self.label_ratio = num(&key, value)?,
            "latent_dim" | "d" => self.latent_dim = num(&key, value)?,
            "dykstra_tol" => self.dykstra_tol = num(&key, value)?,
            "dykstra_max_iter" => self.dykstra_max_iter = num(&key, value)?,
            "spectral_tol" => self.spectral_tol = num(&key, value)?,
            other => return Err(Error::Parameter(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a flat `key = value` file. Blank lines and `#` comments are
    /// skipped.
    pub fn apply_file_contents(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parameter(format!("config line {}: expected key=value", lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }
}
