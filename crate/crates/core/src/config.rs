//! Run configuration and its file formats.
//!
//! A config file is either JSON (`.json`) or line-oriented `key = value`
//! text with `#` comments. The same keys are accepted as `;`-separated
//! overrides in benchmark manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::SvmParams;
use crate::denoiser::NoiseSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    /// Scale every instance to unit Euclidean norm.
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    /// Number of stacked layers `l`.
    pub layers: usize,
    /// Feature-removal probability `p`.
    pub noise: f64,
    pub lambda: f64,
    pub beta: f64,
    /// Inferred from the source labels when absent.
    pub class_count: Option<usize>,
    /// Prepend the raw features to the classifier input.
    pub include_raw_features: bool,
    /// Append a constant, never-corrupted bias input to every layer.
    pub append_bias: bool,
    /// Compute the `l` layers once from the initial pseudo-labels instead of
    /// re-stacking `z = 1..l` after every pseudo-label refresh.
    pub fast_stacking: bool,
    pub normalization: Normalization,
    /// Keep only the `k` most frequent features before learning.
    pub top_features: Option<usize>,
    pub svm: SvmParams,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            noise: 0.9,
            lambda: 10.0,
            beta: 0.1,
            class_count: None,
            include_raw_features: false,
            append_bias: false,
            fast_stacking: false,
            normalization: Normalization::None,
            top_features: None,
            svm: SvmParams::default(),
            seed: 0,
        }
    }
}

/// Published hyper-parameters for the benchmark corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Reuters,
    Spam,
    Newsgroups,
    OfficeCaltech,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "reuters" => Ok(Preset::Reuters),
            "spam" => Ok(Preset::Spam),
            "newsgroups" | "20newsgroups" | "20ng" => Ok(Preset::Newsgroups),
            "office" | "officecaltech" | "officecaltech10" => Ok(Preset::OfficeCaltech),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn apply(self, cfg: &mut AdaptConfig) {
        let (lambda, beta, layers, noise) = match self {
            Preset::Reuters | Preset::Spam => (10.0, 0.1, 4, 0.9),
            Preset::Newsgroups => (1e-5, 1000.0, 4, 0.9),
            Preset::OfficeCaltech => (1e-5, 1.0, 3, 0.6),
        };
        cfg.lambda = lambda;
        cfg.beta = beta;
        cfg.layers = layers;
        cfg.noise = noise;
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        NoiseSpec::new(self.noise, self.seed)?;
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::Config(format!("beta {} must be >= 0", self.beta)));
        }
        if self.class_count == Some(0) {
            return Err(Error::Config("class_count must be positive".into()));
        }
        if self.top_features == Some(0) {
            return Err(Error::Config("top_features must be positive".into()));
        }
        if self.svm.c.is_nan()
            || self.svm.c <= 0.0
            || self.svm.tol.is_nan()
            || self.svm.tol <= 0.0
            || self.svm.max_iter == 0
        {
            return Err(Error::Config("SVM c, tol and max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.noise, self.seed)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        match key.as_str() {
            "layers" | "l" => self.layers = parse_value(&key, value)?,
            "noise" | "p" => self.noise = parse_value(&key, value)?,
            "lambda" => self.lambda = parse_value(&key, value)?,
            "beta" => self.beta = parse_value(&key, value)?,
            "class_count" | "classes" => self.class_count = Some(parse_value(&key, value)?),
            "include_raw_features" => self.include_raw_features = parse_bool(&key, value)?,
            "append_bias" => self.append_bias = parse_bool(&key, value)?,
            "fast_stacking" => self.fast_stacking = parse_bool(&key, value)?,
            "normalization" => {
                self.normalization = match value.to_ascii_lowercase().as_str() {
                    "none" => Normalization::None,
                    "l2" => Normalization::L2,
                    other => return Err(Error::Config(format!("unknown normalization {other:?}"))),
                }
            }
            "top_features" => self.top_features = Some(parse_value(&key, value)?),
            "svm_c" | "c" => self.svm.c = parse_value(&key, value)?,
            "svm_max_iter" => self.svm.max_iter = parse_value(&key, value)?,
            "svm_tol" => self.svm.tol = parse_value(&key, value)?,
            "seed" => {
                self.seed = parse_value(&key, value)?;
                self.svm.seed = self.seed;
            }
            "preset" => Preset::parse(value)?.apply(self),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` pairs separated by `;` or newlines.
    pub fn apply_overrides(&mut self, text: &str) -> Result<()> {
        for item in text.split([';', '\n']) {
            let item = item.split('#').next().unwrap_or("").trim();
            if item.is_empty() {
                continue;
            }
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, found {item:?}")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_overrides(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json {
            serde_json::from_str::<Self>(&text)?
        } else {
            Self::from_kv_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.svm.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_text_parses() {
        let cfg = AdaptConfig::from_kv_str("# comment\nlayers = 2\nnoise=0.5\nbeta = 3 # inline\nappend_bias = yes\n")
            .unwrap();
        assert_eq!(cfg.layers, 2);
        assert_eq!(cfg.noise, 0.5);
        assert_eq!(cfg.beta, 3.0);
        assert!(cfg.append_bias);
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(AdaptConfig::from_kv_str("layers=0").is_err());
        assert!(AdaptConfig::from_kv_str("noise=1.0").is_err());
        assert!(AdaptConfig::from_kv_str("lambda=-1").is_err());
        assert!(AdaptConfig::from_kv_str("unknown=1").is_err());
        assert!(AdaptConfig::from_kv_str("layers").is_err());
    }

    #[test]
    fn presets() {
        let mut cfg = AdaptConfig::default();
        cfg.apply_overrides("preset=office-caltech10").unwrap();
        assert_eq!((cfg.lambda, cfg.beta, cfg.layers, cfg.noise), (1e-5, 1.0, 3, 0.6));
        cfg.apply_overrides("preset=20newsgroups;layers=2").unwrap();
        assert_eq!((cfg.lambda, cfg.beta, cfg.layers), (1e-5, 1000.0, 2));
    }

    #[test]
    fn json_round_trip() {
        let cfg = AdaptConfig {
            layers: 3,
            class_count: Some(4),
            ..AdaptConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: AdaptConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: AdaptConfig = serde_json::from_str(r#"{"beta": 2.0}"#).unwrap();
        assert_eq!(partial.beta, 2.0);
        assert_eq!(partial.layers, 4);
    }
}
