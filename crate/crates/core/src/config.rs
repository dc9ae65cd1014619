//! Plain-text `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are applied in
//! order, so `preset` should come first. Every value is validated when read.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{LossOptions, LossWeights};
use crate::model::TransformerConfig;
use crate::training::TrainConfig;

/// Model keys, in record order.
pub const MODEL_KEYS: [&str; 10] = [
    "channels",
    "heads",
    "encoder_layers",
    "decoder_layers",
    "ffn_hidden",
    "patch_size",
    "cape_grid",
    "content_pe",
    "style_pe",
    "separate_embeddings",
];

pub const TRAIN_KEYS: [&str; 8] = [
    "batch_size",
    "total_iters",
    "crop",
    "seed",
    "base_lr",
    "warmup_steps",
    "clip_norm",
    "ckpt_every",
];

pub const LOSS_KEYS: [&str; 6] = ["lambda_c", "lambda_s", "lambda_id1", "lambda_id2", "raw_norms", "sigma"];

pub const EXTRACTOR_KEYS: [&str; 3] = ["extractor", "extractor_seed", "extractor_stages"];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn positive(key: &str, value: &str) -> Result<usize> {
    match parse::<usize>(key, value)? {
        0 => Err(Error::Config(format!("`{key}` must be positive"))),
        n => Ok(n),
    }
}

fn nonnegative(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse(key, value)?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Config(format!("`{key}` must be a finite nonnegative number, got {value}")));
    }
    Ok(v)
}

/// `key=value` pairs describing `config`, in [`MODEL_KEYS`] order.
pub fn model_record(config: &TransformerConfig) -> Vec<(String, String)> {
    let c = config;
    let values = [
        c.channels.to_string(),
        c.heads.to_string(),
        c.encoder_layers.to_string(),
        c.decoder_layers.to_string(),
        c.ffn_hidden.to_string(),
        c.patch_size.to_string(),
        c.cape_grid.to_string(),
        c.content_pe.to_string(),
        c.style_pe.to_string(),
        c.separate_embeddings.to_string(),
    ];
    MODEL_KEYS.iter().map(|k| k.to_string()).zip(values).collect()
}

/// Sets one model key. Returns `Ok(false)` if `key` is not a model key.
pub fn set_model_key(config: &mut TransformerConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "channels" => config.channels = positive(key, value)?,
        "heads" => config.heads = positive(key, value)?,
        "encoder_layers" => config.encoder_layers = positive(key, value)?,
        "decoder_layers" => config.decoder_layers = positive(key, value)?,
        "ffn_hidden" => config.ffn_hidden = positive(key, value)?,
        "patch_size" => config.patch_size = positive(key, value)?,
        "cape_grid" => config.cape_grid = positive(key, value)?,
        "content_pe" => config.content_pe = value.parse()?,
        "style_pe" => config.style_pe = value.parse()?,
        "separate_embeddings" => config.separate_embeddings = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Rebuilds a configuration from a complete record; every model key must
/// appear exactly once.
pub fn model_from_record<'a>(pairs: impl IntoIterator<Item = &'a (String, String)>) -> Result<TransformerConfig> {
    let mut config = TransformerConfig::default();
    let mut seen = Vec::new();
    for (k, v) in pairs {
        if !set_model_key(&mut config, k, v)? {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        if seen.contains(k) {
            return Err(Error::Config(format!("duplicate key `{k}`")));
        }
        seen.push(k.clone());
    }
    if let Some(missing) = MODEL_KEYS.iter().find(|k| !seen.iter().any(|s| s == *k)) {
        return Err(Error::Config(format!("missing key `{missing}`")));
    }
    config.validate()?;
    Ok(config)
}

/// Where the perceptual feature extractor comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtractorSource {
    Builtin { seed: u64, stages: usize },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: TransformerConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub loss: LossOptions,
    pub extractor: ExtractorSource,
}

impl Default for RunConfig {
    /// Desk-scale defaults: the toy model with the default training settings.
    fn default() -> Self {
        Self {
            model: TransformerConfig::toy(),
            train: TrainConfig::default(),
            weights: LossWeights::default(),
            loss: LossOptions::default(),
            extractor: ExtractorSource::Builtin { seed: 0, stages: 4 },
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip_prefix(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Applies one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if set_model_key(&mut self.model, key, value)? {
            return Ok(());
        }
        let t = &mut self.train;
        match key {
            "preset" => {
                self.model = match value {
                    "toy" => TransformerConfig::toy(),
                    "full" => TransformerConfig::default(),
                    _ => return Err(Error::Config(format!("`preset` must be toy or full, got `{value}`"))),
                }
            }
            "batch_size" => t.batch_size = positive(key, value)?,
            "total_iters" => t.total_iters = positive(key, value)?,
            "crop" => t.crop = positive(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "base_lr" => t.base_lr = nonnegative(key, value)?,
            "warmup_steps" => t.warmup_steps = Some(parse(key, value)?),
            "clip_norm" => {
                t.clip_norm = match value {
                    "none" => None,
                    _ => Some(nonnegative(key, value)?),
                }
            }
            "ckpt_every" => t.ckpt_every = parse(key, value)?,
            "lambda_c" => self.weights.content = nonnegative(key, value)?,
            "lambda_s" => self.weights.style = nonnegative(key, value)?,
            "lambda_id1" => self.weights.identity_pixel = nonnegative(key, value)?,
            "lambda_id2" => self.weights.identity_feature = nonnegative(key, value)?,
            "raw_norms" => self.loss.raw_norms = parse(key, value)?,
            "sigma" => self.loss.sigma = value.parse()?,
            "extractor" => {
                self.extractor = match (value, &self.extractor) {
                    ("builtin", ExtractorSource::Builtin { .. }) => return Ok(()),
                    ("builtin", _) => ExtractorSource::Builtin { seed: 0, stages: 4 },
                    (path, _) => ExtractorSource::File(PathBuf::from(path)),
                }
            }
            "extractor_seed" | "extractor_stages" => match &mut self.extractor {
                ExtractorSource::Builtin { seed, stages } => {
                    if key == "extractor_seed" {
                        *seed = parse(key, value)?;
                    } else {
                        let n = positive(key, value)?;
                        if n < 2 {
                            return Err(Error::Config("`extractor_stages` must be at least 2".into()));
                        }
                        *stages = n;
                    }
                }
                ExtractorSource::File(_) => {
                    return Err(Error::Config(format!("`{key}` only applies to the builtin extractor")))
                }
            },
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !self.train.crop.is_multiple_of(self.model.patch_size) {
            return Err(Error::Config(format!(
                "crop {} must be a multiple of patch_size {}",
                self.train.crop, self.model.patch_size
            )));
        }
        Ok(())
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::SigmaMode;
    use crate::posenc::PeMode;

    #[test]
    fn parses_values_and_comments() {
        let cfg = RunConfig::parse(
            "# toy run\npreset = full\nchannels=64\nheads=4\ncontent_pe=sinusoidal\n\n\
             batch_size=3\nbase_lr=0.001\nclip_norm=1.5\nlambda_c=0\nsigma=variance\nextractor_seed=9\n",
        )
        .unwrap();
        assert_eq!(cfg.model.channels, 64);
        assert_eq!(cfg.model.encoder_layers, 3);
        assert_eq!(cfg.model.content_pe, PeMode::Sinusoidal);
        assert_eq!(cfg.train.batch_size, 3);
        assert_eq!(cfg.train.clip_norm, Some(1.5));
        assert_eq!(cfg.weights.content, 0.0);
        assert_eq!(cfg.loss.sigma, SigmaMode::Variance);
        assert_eq!(cfg.extractor, ExtractorSource::Builtin { seed: 9, stages: 4 });
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        for bad in [
            "colour=red",
            "heads=0",
            "heads=-1",
            "base_lr=nan",
            "lambda_s=-1",
            "content_pe=learned",
            "channels",
            "patch_size=16",
            "crop=30",
            "extractor_stages=1",
        ] {
            let err = RunConfig::parse(bad).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad}: {err}");
        }
        let err = RunConfig::parse("\n\nfoo=1").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("foo"), "{err}");
    }

    #[test]
    fn model_record_round_trips() {
        for cfg in [TransformerConfig::default(), TransformerConfig::toy()] {
            assert_eq!(model_from_record(&model_record(&cfg)).unwrap(), cfg);
        }
        let mut rec = model_record(&TransformerConfig::toy());
        rec.pop();
        assert!(model_from_record(&rec).is_err());
    }
}
