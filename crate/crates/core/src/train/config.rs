use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attention::Mechanism;
use crate::encoder::DropoutSites;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::span::{DecodeMode, DEFAULT_MAX_SPAN_LEN};

use super::optim::OptimizerKind;

/// Every training knob. Config files use the field names as keys.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mechanism: Mechanism,
    pub d_word: usize,
    pub d_char: usize,
    pub kernel: usize,
    pub num_filters: usize,
    pub h: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub max_steps: u64,
    pub eval_every: u64,
    pub seed: u64,
    pub decode: DecodeMode,
    pub max_len: usize,
    pub trainable_similarity: bool,
    pub dataset: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub char_cnn: bool,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    pub max_context_len: usize,
    pub max_question_len: usize,
    /// `None` means "trainable unless loaded from a pretrained file".
    pub train_embeddings: Option<bool>,
    pub dropout_sites: DropoutSites,
    /// Stop once dev EM (percent) reaches this value.
    pub early_stop_em: Option<f64>,
    /// Share of the dataset held out as dev when no dev file is given.
    pub dev_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::Dca,
            d_word: 100,
            d_char: 20,
            kernel: 5,
            num_filters: 100,
            h: 200,
            batch_size: 100,
            learning_rate: 0.001,
            dropout: 0.15,
            max_steps: 1000,
            eval_every: 100,
            seed: 0,
            decode: DecodeMode::Independent,
            max_len: DEFAULT_MAX_SPAN_LEN,
            trainable_similarity: false,
            dataset: None,
            dev: None,
            embeddings: None,
            char_cnn: true,
            optimizer: OptimizerKind::Adam,
            clip_norm: 5.0,
            max_context_len: 400,
            max_question_len: 60,
            train_embeddings: None,
            dropout_sites: DropoutSites::default(),
            early_stop_em: None,
            dev_fraction: 0.1,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for {key}"))),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl TrainConfig {
    /// Every key accepted by [`TrainConfig::set`], in echo order.
    pub const KEYS: [&'static str; 27] = [
        "mechanism",
        "d_word",
        "d_char",
        "kernel",
        "num_filters",
        "h",
        "batch_size",
        "learning_rate",
        "dropout",
        "max_steps",
        "eval_every",
        "seed",
        "decode",
        "max_len",
        "trainable_similarity",
        "dataset",
        "dev",
        "embeddings",
        "char_cnn",
        "optimizer",
        "clip_norm",
        "max_context_len",
        "max_question_len",
        "train_embeddings",
        "dropout_sites",
        "early_stop_em",
        "dev_fraction",
    ];

    /// Assigns one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "mechanism" => self.mechanism = v.parse()?,
            "d_word" => self.d_word = parse(key, v)?,
            "d_char" => self.d_char = parse(key, v)?,
            "kernel" => self.kernel = parse(key, v)?,
            "num_filters" => self.num_filters = parse(key, v)?,
            "h" => self.h = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "max_steps" => self.max_steps = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "decode" => self.decode = v.parse()?,
            "max_len" => self.max_len = parse(key, v)?,
            "trainable_similarity" => self.trainable_similarity = parse_bool(key, v)?,
            "dataset" => self.dataset = parse_path(v),
            "dev" => self.dev = parse_path(v),
            "embeddings" => self.embeddings = parse_path(v),
            "char_cnn" => self.char_cnn = parse_bool(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "max_context_len" => self.max_context_len = parse(key, v)?,
            "max_question_len" => self.max_question_len = parse(key, v)?,
            "train_embeddings" => {
                self.train_embeddings = match v {
                    "auto" => None,
                    _ => Some(parse_bool(key, v)?),
                }
            }
            "dropout_sites" => self.dropout_sites = v.parse()?,
            "early_stop_em" => {
                self.early_stop_em = match v {
                    "none" | "" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "dev_fraction" => self.dev_fraction = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    /// One `key=value` line per field; parsing it back yields `self`.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = String::new();
        for key in Self::KEYS {
            let value = match key {
                "mechanism" => self.mechanism.to_string(),
                "d_word" => self.d_word.to_string(),
                "d_char" => self.d_char.to_string(),
                "kernel" => self.kernel.to_string(),
                "num_filters" => self.num_filters.to_string(),
                "h" => self.h.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "learning_rate" => self.learning_rate.to_string(),
                "dropout" => self.dropout.to_string(),
                "max_steps" => self.max_steps.to_string(),
                "eval_every" => self.eval_every.to_string(),
                "seed" => self.seed.to_string(),
                "decode" => self.decode.to_string(),
                "max_len" => self.max_len.to_string(),
                "trainable_similarity" => self.trainable_similarity.to_string(),
                "dataset" => path(&self.dataset),
                "dev" => path(&self.dev),
                "embeddings" => path(&self.embeddings),
                "char_cnn" => self.char_cnn.to_string(),
                "optimizer" => self.optimizer.to_string(),
                "clip_norm" => self.clip_norm.to_string(),
                "max_context_len" => self.max_context_len.to_string(),
                "max_question_len" => self.max_question_len.to_string(),
                "train_embeddings" => self.train_embeddings.map_or("auto".into(), |b| b.to_string()),
                "dropout_sites" => self.dropout_sites.to_string(),
                "early_stop_em" => self.early_stop_em.map_or("none".into(), |v| v.to_string()),
                "dev_fraction" => self.dev_fraction.to_string(),
                _ => unreachable!("every key is listed"),
            };
            let _ = writeln!(out, "{key}={value}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("d_word", self.d_word),
            ("d_char", self.d_char),
            ("kernel", self.kernel),
            ("num_filters", self.num_filters),
            ("h", self.h),
            ("batch_size", self.batch_size),
            ("max_len", self.max_len),
            ("max_context_len", self.max_context_len),
            ("max_question_len", self.max_question_len),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config(format!("clip_norm {} must be positive", self.clip_norm)));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::Config(format!("dev_fraction {} outside [0, 1)", self.dev_fraction)));
        }
        Ok(())
    }

    /// Model hyperparameters, resolving the embedding-training default.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            mechanism: self.mechanism,
            hidden: self.h,
            d_char: self.d_char,
            kernel: self.kernel,
            num_filters: self.num_filters,
            char_cnn: self.char_cnn,
            train_embeddings: self.train_embeddings.unwrap_or(self.embeddings.is_none()),
            dropout: self.dropout,
            dropout_sites: self.dropout_sites,
            trainable_similarity: self.trainable_similarity,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_setup() {
        let c = TrainConfig::default();
        assert_eq!((c.d_word, c.batch_size, c.h), (100, 100, 200));
        assert_eq!((c.learning_rate, c.dropout), (0.001, 0.15));
        assert_eq!((c.d_char, c.kernel, c.num_filters), (20, 5, 100));
        assert_eq!(c.clip_norm, 5.0);
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.apply_text("mechanism=hybrid\nlearning_rate=0.0003\ndataset=/tmp/x.jsonl\ntrain_embeddings=true\nearly_stop_em=97.5\n# note\n\ndropout_sites=outputs")
            .unwrap();
        assert_eq!(c.mechanism, Mechanism::Hybrid);
        assert_eq!(c.train_embeddings, Some(true));
        let back = TrainConfig::parse_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(
            TrainConfig::parse_text(&TrainConfig::default().to_text()).unwrap(),
            TrainConfig::default()
        );
    }

    #[test]
    fn bad_keys_and_values_are_rejected() {
        assert!(TrainConfig::parse_text("colour=red").unwrap_err().to_string().contains("colour"));
        assert!(TrainConfig::parse_text("h=big").unwrap_err().to_string().contains("h"));
        assert!(TrainConfig::parse_text("no equals sign").is_err());
        assert!(TrainConfig::parse_text("dropout=1.0").is_err());
        assert!(TrainConfig::parse_text("h=0").is_err());
        assert!(TrainConfig::parse_text("mechanism=bogus").is_err());
    }

    #[test]
    fn embedding_training_default_depends_on_source() {
        let mut c = TrainConfig::default();
        assert!(c.model_config().train_embeddings);
        c.embeddings = Some("glove.txt".into());
        assert!(!c.model_config().train_embeddings);
        c.train_embeddings = Some(true);
        assert!(c.model_config().train_embeddings);
    }
}
