//! Flat `key = value` training configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::complexity::ComplexityWeights;
use crate::encoders::Norm;
use crate::error::{Error, Result};
use crate::model::{Architecture, Mode};
use crate::training::StagePlan;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_net: f64,
    pub lr_kg: f64,
    pub batch_size: usize,
    pub dropout: f64,
    /// Epochs of plain training, or of the final all-paths stage when pretraining.
    pub epochs: usize,
    pub seed: u64,
    pub mode: Mode,
    pub pretrain: bool,
    /// Epochs per pretraining stage.
    pub pretrain_epochs: usize,
    pub norm: Norm,
    pub kg_bias: f64,
    pub maxdist: usize,
    pub filters: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub kg_dim: usize,
    pub window: usize,
    pub attention_grad_to_kg: bool,
    /// `false` drops every path from every bag (sentence-only model).
    pub use_paths: bool,
    pub max_paths: usize,
    pub j: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Pretrained word vectors; relative paths resolve against the data directory.
    pub embeddings: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_net: 0.02,
            lr_kg: 0.05,
            batch_size: 50,
            dropout: 0.5,
            epochs: 10,
            seed: 0,
            mode: Mode::Base,
            pretrain: false,
            pretrain_epochs: 3,
            norm: Norm::L2,
            kg_bias: 7.0,
            maxdist: 30,
            filters: 100,
            word_dim: 50,
            pos_dim: 5,
            kg_dim: 50,
            window: 3,
            attention_grad_to_kg: false,
            use_paths: true,
            max_paths: 100,
            j: 50,
            lambda1: 1.0,
            lambda2: 1.0,
            embeddings: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

impl TrainConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    /// Unknown and repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse("config", i + 1, format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::config(key, "given twice"));
            }
            cfg.set(key, value)?;
            seen.push(key.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr_net" => self.lr_net = parse_value(key, value)?,
            "lr_kg" => self.lr_kg = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "mode" => self.mode = value.parse().map_err(|e: String| Error::config(key, e))?,
            "pretrain" => self.pretrain = parse_bool(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_value(key, value)?,
            "norm" => self.norm = value.parse().map_err(|e: String| Error::config(key, e))?,
            "kg_bias" => self.kg_bias = parse_value(key, value)?,
            "maxdist" => self.maxdist = parse_value(key, value)?,
            "filters" => self.filters = parse_value(key, value)?,
            "word_dim" => self.word_dim = parse_value(key, value)?,
            "pos_dim" => self.pos_dim = parse_value(key, value)?,
            "kg_dim" => self.kg_dim = parse_value(key, value)?,
            "window" => self.window = parse_value(key, value)?,
            "attn_grad_to_kg" => self.attention_grad_to_kg = parse_bool(key, value)?,
            "use_paths" => self.use_paths = parse_bool(key, value)?,
            "max_paths" => self.max_paths = parse_value(key, value)?,
            "complexity.j" => self.j = parse_value(key, value)?,
            "complexity.lambda1" => self.lambda1 = parse_value(key, value)?,
            "complexity.lambda2" => self.lambda2 = parse_value(key, value)?,
            "embeddings" => self.embeddings = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("lr_net", self.lr_net), ("lr_kg", self.lr_kg)];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, "must be a positive number"));
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("pretrain_epochs", self.pretrain_epochs),
            ("maxdist", self.maxdist),
            ("filters", self.filters),
            ("word_dim", self.word_dim),
            ("pos_dim", self.pos_dim),
            ("kg_dim", self.kg_dim),
            ("max_paths", self.max_paths),
            ("complexity.j", self.j),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.window % 2 == 0 {
            return Err(Error::config("window", "must be odd"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if !self.kg_bias.is_finite() {
            return Err(Error::config("kg_bias", "must be finite"));
        }
        for (key, v) in [("complexity.lambda1", self.lambda1), ("complexity.lambda2", self.lambda2)] {
            if !v.is_finite() {
                return Err(Error::config(key, "must be finite"));
            }
        }
        Ok(())
    }

    /// Canonical text: every key in a fixed order. Parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("lr_net", self.lr_net.to_string());
        put("lr_kg", self.lr_kg.to_string());
        put("batch_size", self.batch_size.to_string());
        put("dropout", self.dropout.to_string());
        put("epochs", self.epochs.to_string());
        put("seed", self.seed.to_string());
        put("mode", self.mode.to_string());
        put("pretrain", self.pretrain.to_string());
        put("pretrain_epochs", self.pretrain_epochs.to_string());
        put("norm", self.norm.to_string());
        put("kg_bias", self.kg_bias.to_string());
        put("maxdist", self.maxdist.to_string());
        put("filters", self.filters.to_string());
        put("word_dim", self.word_dim.to_string());
        put("pos_dim", self.pos_dim.to_string());
        put("kg_dim", self.kg_dim.to_string());
        put("window", self.window.to_string());
        put("attn_grad_to_kg", self.attention_grad_to_kg.to_string());
        put("use_paths", self.use_paths.to_string());
        put("max_paths", self.max_paths.to_string());
        put("complexity.j", self.j.to_string());
        put("complexity.lambda1", self.lambda1.to_string());
        put("complexity.lambda2", self.lambda2.to_string());
        put("embeddings", self.embeddings.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        s
    }

    /// Hex SHA-256 of [`TrainConfig::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn complexity_weights(&self) -> ComplexityWeights {
        ComplexityWeights { lambda1: self.lambda1, lambda2: self.lambda2 }
    }

    pub fn stage_plan(&self) -> StagePlan {
        if self.pretrain {
            StagePlan::pretrain(self.pretrain_epochs, self.epochs)
        } else {
            StagePlan::plain(self.epochs)
        }
    }

    pub fn architecture(&self, vocab_size: usize, num_entities: usize, num_relations: usize) -> Architecture {
        Architecture {
            vocab_size,
            num_entities,
            num_relations,
            word_dim: self.word_dim,
            pos_dim: self.pos_dim,
            kg_dim: self.kg_dim,
            filters: self.filters,
            window: self.window,
            maxdist: self.maxdist,
            mode: self.mode,
            kg_bias: self.kg_bias,
            norm: self.norm,
            j: self.j,
            complexity: self.complexity_weights(),
            dropout: self.dropout,
            attention_grad_to_kg: self.attention_grad_to_kg,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_biomedical_setting() {
        let c = TrainConfig::default();
        assert_eq!((c.lr_net, c.lr_kg, c.batch_size, c.filters, c.j), (0.02, 0.05, 50, 100, 50));
        assert_eq!((c.word_dim, c.pos_dim, c.kg_dim, c.dropout), (50, 5, 50, 0.5));
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.mode = Mode::Ranking;
        c.lambda2 = 0.25;
        c.embeddings = Some("vec.txt".into());
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap().hash(), c.hash());
        assert_ne!(TrainConfig::default().hash(), c.hash());
    }

    #[test]
    fn comments_and_overrides() {
        let c = TrainConfig::parse("# desk\nepochs = 4  # short\ncomplexity.j=5\n\nmode = ranking\n").unwrap();
        assert_eq!((c.epochs, c.j, c.mode), (4, 5, Mode::Ranking));
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            ("lr_net = fast", "lr_net"),
            ("bogus = 1", "bogus"),
            ("epochs = 0", "epochs"),
            ("dropout = 1.0", "dropout"),
            ("seed = 1\nseed = 2", "seed"),
            ("window = 4", "window"),
        ] {
            let err = TrainConfig::parse(text).unwrap_err().to_string();
            assert!(err.contains(key), "{err}");
        }
        assert!(TrainConfig::parse("no equals sign").is_err());
    }
}
