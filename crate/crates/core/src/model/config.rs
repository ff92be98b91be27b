//! Model and training configuration, plus the flat `key = value` run-config
//! format used by the command line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// N(0, 1) for every weight.
    Paper,
    /// N(0, 1/fan_in).
    Scaled,
}

impl FromStr for InitMode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Self::Paper),
            "scaled" => Ok(Self::Scaled),
            _ => Err(ModelError::Config(format!(
                "init_mode must be 'paper' or 'scaled', got '{s}'"
            ))),
        }
    }
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Paper => "paper",
            Self::Scaled => "scaled",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub fc_hidden: usize,
    pub num_classes: usize,
    pub init_mode: InitMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 96,
            conv_channels: vec![64, 128, 256],
            kernel_size: 5,
            fc_hidden: 1024,
            num_classes: 8,
            init_mode: InitMode::Scaled,
            seed: 1,
        }
    }
}

impl ModelConfig {
    /// Input 48, channels [8, 16, 32]; everything else as the default.
    pub fn reduced() -> Self {
        Self {
            input_size: 48,
            conv_channels: vec![8, 16, 32],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.input_size < 8 {
            return bad("input_size must be at least 8");
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad("conv_channels must be a nonempty list of positive counts");
        }
        if self.kernel_size % 2 == 0 {
            return bad("kernel_size must be odd");
        }
        if self.fc_hidden == 0 {
            return bad("fc_hidden must be positive");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        Ok(())
    }

    /// Spatial extent after the last pooling stage.
    pub fn feature_extent(&self) -> usize {
        self.conv_channels
            .iter()
            .fold(self.input_size, |n, _| crate::layers::pooled_extent(n))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub dropout_p: f64,
    /// Epoch cap.
    pub epochs: usize,
    pub seed: u64,
    /// Apply the random augmentation to every training sample.
    pub augment: bool,
    /// Stop once eval-mode training accuracy reaches this value.
    pub target_train_acc: Option<f64>,
    /// Convergence: stop after `patience` consecutive epochs whose loss
    /// improved by less than `min_improvement`.
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            momentum: 0.9,
            weight_decay: 0.0001,
            learning_rate: 0.001,
            dropout_p: 0.5,
            epochs: 100,
            seed: 1,
            augment: true,
            target_train_acc: None,
            patience: 5,
            min_improvement: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(0.0..=1.0).contains(&self.momentum) || !(0.0..=1.0).contains(&self.learning_rate) {
            return bad("momentum and learning_rate must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// Everything a CLI run needs, read from and echoed to a flat text file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Images held out for testing.
    pub test_count: usize,
    /// Top-n used by the association step.
    pub top_n: usize,
    /// Expression labels in class-index order; empty means "sorted labels".
    pub classes: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            test_count: 200,
            top_n: 9,
            classes: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ModelError> {
    value
        .parse()
        .map_err(|_| ModelError::Config(format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ModelError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are an
    /// error. Keys not mentioned keep their defaults.
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ModelError::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "input_size" => m.input_size = parse(key, value)?,
            "conv_channels" => m.conv_channels = parse_list(key, value)?,
            "kernel_size" => m.kernel_size = parse(key, value)?,
            "fc_hidden" => m.fc_hidden = parse(key, value)?,
            "num_classes" => m.num_classes = parse(key, value)?,
            "init_mode" => m.init_mode = value.parse()?,
            "seed" => {
                m.seed = parse(key, value)?;
                t.seed = m.seed;
            }
            "batch_size" => t.batch_size = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "dropout_p" => t.dropout_p = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "augment" => t.augment = parse(key, value)?,
            "target_train_acc" => {
                t.target_train_acc = match value {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "patience" => t.patience = parse(key, value)?,
            "min_improvement" => t.min_improvement = parse(key, value)?,
            "test_count" => self.test_count = parse(key, value)?,
            "top_n" => self.top_n = parse(key, value)?,
            "classes" => self.classes = parse_list(key, value)?,
            _ => return Err(ModelError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Overrides the seed of every stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
    }

    /// The fully resolved configuration in the same `key = value` format.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("input_size", m.input_size.to_string());
        kv.insert("conv_channels", join(&m.conv_channels));
        kv.insert("kernel_size", m.kernel_size.to_string());
        kv.insert("fc_hidden", m.fc_hidden.to_string());
        kv.insert("num_classes", m.num_classes.to_string());
        kv.insert("init_mode", m.init_mode.as_str().to_string());
        kv.insert("seed", m.seed.to_string());
        kv.insert("batch_size", t.batch_size.to_string());
        kv.insert("momentum", t.momentum.to_string());
        kv.insert("weight_decay", t.weight_decay.to_string());
        kv.insert("learning_rate", t.learning_rate.to_string());
        kv.insert("dropout_p", t.dropout_p.to_string());
        kv.insert("epochs", t.epochs.to_string());
        kv.insert("augment", t.augment.to_string());
        kv.insert(
            "target_train_acc",
            t.target_train_acc.map_or("none".into(), |v| v.to_string()),
        );
        kv.insert("patience", t.patience.to_string());
        kv.insert("min_improvement", t.min_improvement.to_string());
        kv.insert("test_count", self.test_count.to_string());
        kv.insert("top_n", self.top_n.to_string());
        kv.insert("classes", self.classes.join(","));
        let mut out = String::new();
        for (k, v) in kv {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_recipe() {
        let t = TrainConfig::default();
        assert_eq!(t.batch_size, 64);
        assert_eq!(t.momentum, 0.9);
        assert_eq!(t.weight_decay, 0.0001);
        assert_eq!(t.learning_rate, 0.001);
        assert_eq!(t.dropout_p, 0.5);
        let m = ModelConfig::default();
        assert_eq!(m.conv_channels, vec![64, 128, 256]);
        assert_eq!(m.kernel_size, 5);
        assert_eq!(m.fc_hidden, 1024);
        assert_eq!(m.feature_extent(), 12);
    }

    #[test]
    fn text_roundtrip() {
        let mut cfg = RunConfig::from_text(
            "# reduced run\ninput_size = 48\nconv_channels = 8, 16, 32\nseed = 3\ntarget_train_acc = 0.95\nclasses = a,b\n",
        )
        .unwrap();
        assert_eq!(cfg.model.conv_channels, vec![8, 16, 32]);
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.train.target_train_acc, Some(0.95));
        let again = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        cfg.set_seed(9);
        assert_eq!((cfg.model.seed, cfg.train.seed), (9, 9));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_text("nonsense = 1").is_err());
        assert!(RunConfig::from_text("epochs").is_err());
        assert!(RunConfig::from_text("kernel_size = 4").is_err());
        assert!(RunConfig::from_text("learning_rate = 2").is_err());
        assert!(RunConfig::from_text("init_mode = xavier").is_err());
    }
}
