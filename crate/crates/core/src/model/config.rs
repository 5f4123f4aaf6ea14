use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::AdamConfig;
use crate::layers::{Nonlinearity, UnkRow};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClassifierKind {
    #[default]
    Biaffine,
    Bilinear,
}

impl FromStr for ClassifierKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "biaffine" => Ok(ClassifierKind::Biaffine),
            "bilinear" => Ok(ClassifierKind::Bilinear),
            _ => Err(()),
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::Biaffine => "biaffine",
            ClassifierKind::Bilinear => "bilinear",
        })
    }
}

/// Architecture, regularization, and optimizer settings of the parser.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub lemma_dim: usize,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub char_out: usize,
    pub glove_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub edge_hidden: usize,
    pub label_hidden: usize,

    pub word_drop: f64,
    pub pos_drop: f64,
    pub lemma_drop: f64,
    pub char_ff_drop: f64,
    pub char_recur_drop: f64,
    pub char_linear_drop: f64,
    pub lstm_ff_drop: f64,
    pub lstm_recur_drop: f64,
    pub edge_drop: f64,
    pub label_drop: f64,

    pub interpolation: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2: f64,

    pub use_char: bool,
    pub use_lemma: bool,
    pub factorized: bool,
    pub edge_hidden_layer: bool,
    pub label_hidden_layer: bool,
    pub classifier_kind: ClassifierKind,
    pub edge_diagonal: bool,
    pub label_diagonal: bool,
    pub nonlinearity: Nonlinearity,
    pub pretrained_unk: UnkRow,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 100,
            pos_dim: 100,
            lemma_dim: 100,
            char_dim: 100,
            char_hidden: 400,
            char_out: 100,
            glove_dim: 125,
            lstm_hidden: 600,
            lstm_layers: 3,
            edge_hidden: 600,
            label_hidden: 600,

            word_drop: 0.2,
            pos_drop: 0.2,
            lemma_drop: 0.2,
            char_ff_drop: 0.33,
            char_recur_drop: 0.33,
            char_linear_drop: 0.33,
            lstm_ff_drop: 0.45,
            lstm_recur_drop: 0.25,
            edge_drop: 0.25,
            label_drop: 0.33,

            interpolation: 0.025,
            learning_rate: 1e-3,
            beta1: 0.0,
            beta2: 0.95,
            epsilon: 1e-12,
            l2: 3e-9,

            use_char: false,
            use_lemma: false,
            factorized: true,
            edge_hidden_layer: true,
            label_hidden_layer: true,
            classifier_kind: ClassifierKind::Biaffine,
            edge_diagonal: false,
            label_diagonal: true,
            nonlinearity: Nonlinearity::Identity,
            pretrained_unk: UnkRow::Trainable,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

/// Splits `key=value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: n + 1,
            text: line.to_string(),
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

macro_rules! config_keys {
    ($($field:ident),* $(,)?) => {
        impl ModelConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            /// Sets one field by name. `hidden_layers` sets both hidden-layer switches.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                match key {
                    $(stringify!($field) => self.$field = parse_value(key, value)?,)*
                    "hidden_layers" => {
                        let on: bool = parse_value(key, value)?;
                        self.edge_hidden_layer = on;
                        self.label_hidden_layer = on;
                    }
                    "pretrained_unk" => {
                        self.pretrained_unk = match value {
                            "trainable" => UnkRow::Trainable,
                            "zero" => UnkRow::Zero,
                            _ => return Err(ConfigError::BadValue {
                                key: key.to_string(),
                                value: value.to_string(),
                            }),
                        }
                    }
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
                Ok(())
            }

            pub fn to_sidecar(&self) -> String {
                let mut out = String::new();
                $(writeln!(out, "{}={}", stringify!($field), self.$field).unwrap();)*
                let unk = match self.pretrained_unk {
                    UnkRow::Trainable => "trainable",
                    UnkRow::Zero => "zero",
                };
                writeln!(out, "pretrained_unk={unk}").unwrap();
                out
            }
        }
    };
}

config_keys!(
    word_dim, pos_dim, lemma_dim, char_dim, char_hidden, char_out, glove_dim,
    lstm_hidden, lstm_layers, edge_hidden, label_hidden,
    word_drop, pos_drop, lemma_drop, char_ff_drop, char_recur_drop, char_linear_drop,
    lstm_ff_drop, lstm_recur_drop, edge_drop, label_drop,
    interpolation, learning_rate, beta1, beta2, epsilon, l2,
    use_char, use_lemma, factorized, edge_hidden_layer, label_hidden_layer,
    classifier_kind, edge_diagonal, label_diagonal, nonlinearity,
);

impl ModelConfig {
    /// Reads a sidecar written by [`ModelConfig::to_sidecar`]; missing keys keep their defaults.
    pub fn from_sidecar(text: &str) -> Result<Self, ConfigError> {
        let mut c = ModelConfig::default();
        for (k, v) in parse_pairs(text)? {
            c.set(&k, &v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.interpolation > 0.0 && self.interpolation < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "interpolation must lie in (0,1), got {}",
                self.interpolation
            )));
        }
        let rates = [
            ("word_drop", self.word_drop),
            ("pos_drop", self.pos_drop),
            ("lemma_drop", self.lemma_drop),
            ("char_ff_drop", self.char_ff_drop),
            ("char_recur_drop", self.char_recur_drop),
            ("char_linear_drop", self.char_linear_drop),
            ("lstm_ff_drop", self.lstm_ff_drop),
            ("lstm_recur_drop", self.lstm_recur_drop),
            ("edge_drop", self.edge_drop),
            ("label_drop", self.label_drop),
        ];
        for (name, r) in rates {
            if !(0.0..1.0).contains(&r) {
                return Err(ConfigError::Invalid(format!("{name} must lie in [0,1), got {r}")));
            }
        }
        let sizes = [
            ("word_dim", self.word_dim),
            ("pos_dim", self.pos_dim),
            ("lemma_dim", self.lemma_dim),
            ("char_dim", self.char_dim),
            ("char_hidden", self.char_hidden),
            ("char_out", self.char_out),
            ("glove_dim", self.glove_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("lstm_layers", self.lstm_layers),
            ("edge_hidden", self.edge_hidden),
            ("label_hidden", self.label_hidden),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, s)| *s == 0) {
            return Err(ConfigError::Invalid(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(ConfigError::Invalid("Adam betas must lie in [0,1)".into()));
        }
        if self.learning_rate <= 0.0 || self.epsilon <= 0.0 || self.l2 < 0.0 {
            return Err(ConfigError::Invalid(
                "learning_rate and epsilon must be positive, l2 non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.epsilon,
            l2: self.l2,
        }
    }

    /// Width of the per-token input vector.
    pub fn input_dim(&self, with_pretrained: bool) -> usize {
        self.word_dim
            + if with_pretrained { self.glove_dim } else { 0 }
            + if self.use_char { self.char_out } else { 0 }
            + self.pos_dim
            + if self.use_lemma { self.lemma_dim } else { 0 }
    }

    /// Shrinks every hidden size to `width` (character and recurrent sizes
    /// included) while keeping the architecture switches.
    pub fn scaled(mut self, width: usize) -> Self {
        for s in [
            &mut self.word_dim,
            &mut self.pos_dim,
            &mut self.lemma_dim,
            &mut self.char_dim,
            &mut self.char_hidden,
            &mut self.char_out,
            &mut self.glove_dim,
            &mut self.lstm_hidden,
            &mut self.edge_hidden,
            &mut self.label_hidden,
        ] {
            *s = width;
        }
        self
    }
}
