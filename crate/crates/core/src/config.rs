//! Flat `key = value` model configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::SentenceCombine;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Mock,
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntityRows {
    Markers,
    MentionTokens,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderSettings {
    pub kind: EncoderKind,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub attention_layer: i64,
    pub max_len: usize,
    pub vocab_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatSettings {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub leaky_slope: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ablations {
    pub dependency: bool,
    pub constituency: bool,
    pub dynamic_fusion: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimSettings {
    pub lr_encoder: f64,
    pub lr_rest: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Caps the schedule length when set.
    pub max_steps: Option<usize>,
    pub max_grad_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub relations: Vec<String>,
    pub encoder: EncoderSettings,
    pub gat: GatSettings,
    pub tree_dim: usize,
    pub fusion_dim: usize,
    pub fusion_dropout: f64,
    pub head_block_size: Option<usize>,
    pub entity_rows: EntityRows,
    pub sentence_combine: SentenceCombine,
    pub dep_bidirectional: bool,
    pub ablate: Ablations,
    pub eta: f64,
    pub seed: u64,
    pub optim: OptimSettings,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            relations: Vec::new(),
            encoder: EncoderSettings {
                kind: EncoderKind::Mock,
                dim: 64,
                heads: 2,
                layers: 1,
                attention_layer: -1,
                max_len: 1024,
                vocab_size: 4096,
            },
            gat: GatSettings {
                layers: 3,
                heads: 1,
                dim: 256,
                leaky_slope: 0.2,
            },
            tree_dim: 256,
            fusion_dim: 256,
            fusion_dropout: 0.5,
            head_block_size: None,
            entity_rows: EntityRows::Markers,
            sentence_combine: SentenceCombine::Attention,
            dep_bidirectional: false,
            ablate: Ablations {
                dependency: false,
                constituency: false,
                dynamic_fusion: false,
            },
            eta: 0.1,
            seed: 0,
            optim: OptimSettings {
                lr_encoder: 3e-5,
                lr_rest: 2e-4,
                warmup_ratio: 0.06,
                epochs: 30,
                batch_size: 4,
                weight_decay: 0.01,
                max_steps: None,
                max_grad_norm: Some(1.0),
            },
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {want}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, want: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, want))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

fn parse_opt<T: std::str::FromStr>(key: &str, value: &str, want: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse_num(key, value, want).map(Some)
    }
}

impl ModelConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown and repeated
    /// keys are errors; missing keys keep their defaults except `relations`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), ()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: {key} given twice",
                    lineno + 1
                )));
            }
            c.set(key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        const INT: &str = "a non-negative integer";
        const REAL: &str = "a number";
        match key {
            "relations" => {
                self.relations = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect();
            }
            "encoder.kind" => {
                self.encoder.kind = match v {
                    "mock" => EncoderKind::Mock,
                    "external" => EncoderKind::External,
                    _ => return Err(bad(key, v, "mock or external")),
                }
            }
            "encoder.dim" => self.encoder.dim = parse_num(key, v, INT)?,
            "encoder.heads" => self.encoder.heads = parse_num(key, v, INT)?,
            "encoder.layers" => self.encoder.layers = parse_num(key, v, INT)?,
            "encoder.attention_layer" => {
                self.encoder.attention_layer = parse_num(key, v, "an integer")?
            }
            "encoder.max_len" => self.encoder.max_len = parse_num(key, v, INT)?,
            "encoder.vocab_size" => self.encoder.vocab_size = parse_num(key, v, INT)?,
            "gat.layers" => self.gat.layers = parse_num(key, v, INT)?,
            "gat.heads" => self.gat.heads = parse_num(key, v, INT)?,
            "gat.dim" => self.gat.dim = parse_num(key, v, INT)?,
            "gat.leaky_slope" => self.gat.leaky_slope = parse_num(key, v, REAL)?,
            "tree.dim" => self.tree_dim = parse_num(key, v, INT)?,
            "fusion.dim" => self.fusion_dim = parse_num(key, v, INT)?,
            "fusion.dropout" => self.fusion_dropout = parse_num(key, v, REAL)?,
            "head.block_size" => self.head_block_size = parse_opt(key, v, "an integer or none")?,
            "context.entity_rows" => {
                self.entity_rows = match v {
                    "markers" => EntityRows::Markers,
                    "mention_tokens" => EntityRows::MentionTokens,
                    _ => return Err(bad(key, v, "markers or mention_tokens")),
                }
            }
            "sentence_combine.mode" => {
                self.sentence_combine = match v {
                    "attention" => SentenceCombine::Attention,
                    "paired" => SentenceCombine::Paired,
                    _ => return Err(bad(key, v, "attention or paired")),
                }
            }
            "dep_bidirectional" => self.dep_bidirectional = parse_bool(key, v)?,
            "ablate.dependency" => self.ablate.dependency = parse_bool(key, v)?,
            "ablate.constituency" => self.ablate.constituency = parse_bool(key, v)?,
            "ablate.dynamic_fusion" => self.ablate.dynamic_fusion = parse_bool(key, v)?,
            "eta" => self.eta = parse_num(key, v, REAL)?,
            "seed" => self.seed = parse_num(key, v, INT)?,
            "optim.lr_encoder" => self.optim.lr_encoder = parse_num(key, v, REAL)?,
            "optim.lr_rest" => self.optim.lr_rest = parse_num(key, v, REAL)?,
            "optim.warmup_ratio" => self.optim.warmup_ratio = parse_num(key, v, REAL)?,
            "optim.epochs" => self.optim.epochs = parse_num(key, v, INT)?,
            "optim.batch_size" => self.optim.batch_size = parse_num(key, v, INT)?,
            "optim.weight_decay" => self.optim.weight_decay = parse_num(key, v, REAL)?,
            "optim.max_steps" => self.optim.max_steps = parse_opt(key, v, "an integer or none")?,
            "optim.max_grad_norm" => {
                self.optim.max_grad_norm = parse_opt(key, v, "a number or none")?
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.relations.is_empty() {
            return fail("relations must list at least one label");
        }
        if self.eta < 0.0 || !self.eta.is_finite() {
            return fail("eta must be a finite value >= 0");
        }
        if self.optim.batch_size == 0 {
            return fail("optim.batch_size must be at least 1");
        }
        if self.gat.heads != 1 {
            return fail("gat.heads must be 1");
        }
        if self.gat.layers == 0 {
            return fail("gat.layers must be at least 1");
        }
        if !(0.0..1.0).contains(&self.fusion_dropout) {
            return fail("fusion.dropout must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.optim.warmup_ratio) {
            return fail("optim.warmup_ratio must lie in [0, 1]");
        }
        if [
            self.encoder.dim,
            self.gat.dim,
            self.tree_dim,
            self.fusion_dim,
        ]
        .contains(&0)
        {
            return fail("dimensions must be positive");
        }
        if let Some(k) = self.head_block_size {
            if k == 0 || !self.encoder.dim.is_multiple_of(k) {
                return fail("head.block_size must divide encoder.dim");
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let opt = |o: Option<String>| o.unwrap_or_else(|| "none".into());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("relations", self.relations.join(","));
        kv(
            "encoder.kind",
            if self.encoder.kind == EncoderKind::Mock {
                "mock"
            } else {
                "external"
            }
            .into(),
        );
        kv("encoder.dim", self.encoder.dim.to_string());
        kv("encoder.heads", self.encoder.heads.to_string());
        kv("encoder.layers", self.encoder.layers.to_string());
        kv(
            "encoder.attention_layer",
            self.encoder.attention_layer.to_string(),
        );
        kv("encoder.max_len", self.encoder.max_len.to_string());
        kv("encoder.vocab_size", self.encoder.vocab_size.to_string());
        kv("gat.layers", self.gat.layers.to_string());
        kv("gat.heads", self.gat.heads.to_string());
        kv("gat.dim", self.gat.dim.to_string());
        kv("gat.leaky_slope", format!("{:?}", self.gat.leaky_slope));
        kv("tree.dim", self.tree_dim.to_string());
        kv("fusion.dim", self.fusion_dim.to_string());
        kv("fusion.dropout", format!("{:?}", self.fusion_dropout));
        kv(
            "head.block_size",
            opt(self.head_block_size.map(|k| k.to_string())),
        );
        kv(
            "context.entity_rows",
            if self.entity_rows == EntityRows::Markers {
                "markers"
            } else {
                "mention_tokens"
            }
            .into(),
        );
        kv(
            "sentence_combine.mode",
            if self.sentence_combine == SentenceCombine::Attention {
                "attention"
            } else {
                "paired"
            }
            .into(),
        );
        kv("dep_bidirectional", self.dep_bidirectional.to_string());
        kv("ablate.dependency", self.ablate.dependency.to_string());
        kv("ablate.constituency", self.ablate.constituency.to_string());
        kv(
            "ablate.dynamic_fusion",
            self.ablate.dynamic_fusion.to_string(),
        );
        kv("eta", format!("{:?}", self.eta));
        kv("seed", self.seed.to_string());
        kv("optim.lr_encoder", format!("{:?}", self.optim.lr_encoder));
        kv("optim.lr_rest", format!("{:?}", self.optim.lr_rest));
        kv(
            "optim.warmup_ratio",
            format!("{:?}", self.optim.warmup_ratio),
        );
        kv("optim.epochs", self.optim.epochs.to_string());
        kv("optim.batch_size", self.optim.batch_size.to_string());
        kv(
            "optim.weight_decay",
            format!("{:?}", self.optim.weight_decay),
        );
        kv(
            "optim.max_steps",
            opt(self.optim.max_steps.map(|k| k.to_string())),
        );
        kv(
            "optim.max_grad_norm",
            opt(self.optim.max_grad_norm.map(|k| format!("{k:?}"))),
        );
        s
    }

    /// SHA-256 of the architecture-relevant part of the canonical text
    /// (everything except `seed` and `optim.*`).
    pub fn architecture_hash(&self) -> String {
        let arch: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("seed") && !l.starts_with("optim."))
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(Sha256::digest(arch.as_bytes()))
    }
}
