//! Plain `key=value` run configuration with override precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedders::{CharCnnConfig, EmbedderConfig, EmbedderKind};
use crate::error::{Error, Result};
use crate::rnnlm::{HeadKind, ModelConfig};
use crate::segmentation::morph::{CountMode, MorphTrainConfig};
use crate::trainer::TrainSchedule;
use crate::tying::ReuseMode;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("units", "word | char | syl | morph"),
    ("size", "small | medium"),
    ("dataset", "ptb | wt2 (selects dropout defaults)"),
    ("softmax", "word | subword (default subword for subword units)"),
    ("reuse", "none | re | rw | rerw"),
    ("tie", "comma-separated layer list; overrides reuse"),
    ("d_lm", "LSTM width"),
    ("lstm_layers", "number of LSTM layers"),
    ("d_s", "subword embedding width"),
    ("d_hw", "embedder output width"),
    ("highway_layers", "highway layers on top of the composition"),
    ("syl_slots", "syllable slots for sylconcat (default d_hw / d_s)"),
    ("char_dim", "character embedding width"),
    ("filter_widths", "comma-separated CharCNN filter widths"),
    ("feature_maps", "comma-separated CharCNN map counts per width"),
    ("max_word_len", "character sequence cap including markers; 0 = longest word"),
    ("min_count", "minimum word frequency for the vocabulary"),
    ("word_vocab_size", "word vocabulary size when counting without data"),
    ("subword_vocab_size", "subword vocabulary size when counting without data"),
    ("segmentation_file", "external word<TAB>units file"),
    ("pattern_file", "TeX hyphenation patterns"),
    ("hyph_left_min", "hyphenation left minimum"),
    ("hyph_right_min", "hyphenation right minimum"),
    ("morph_passes", "morph segmenter pass budget"),
    ("morph_seed", "morph segmenter shuffle seed"),
    ("morph_count_mode", "token | log | type"),
    ("lr", "initial learning rate"),
    ("lr_probe", "true to search the initial learning rate downwards from 1.0"),
    ("decay_start", "last epoch before decay"),
    ("decay_rate", "multiplicative decay per epoch"),
    ("epochs", "training epochs"),
    ("bptt", "truncated BPTT window"),
    ("batch_size", "training lanes"),
    ("eval_batch_size", "evaluation lanes"),
    ("clip_norm", "global gradient norm cap after division by batch size"),
    ("dropout", "variational dropout rate"),
    ("init_range", "uniform initialization half-width"),
    ("seed", "training seed"),
    ("sample_fraction", "sampled softmax negatives as a fraction of the vocabulary; 0 = off"),
    ("max_batches", "cap on batches per epoch; 0 = all"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Word,
    Char,
    Syl,
    Morph,
}

impl Units {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Units::Word),
            "char" => Ok(Units::Char),
            "syl" => Ok(Units::Syl),
            "morph" => Ok(Units::Morph),
            _ => Err(Error::Config(format!("unknown units {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Units::Word => "word",
            Units::Char => "char",
            Units::Syl => "syl",
            Units::Morph => "morph",
        }
    }
}

/// Raw configuration entries; later insertions override earlier ones.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known(key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
            })
            .transpose()
    }

    fn list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad list {v:?} for {key}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn units(&self) -> Result<Units> {
        Units::parse(self.get("units").unwrap_or("morph"))
    }

    pub fn medium(&self) -> Result<bool> {
        match self.get("size").unwrap_or("small") {
            "small" => Ok(false),
            "medium" => Ok(true),
            s => Err(Error::Config(format!("unknown size {s:?}"))),
        }
    }

    pub fn head(&self) -> Result<HeadKind> {
        let default = if self.units()? == Units::Word { "word" } else { "subword" };
        match self.get("softmax").unwrap_or(default) {
            "word" => Ok(HeadKind::Word),
            "subword" => Ok(HeadKind::Subword),
            s => Err(Error::Config(format!("unknown softmax {s:?}"))),
        }
    }

    /// Reuse mode; a `tie` list is resolved against the embedder's layers.
    pub fn reuse(&self, layer_names: &[String]) -> Result<ReuseMode> {
        match self.get("tie") {
            Some(list) => ReuseMode::from_layer_list(list, layer_names),
            None => ReuseMode::parse(self.get("reuse").unwrap_or("none")),
        }
    }

    /// Model structure for the given word and subword vocabulary sizes.
    pub fn model_config(&self, word_vocab: usize, subword_vocab: usize) -> Result<ModelConfig> {
        let units = self.units()?;
        let medium = self.medium()?;
        let d_lm = self.parsed("d_lm")?.unwrap_or(if medium { 650 } else { 200 });
        let highway = self.parsed("highway_layers")?.unwrap_or(2);
        let embedder = match units {
            Units::Word => {
                let d = self.parsed("d_hw")?.unwrap_or(d_lm);
                EmbedderConfig {
                    kind: EmbedderKind::Word,
                    units: word_vocab,
                    d_s: d,
                    d_hw: d,
                    highway_layers: 0,
                }
            }
            Units::Morph => {
                let d = self.parsed("d_hw")?.or(self.parsed("d_s")?).unwrap_or(d_lm);
                EmbedderConfig {
                    kind: EmbedderKind::MorphSum,
                    units: subword_vocab,
                    d_s: self.parsed("d_s")?.unwrap_or(d),
                    d_hw: d,
                    highway_layers: highway,
                }
            }
            Units::Syl => {
                let d_s = self.parsed("d_s")?.unwrap_or(if medium { 200 } else { 50 });
                let d_hw = self.parsed("d_hw")?.unwrap_or(if medium { 800 } else { 200 });
                let slots = self.parsed("syl_slots")?.unwrap_or(d_hw / d_s.max(1));
                EmbedderConfig {
                    kind: EmbedderKind::SylConcat { slots },
                    units: subword_vocab,
                    d_s,
                    d_hw,
                    highway_layers: highway,
                }
            }
            Units::Char => {
                let mut cnn = if medium { CharCnnConfig::medium() } else { CharCnnConfig::small() };
                if let Some(c) = self.parsed("char_dim")?.or(self.parsed("d_s")?) {
                    cnn.char_dim = c;
                }
                if let Some(w) = self.list("filter_widths")? {
                    cnn.widths = w;
                }
                if let Some(m) = self.list("feature_maps")? {
                    cnn.maps = m;
                }
                EmbedderConfig {
                    d_s: cnn.char_dim,
                    kind: EmbedderKind::CharCnn(cnn),
                    units: subword_vocab,
                    d_hw: self.parsed("d_hw")?.unwrap_or(d_lm),
                    highway_layers: highway,
                }
            }
        };
        embedder.validate()?;
        let names = crate::embedders::Embedder::new(embedder.clone(), "input")?.layer_names();
        Ok(ModelConfig {
            embedder,
            head: self.head()?,
            reuse: self.reuse(&names)?,
            d_lm,
            lstm_layers: self.parsed("lstm_layers")?.unwrap_or(2),
        })
    }

    /// Optimization schedule with defaults that depend on units, size,
    /// dataset and reuse mode.
    pub fn schedule(&self) -> Result<TrainSchedule> {
        let units = self.units()?;
        let medium = self.medium()?;
        let wt2 = match self.get("dataset").unwrap_or("ptb") {
            "ptb" => false,
            "wt2" => true,
            s => return Err(Error::Config(format!("unknown dataset {s:?}"))),
        };
        let reuse = self.get("reuse").unwrap_or("none");
        let untied_hw = self.get("tie").is_none() && (reuse == "none" || reuse == "rw");
        let lr = match units {
            Units::Word if !medium => 1.0,
            Units::Char => 0.5,
            Units::Syl if medium && untied_hw => 0.5,
            _ => 0.7,
        };
        let decay_start = match units {
            Units::Word if !medium => 5,
            Units::Char => 12,
            _ => 10,
        };
        let dropout = match (wt2, medium) {
            (false, false) => 0.3,
            (false, true) => 0.5,
            (true, false) => 0.2,
            (true, true) => 0.4,
        };
        let sample_fraction: f64 = self.parsed("sample_fraction")?.unwrap_or(0.0);
        let max_batches: usize = self.parsed("max_batches")?.unwrap_or(0);
        let s = TrainSchedule {
            initial_lr: self.parsed("lr")?.unwrap_or(lr),
            lr_probe: self.parsed("lr_probe")?.unwrap_or(false),
            decay_start: self.parsed("decay_start")?.unwrap_or(decay_start),
            decay_rate: self.parsed("decay_rate")?.unwrap_or(0.9),
            epochs: self.parsed("epochs")?.unwrap_or(70),
            bptt: self.parsed("bptt")?.unwrap_or(35),
            batch_size: self.parsed("batch_size")?.unwrap_or(20),
            eval_batch_size: self.parsed("eval_batch_size")?.unwrap_or(10),
            clip_norm: self.parsed("clip_norm")?.unwrap_or(5.0),
            dropout: self.parsed("dropout")?.unwrap_or(dropout),
            init_range: self.parsed("init_range")?.unwrap_or(if medium { 0.05 } else { 0.1 }),
            seed: self.parsed("seed")?.unwrap_or(1),
            sample_fraction: (sample_fraction > 0.0).then_some(sample_fraction),
            max_batches: (max_batches > 0).then_some(max_batches),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn min_count(&self) -> Result<u64> {
        Ok(self.parsed("min_count")?.unwrap_or(1))
    }

    pub fn max_word_len(&self) -> Result<usize> {
        Ok(self.parsed("max_word_len")?.unwrap_or(0))
    }

    pub fn vocab_sizes(&self) -> Result<(Option<usize>, Option<usize>)> {
        Ok((self.parsed("word_vocab_size")?, self.parsed("subword_vocab_size")?))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn hyphenation_mins(&self) -> Result<(usize, usize)> {
        Ok((
            self.parsed("hyph_left_min")?.unwrap_or(2),
            self.parsed("hyph_right_min")?.unwrap_or(3),
        ))
    }

    pub fn morph_config(&self) -> Result<MorphTrainConfig> {
        let d = MorphTrainConfig::default();
        let count_mode = match self.get("morph_count_mode") {
            None => d.count_mode,
            Some("token") => CountMode::Token,
            Some("log") => CountMode::Log,
            Some("type") => CountMode::Type,
            Some(s) => return Err(Error::Config(format!("unknown morph_count_mode {s:?}"))),
        };
        Ok(MorphTrainConfig {
            max_passes: self.parsed("morph_passes")?.unwrap_or(d.max_passes),
            seed: self.parsed("morph_seed")?.unwrap_or(d.seed),
            count_mode,
            ..d
        })
    }
}
