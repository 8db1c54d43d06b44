//! A trained or trainable model together with the vocabularies it needs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use swlm_numcore::{checkpoint, NumError, ParamRegistry};

use crate::config::{RunConfig, Units};
use crate::corpus::{EncodedStream, Vocabulary};
use crate::error::{Error, Result};
use crate::rnnlm::{identity_units, Architecture, ModelConfig};
use crate::segmentation::{
    build_subword_vocab, load_segmentation_file, word_frequencies, HyphenationPatterns,
    MorphModel, Segmenter, SubwordData, UnitKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub units: Units,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub subwords: Option<SubwordData>,
    pub run: RunConfig,
}

#[derive(Debug, Clone)]
pub struct LanguageModel {
    pub meta: ModelMeta,
    pub arch: Architecture,
    pub params: ParamRegistry<f32>,
    unit_seqs: Vec<Vec<usize>>,
}

/// Segmenter and subword vocabulary for the configured units.
pub fn prepare_subwords(run: &RunConfig, vocab: &Vocabulary) -> Result<Option<SubwordData>> {
    let units = run.units()?;
    let kind = match units {
        Units::Word => return Ok(None),
        Units::Char => UnitKind::Char,
        Units::Syl => UnitKind::Syllable,
        Units::Morph => UnitKind::Morph,
    };
    let segmenter = if let Some(path) = run.path("segmentation_file").filter(|_| kind != UnitKind::Char) {
        Segmenter::External {
            kind,
            table: load_segmentation_file(&path)?,
        }
    } else {
        match kind {
            UnitKind::Char => {
                let cap = run.max_word_len()?;
                let longest = vocab.words().iter().map(|w| w.chars().count()).max().unwrap_or(1);
                Segmenter::Chars {
                    max_word_len: if cap == 0 { longest + 2 } else { cap },
                }
            }
            UnitKind::Syllable => {
                let patterns = match run.path("pattern_file") {
                    Some(p) => {
                        let (l, r) = run.hyphenation_mins()?;
                        HyphenationPatterns::load(&p, l, r)?
                    }
                    None => HyphenationPatterns::english(),
                };
                Segmenter::Syllables { patterns }
            }
            UnitKind::Morph => {
                let freqs = word_frequencies(vocab);
                Segmenter::Morphs(MorphModel::train(&freqs, &run.morph_config()?)?)
            }
        }
    };
    Ok(Some(build_subword_vocab(vocab, segmenter)?))
}

impl LanguageModel {
    /// Vocabulary, segmentation and architecture from training tokens.
    pub fn from_corpus(run: RunConfig, train: &[String]) -> Result<Self> {
        let vocab = Vocabulary::build(train, run.min_count()?)?;
        let subwords = prepare_subwords(&run, &vocab)?;
        Self::assemble(run, vocab, subwords)
    }

    /// Assembles the architecture; parameters are zero until initialized.
    pub fn assemble(run: RunConfig, vocab: Vocabulary, subwords: Option<SubwordData>) -> Result<Self> {
        let units = run.units()?;
        let sub_len = subwords.as_ref().map_or(0, |s| s.vocab.len());
        if (units == Units::Word) != subwords.is_none() {
            return Err(Error::Config("subword data must accompany subword units".into()));
        }
        let config = run.model_config(vocab.len(), sub_len)?;
        let arch = Architecture::new(config.clone(), vocab.len())?;
        let params = ParamRegistry::zeros(arch.layout().clone());
        let meta = ModelMeta {
            units,
            config,
            vocab,
            subwords,
            run,
        };
        let unit_seqs = unit_sequences(&meta);
        Ok(LanguageModel {
            meta,
            arch,
            params,
            unit_seqs,
        })
    }

    pub fn units(&self) -> &[Vec<usize>] {
        &self.unit_seqs
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.meta.vocab
    }

    pub fn encode(&self, tokens: &[String]) -> EncodedStream {
        self.meta.vocab.encode(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_params(path, &self.params)
    }

    /// Writes this model's metadata with another parameter set of the same
    /// layout (e.g. a training snapshot).
    pub fn save_params(&self, path: &Path, params: &ParamRegistry<f32>) -> Result<()> {
        if params.layout() != self.arch.layout() {
            return Err(Error::Config("parameter layout does not match the model".into()));
        }
        let meta = serde_json::to_value(&self.meta)
            .map_err(|e| Error::Data(format!("cannot serialize model metadata: {e}")))?;
        checkpoint::save(path, &meta, params).map_err(|e| at_path(path, e))?;
        Ok(())
    }

    /// Loads a checkpoint and checks that its storage layout, including the
    /// tying map, matches the architecture rebuilt from its metadata.
    pub fn load(path: &Path) -> Result<Self> {
        let (meta, params) = checkpoint::load(path).map_err(|e| at_path(path, e))?;
        let meta: ModelMeta = serde_json::from_value(meta)
            .map_err(|e| Error::Data(format!("{}: bad model metadata: {e}", path.display())))?;
        let arch = Architecture::new(meta.config.clone(), meta.vocab.len())?;
        if arch.layout() != params.layout() {
            return Err(Error::Data(format!(
                "{}: parameter layout does not match the model configuration",
                path.display()
            )));
        }
        let unit_seqs = unit_sequences(&meta);
        Ok(LanguageModel {
            meta,
            arch,
            params,
            unit_seqs,
        })
    }
}

fn at_path(path: &Path, e: NumError) -> Error {
    match e {
        NumError::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other}", path.display())),
    }
}

fn unit_sequences(meta: &ModelMeta) -> Vec<Vec<usize>> {
    match &meta.subwords {
        Some(s) => s.segmentation.units.clone(),
        None => identity_units(meta.vocab.len()),
    }
}
