//! Word to subword mapping: characters, syllables and morphs.

pub mod hyphenation;
pub mod morph;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, EOS, UNK};
use crate::error::{Error, Result};

pub use hyphenation::HyphenationPatterns;
pub use morph::{CountMode, MorphModel, MorphSegmentation, MorphTrainConfig};

pub const PAD: &str = "<pad>";
pub const BOW: &str = "<bow>";
pub const EOW: &str = "<eow>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Char,
    Syllable,
    Morph,
}

impl UnitKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(UnitKind::Char),
            "syl" | "syllable" => Ok(UnitKind::Syllable),
            "morph" => Ok(UnitKind::Morph),
            _ => Err(Error::Config(format!("unknown unit kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SubwordVocabularyData")]
pub struct SubwordVocabulary {
    kind: UnitKind,
    units: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct SubwordVocabularyData {
    kind: UnitKind,
    units: Vec<String>,
}

impl From<SubwordVocabularyData> for SubwordVocabulary {
    fn from(d: SubwordVocabularyData) -> Self {
        SubwordVocabulary::from_units(d.kind, d.units)
    }
}

impl SubwordVocabulary {
    /// Reserved units first: pad, `<unk>`, `<eos>` and, for characters,
    /// begin/end-of-word markers.
    fn reserved(kind: UnitKind) -> Vec<String> {
        let mut r = vec![PAD.to_string(), UNK.to_string(), EOS.to_string()];
        if kind == UnitKind::Char {
            r.push(BOW.to_string());
            r.push(EOW.to_string());
        }
        r
    }

    fn from_units(kind: UnitKind, units: Vec<String>) -> Self {
        let index = units.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        SubwordVocabulary { kind, units, index }
    }

    pub fn kind(&self) -> UnitKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Number of reserved (non-content) units.
    pub fn reserved_count(&self) -> usize {
        Self::reserved(self.kind).len()
    }

    pub fn id(&self, unit: &str) -> Option<usize> {
        self.index.get(unit).copied()
    }

    pub fn unit(&self, id: usize) -> &str {
        &self.units[id]
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn pad(&self) -> usize {
        0
    }

    pub fn bow(&self) -> Option<usize> {
        self.id(BOW).filter(|_| self.kind == UnitKind::Char)
    }

    pub fn eow(&self) -> Option<usize> {
        self.id(EOW).filter(|_| self.kind == UnitKind::Char)
    }
}

/// `sigma(w)` for every word index of a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub units: Vec<Vec<usize>>,
}

impl Segmentation {
    pub fn get(&self, word: usize) -> &[usize] {
        &self.units[word]
    }

    pub fn max_len(&self) -> usize {
        self.units.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Source of subword pieces for arbitrary word strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Segmenter {
    Chars { max_word_len: usize },
    Syllables {
        #[serde(skip, default = "HyphenationPatterns::english")]
        patterns: HyphenationPatterns,
    },
    Morphs(MorphModel),
    External {
        kind: UnitKind,
        table: BTreeMap<String, Vec<String>>,
    },
}

impl Segmenter {
    pub fn kind(&self) -> UnitKind {
        match self {
            Segmenter::Chars { .. } => UnitKind::Char,
            Segmenter::Syllables { .. } => UnitKind::Syllable,
            Segmenter::Morphs(_) => UnitKind::Morph,
            Segmenter::External { kind, .. } => *kind,
        }
    }

    /// Content pieces of `word` (no markers).
    pub fn pieces(&self, word: &str) -> Result<Vec<String>> {
        if word.is_empty() {
            return Err(Error::Segmentation("empty word".into()));
        }
        match self {
            Segmenter::Chars { max_word_len } => Ok(word
                .chars()
                .take(max_word_len.saturating_sub(2).max(1))
                .map(String::from)
                .collect()),
            Segmenter::Syllables { patterns } => Ok(patterns.syllabify(word)),
            Segmenter::Morphs(m) => match m.analysis(word) {
                Some(a) => Ok(a.to_vec()),
                None => Ok(m.segment_word(word)?.morphs),
            },
            Segmenter::External { table, .. } => table
                .get(word)
                .cloned()
                .ok_or_else(|| Error::Segmentation(format!("no segmentation for {word:?}"))),
        }
    }
}

/// `[BOW] + chars + [EOW]`, right-padded with PAD to `max_len`; words longer
/// than `max_len - 2` lose their tail. Unknown characters map to `<unk>`.
pub fn char_sequence(word: &str, max_len: usize, sv: &SubwordVocabulary) -> Result<Vec<usize>> {
    if max_len < 3 {
        return Err(Error::Segmentation("max_len must be at least 3".into()));
    }
    let (bow, eow) = match (sv.bow(), sv.eow()) {
        (Some(b), Some(e)) => (b, e),
        _ => return Err(Error::Segmentation("not a character vocabulary".into())),
    };
    let unk = sv.id(UNK).expect("reserved");
    let mut out = vec![bow];
    let mut buf = [0u8; 4];
    out.extend(
        word.chars()
            .take(max_len - 2)
            .map(|c| sv.id(c.encode_utf8(&mut buf)).unwrap_or(unk)),
    );
    out.push(eow);
    out.resize(max_len, sv.pad());
    Ok(out)
}

/// Subword vocabulary, per-word unit sequences and the segmenter that made
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubwordData {
    pub vocab: SubwordVocabulary,
    pub segmentation: Segmentation,
    pub segmenter: Segmenter,
}

/// Result of mapping an arbitrary word onto known units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Encoded {
    Units(Vec<usize>),
    /// Some piece is not in the subword vocabulary.
    NotAvailable { pieces: Vec<String> },
}

impl SubwordData {
    /// Unit ids for `word`, wrapped in markers for characters.
    pub fn encode_word(&self, word: &str) -> Result<Encoded> {
        if word == UNK || word == EOS {
            return Ok(Encoded::Units(self.wrap(vec![self.vocab.id(word).expect("reserved")])));
        }
        let pieces = self.segmenter.pieces(word)?;
        let mut ids = Vec::with_capacity(pieces.len());
        for p in &pieces {
            match self.vocab.id(p) {
                Some(i) if i >= self.vocab.reserved_count() => ids.push(i),
                _ => return Ok(Encoded::NotAvailable { pieces }),
            }
        }
        Ok(Encoded::Units(self.wrap(ids)))
    }

    fn wrap(&self, ids: Vec<usize>) -> Vec<usize> {
        match (self.vocab.bow(), self.vocab.eow()) {
            (Some(b), Some(e)) => {
                let mut v = Vec::with_capacity(ids.len() + 2);
                v.push(b);
                v.extend(ids);
                v.push(e);
                v
            }
            _ => ids,
        }
    }
}

/// Segments every word of `vocab`. `<unk>` and `<eos>` get their own
/// atomic units. Content units are ordered by descending number of
/// occurrences across vocabulary entries, then lexicographically.
pub fn build_subword_vocab(vocab: &Vocabulary, segmenter: Segmenter) -> Result<SubwordData> {
    let kind = segmenter.kind();
    let mut pieces: Vec<Option<Vec<String>>> = Vec::with_capacity(vocab.len());
    let mut freq: HashMap<String, u64> = HashMap::new();
    for w in vocab.words() {
        if w == UNK || w == EOS {
            pieces.push(None);
            continue;
        }
        let p = segmenter.pieces(w)?;
        if kind != UnitKind::Char && p.concat() != *w {
            return Err(Error::Segmentation(format!(
                "segmentation of {w:?} does not reproduce the word: {p:?}"
            )));
        }
        for u in &p {
            *freq.entry(u.clone()).or_default() += 1;
        }
        pieces.push(Some(p));
    }
    let reserved = SubwordVocabulary::reserved(kind);
    for r in &reserved {
        freq.remove(r);
    }
    let mut content: Vec<(String, u64)> = freq.into_iter().collect();
    content.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut units = reserved;
    units.extend(content.into_iter().map(|(u, _)| u));
    let sv = SubwordVocabulary::from_units(kind, units);
    let mut data = SubwordData {
        vocab: sv,
        segmentation: Segmentation { units: Vec::new() },
        segmenter,
    };
    let mut seg = Vec::with_capacity(vocab.len());
    for (w, p) in vocab.words().iter().zip(pieces) {
        let ids = match p {
            None => vec![data.vocab.id(w).expect("reserved")],
            Some(p) => p
                .iter()
                .map(|u| data.vocab.id(u).expect("collected above"))
                .collect(),
        };
        seg.push(data.wrap(ids));
    }
    data.segmentation = Segmentation { units: seg };
    Ok(data)
}

/// Reads `word<TAB>unit1 unit2 ...` lines and checks that units concatenate
/// to the word.
pub fn load_segmentation_file(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (word, units) = line.split_once('\t').ok_or_else(|| {
            Error::Segmentation(format!("{}:{}: missing tab", path.display(), n + 1))
        })?;
        let units: Vec<String> = units.split_whitespace().map(str::to_string).collect();
        if units.concat() != word {
            return Err(Error::Segmentation(format!(
                "{}:{}: units {units:?} do not concatenate to {word:?}",
                path.display(),
                n + 1
            )));
        }
        table.insert(word.to_string(), units);
    }
    if table.is_empty() {
        return Err(Error::Segmentation(format!("{}: no entries", path.display())));
    }
    Ok(table)
}

pub fn write_segmentation<W: Write>(
    mut w: W,
    words: &[String],
    segmenter: &Segmenter,
) -> Result<()> {
    for word in words {
        if word == UNK || word == EOS {
            continue;
        }
        let pieces = segmenter.pieces(word)?;
        writeln!(w, "{word}\t{}", pieces.join(" "))
            .map_err(|e| Error::io("<segmentation output>", e))?;
    }
    Ok(())
}

/// Training word types and their frequencies, without `<unk>`/`<eos>`.
pub fn word_frequencies(vocab: &Vocabulary) -> BTreeMap<String, u64> {
    vocab
        .words()
        .iter()
        .zip(vocab.counts())
        .filter(|(w, _)| *w != UNK && *w != EOS)
        .map(|(w, &c)| (w.clone(), c.max(1)))
        .collect()
}
