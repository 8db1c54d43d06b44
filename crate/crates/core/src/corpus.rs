//! Corpus loading, word vocabularies and contiguous BPTT batching.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Whitespace tokenization with `<eos>` appended to every non-empty line.
pub fn tokenize_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let before = out.len();
        out.extend(line.split_whitespace().map(str::to_string));
        if out.len() > before {
            out.push(EOS.to_string());
        }
    }
    out
}

pub fn load_corpus(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Data(format!("{}: not valid UTF-8 ({e})", path.display())))?;
    let tokens = tokenize_text(&text);
    if tokens.is_empty() {
        return Err(Error::Data(format!("{}: empty corpus", path.display())));
    }
    Ok(tokens)
}

/// Locates a split inside a data directory. Accepts `train.txt`,
/// `ptb.train.txt` and `wiki.train.tokens` naming.
pub fn split_path(dir: &Path, split: Split) -> Result<PathBuf> {
    let s = split.name();
    let candidates = [
        format!("{s}.txt"),
        format!("ptb.{s}.txt"),
        format!("wiki.{s}.tokens"),
    ];
    candidates
        .iter()
        .map(|c| dir.join(c))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Data(format!("no {s} split found in {}", dir.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyData")]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    unk: usize,
    eos: usize,
}

impl Vocabulary {
    /// Builds the vocabulary of `tokens`, keeping words seen at least
    /// `min_count` times. Order: descending frequency, then lexicographic.
    /// Dropped words add their counts to `<unk>`.
    pub fn build(tokens: &[String], min_count: u64) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from no tokens".into()));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for t in tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        let mut unk_count = counts.remove(UNK).unwrap_or(0);
        let eos_count = counts.remove(EOS).unwrap_or(0);
        let mut kept: Vec<(String, u64)> = Vec::new();
        for (w, c) in counts {
            if c >= min_count.max(1) {
                kept.push((w.to_string(), c));
            } else {
                unk_count += c;
            }
        }
        kept.push((UNK.to_string(), unk_count));
        kept.push((EOS.to_string(), eos_count));
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let (words, counts): (Vec<_>, Vec<_>) = kept.into_iter().unzip();
        Ok(Self::from_parts(words, counts))
    }

    /// Vocabulary with the given order (counts default to zero).
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut words = words;
        for special in [UNK, EOS] {
            if !words.iter().any(|w| w == special) {
                words.push(special.to_string());
            }
        }
        let mut seen = BTreeSet::new();
        for w in &words {
            if !seen.insert(w.as_str()) {
                return Err(Error::Data(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        let counts = vec![0; words.len()];
        Ok(Self::from_parts(words, counts))
    }

    fn from_parts(words: Vec<String>, counts: Vec<u64>) -> Self {
        let index: HashMap<String, usize> =
            words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let unk = index[UNK];
        let eos = index[EOS];
        Vocabulary {
            words,
            counts,
            index,
            unk,
            eos,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unk(&self) -> usize {
        self.unk
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> usize {
        self.id(word).unwrap_or(self.unk)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn encode(&self, tokens: &[String]) -> EncodedStream {
        EncodedStream {
            tokens: tokens.iter().map(|t| self.id_or_unk(t)).collect(),
        }
    }

    pub fn decode(&self, stream: &EncodedStream) -> Vec<String> {
        stream.tokens.iter().map(|&i| self.words[i].clone()).collect()
    }

    /// One `word<TAB>count` line per entry, in index order.
    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (word, c) in self.words.iter().zip(&self.counts) {
            writeln!(w, "{word}\t{c}")?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct VocabularyData {
    words: Vec<String>,
    counts: Vec<u64>,
}

impl From<VocabularyData> for Vocabulary {
    fn from(d: VocabularyData) -> Self {
        Vocabulary::from_parts(d.words, d.counts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EncodedStream {
    pub tokens: Vec<usize>,
}

impl EncodedStream {
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }
}

/// `inputs[b][t]` and `targets[b][t] = stream[lane_start(b) + offset + t + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchView {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl BatchView {
    pub fn batch_size(&self) -> usize {
        self.inputs.len()
    }

    pub fn steps(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }
}

fn lanes(stream: &EncodedStream, batch_size: usize, steps: usize) -> Result<usize> {
    if batch_size == 0 || steps == 0 {
        return Err(Error::Data("batch_size and steps must be positive".into()));
    }
    let n = stream.tokens.len();
    if n < batch_size * steps + 1 {
        return Err(Error::Data(format!(
            "stream of {n} tokens is too short for batch_size {batch_size} x steps {steps}"
        )));
    }
    Ok((n - 1) / batch_size)
}

fn window(stream: &EncodedStream, batch_size: usize, lane_len: usize, start: usize, len: usize) -> BatchView {
    let t = &stream.tokens;
    let mut inputs = Vec::with_capacity(batch_size);
    let mut targets = Vec::with_capacity(batch_size);
    for b in 0..batch_size {
        let base = b * lane_len + start;
        inputs.push(t[base..base + len].to_vec());
        targets.push(t[base + 1..base + len + 1].to_vec());
    }
    BatchView { inputs, targets }
}

/// Contiguous batching: the stream is cut into `batch_size` lanes of
/// `(n - 1) / batch_size` positions; windows of `steps` positions are taken
/// left to right and an incomplete final window is dropped.
pub fn batchify(stream: &EncodedStream, batch_size: usize, steps: usize) -> Result<Vec<BatchView>> {
    let lane_len = lanes(stream, batch_size, steps)?;
    Ok((0..lane_len / steps)
        .map(|k| window(stream, batch_size, lane_len, k * steps, steps))
        .collect())
}

/// Like [`batchify`] but keeps a shorter final window, so every lane
/// position is scored. Used for evaluation.
pub fn batchify_with_tail(
    stream: &EncodedStream,
    batch_size: usize,
    steps: usize,
) -> Result<Vec<BatchView>> {
    if batch_size == 0 || steps == 0 {
        return Err(Error::Data("batch_size and steps must be positive".into()));
    }
    let n = stream.tokens.len();
    if n < batch_size + 1 {
        return Err(Error::Data(format!(
            "stream of {n} tokens is too short for {batch_size} lanes"
        )));
    }
    let lane_len = (n - 1) / batch_size;
    let mut out = Vec::new();
    let mut start = 0;
    while start < lane_len {
        let len = steps.min(lane_len - start);
        out.push(window(stream, batch_size, lane_len, start, len));
        start += len;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub tokens: usize,
    pub types: usize,
    pub ttr: f64,
}

/// Token count, number of distinct word indices in the stream, and their ratio.
pub fn corpus_stats(stream: &EncodedStream, vocab: &Vocabulary) -> CorpusStats {
    let mut seen = vec![false; vocab.len()];
    for &t in &stream.tokens {
        seen[t] = true;
    }
    let types = seen.iter().filter(|&&s| s).count();
    let tokens = stream.tokens.len();
    CorpusStats {
        tokens,
        types,
        ttr: if tokens == 0 {
            0.0
        } else {
            types as f64 / tokens as f64
        },
    }
}

/// Perplexity of an add-one smoothed unigram model estimated on `train`.
pub fn unigram_ppl(train: &EncodedStream, eval: &EncodedStream, vocab_size: usize) -> Result<f64> {
    if eval.tokens.is_empty() || vocab_size == 0 {
        return Err(Error::Data("empty evaluation stream or vocabulary".into()));
    }
    let mut counts = vec![1.0f64; vocab_size];
    for &t in &train.tokens {
        counts[t] += 1.0;
    }
    let total = train.tokens.len() as f64 + vocab_size as f64;
    let nll: f64 = eval.tokens.iter().map(|&t| -(counts[t] / total).ln()).sum();
    Ok((nll / eval.tokens.len() as f64).exp())
}

/// Train/valid/test token sequences of one data set.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl Corpus {
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Ok(Corpus {
            train: load_corpus(&split_path(dir, Split::Train)?)?,
            valid: load_corpus(&split_path(dir, Split::Valid)?)?,
            test: load_corpus(&split_path(dir, Split::Test)?)?,
        })
    }

    pub fn split(&self, s: Split) -> &[String] {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn tokenizes_line_with_eos() {
        let t = tokenize_text("no it was n't black monday\n\n");
        assert_eq!(t.len(), 7);
        assert_eq!(t.last().unwrap(), EOS);
    }

    #[test]
    fn threshold_semantics() {
        let v = Vocabulary::build(&toks("a a b"), 2).unwrap();
        assert_eq!(v.words(), &["a", UNK, EOS]);
        assert_eq!(v.count(v.unk()), 1);
    }

    #[test]
    fn order_is_frequency_then_lexicographic() {
        let v = Vocabulary::build(&toks("c b b a a z"), 1).unwrap();
        assert_eq!(&v.words()[..4], &["a", "b", "c", "z"]);
    }

    #[test]
    fn seventy_one_tokens() {
        let s = EncodedStream {
            tokens: (0..71).collect(),
        };
        let b = batchify(&s, 2, 35).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].inputs[0], (0..35).collect::<Vec<_>>());
        assert_eq!(b[0].inputs[1], (35..70).collect::<Vec<_>>());
        assert_eq!(b[0].targets[1], (36..71).collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_batching() {
        let s = EncodedStream {
            tokens: (0..10).collect(),
        };
        assert!(batchify(&s, 2, 0).is_err());
        assert!(batchify(&s, 2, 5).is_err());
    }

    #[test]
    fn ttr_of_repeated_token() {
        let v = Vocabulary::build(&toks("x"), 1).unwrap();
        let s = v.encode(&toks("x x x x"));
        let st = corpus_stats(&s, &v);
        assert_eq!(st.ttr, 0.25);
    }
}
