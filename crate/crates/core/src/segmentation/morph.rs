//! Unsupervised morph segmentation by minimum description length.
//!
//! The model is a morph lexicon with counts. Its cost is
//!
//! ```text
//! corpus  = -sum_m c_m ln(c_m / N)                N = sum_m c_m
//! lexicon = sum_{distinct m} (len(m) + 1) ln(|A| + 1)   A = training alphabet
//! ```
//!
//! Training starts from whole words and repeatedly re-analyses each word
//! type by greedy recursive binary splitting. A re-analysis that would raise
//! the total cost is rolled back, so the cost never increases.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How corpus frequencies are turned into training weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountMode {
    /// Token frequency.
    Token,
    /// `1 + floor(ln(freq))`.
    Log,
    /// Every type counted once.
    Type,
}

impl CountMode {
    fn weight(self, freq: u64) -> u64 {
        match self {
            CountMode::Token => freq,
            CountMode::Log => 1 + (freq.max(1) as f64).ln().floor() as u64,
            CountMode::Type => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorphTrainConfig {
    pub max_passes: usize,
    /// Stop once a pass improves the cost by less than this many nats.
    pub min_improvement: f64,
    pub seed: u64,
    pub count_mode: CountMode,
}

impl Default for MorphTrainConfig {
    fn default() -> Self {
        MorphTrainConfig {
            max_passes: 10,
            min_improvement: 1e-3,
            seed: 0,
            count_mode: CountMode::Token,
        }
    }
}

fn xlogx(c: u64) -> f64 {
    if c == 0 {
        0.0
    } else {
        let c = c as f64;
        c * c.ln()
    }
}

/// Incrementally maintained MDL cost.
#[derive(Debug, Clone)]
struct CostState {
    counts: BTreeMap<String, u64>,
    tokens: u64,
    sum_xlogx: f64,
    lexicon: f64,
    char_cost: f64,
}

impl CostState {
    fn new(alphabet_size: usize) -> Self {
        CostState {
            counts: BTreeMap::new(),
            tokens: 0,
            sum_xlogx: 0.0,
            lexicon: 0.0,
            char_cost: ((alphabet_size + 1) as f64).ln(),
        }
    }

    fn morph_cost(&self, m: &str) -> f64 {
        (m.chars().count() + 1) as f64 * self.char_cost
    }

    fn add(&mut self, m: &str, f: u64) {
        let c = self.counts.entry(m.to_string()).or_insert(0);
        let old = *c;
        *c += f;
        let new = *c;
        self.sum_xlogx += xlogx(new) - xlogx(old);
        self.tokens += f;
        if old == 0 {
            self.lexicon += self.morph_cost(m);
        }
    }

    fn remove(&mut self, m: &str, f: u64) {
        let c = self.counts.get_mut(m).expect("removing unknown morph");
        let old = *c;
        *c -= f;
        let new = *c;
        self.sum_xlogx += xlogx(new) - xlogx(old);
        self.tokens -= f;
        if new == 0 {
            self.counts.remove(m);
            self.lexicon -= self.morph_cost(m);
        }
    }

    fn corpus(&self) -> f64 {
        xlogx(self.tokens) - self.sum_xlogx
    }

    fn total(&self) -> f64 {
        self.corpus() + self.lexicon
    }

    /// Greedy recursive binary splitting of `s` with weight `f`; the chosen
    /// morphs are added to the state.
    fn resplit(&mut self, s: &str, f: u64) -> Vec<String> {
        let bounds: Vec<usize> = s.char_indices().map(|(i, _)| i).skip(1).collect();
        self.add(s, f);
        let mut best_cost = self.total();
        self.remove(s, f);
        let mut best = None;
        for &b in &bounds {
            let (pre, suf) = s.split_at(b);
            self.add(pre, f);
            self.add(suf, f);
            let c = self.total();
            self.remove(suf, f);
            self.remove(pre, f);
            if c < best_cost - 1e-9 {
                best_cost = c;
                best = Some(b);
            }
        }
        match best {
            None => {
                self.add(s, f);
                vec![s.to_string()]
            }
            Some(b) => {
                let (pre, suf) = s.split_at(b);
                let mut out = self.resplit(pre, f);
                out.extend(self.resplit(suf, f));
                out
            }
        }
    }
}

/// Cost of a complete analysis from scratch: `(corpus, lexicon)`.
pub fn mdl_cost<'a>(
    morph_counts: impl IntoIterator<Item = (&'a str, u64)>,
    alphabet_size: usize,
) -> (f64, f64) {
    let char_cost = ((alphabet_size + 1) as f64).ln();
    let mut n = 0u64;
    let mut s = 0.0;
    let mut lex = 0.0;
    for (m, c) in morph_counts {
        if c == 0 {
            continue;
        }
        n += c;
        s += xlogx(c);
        lex += (m.chars().count() + 1) as f64 * char_cost;
    }
    (xlogx(n) - s, lex)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphModel {
    lexicon: BTreeMap<String, u64>,
    analyses: BTreeMap<String, Vec<String>>,
    alphabet: BTreeSet<char>,
    pub corpus_cost: f64,
    pub lexicon_cost: f64,
    /// Total cost after initialization and after every pass.
    pub cost_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MorphSegmentation {
    pub morphs: Vec<String>,
    /// Some piece is not in the lexicon.
    pub contains_novel_unit: bool,
}

impl MorphModel {
    pub fn train(word_freqs: &BTreeMap<String, u64>, cfg: &MorphTrainConfig) -> Result<Self> {
        let words: Vec<(&str, u64)> = word_freqs
            .iter()
            .filter(|(w, &f)| !w.is_empty() && f > 0)
            .map(|(w, &f)| (w.as_str(), cfg.count_mode.weight(f)))
            .collect();
        if words.is_empty() {
            return Err(Error::Segmentation("morph training needs at least one word".into()));
        }
        let alphabet: BTreeSet<char> = words.iter().flat_map(|(w, _)| w.chars()).collect();
        let mut state = CostState::new(alphabet.len());
        let mut analyses: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for &(w, f) in &words {
            state.add(w, f);
            analyses.insert(w.to_string(), vec![w.to_string()]);
        }
        let mut history = vec![state.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<(&str, u64)> = words.clone();
        for _ in 0..cfg.max_passes {
            order.shuffle(&mut rng);
            for &(w, f) in &order {
                let old = analyses[w].clone();
                let before = state.total();
                for m in &old {
                    state.remove(m, f);
                }
                let new = state.resplit(w, f);
                if state.total() > before + 1e-9 {
                    for m in &new {
                        state.remove(m, f);
                    }
                    for m in &old {
                        state.add(m, f);
                    }
                } else {
                    analyses.insert(w.to_string(), new);
                }
            }
            let exact = mdl_cost(state.counts.iter().map(|(m, &c)| (m.as_str(), c)), alphabet.len());
            let total = exact.0 + exact.1;
            let prev = *history.last().expect("nonempty");
            history.push(total);
            if prev - total < cfg.min_improvement {
                break;
            }
        }
        let lexicon: BTreeMap<String, u64> = state.counts.into_iter().collect();
        let (corpus_cost, lexicon_cost) =
            mdl_cost(lexicon.iter().map(|(m, &c)| (m.as_str(), c)), alphabet.len());
        Ok(MorphModel {
            lexicon,
            analyses,
            alphabet,
            corpus_cost,
            lexicon_cost,
            cost_history: history,
        })
    }

    pub fn total_cost(&self) -> f64 {
        self.corpus_cost + self.lexicon_cost
    }

    pub fn lexicon(&self) -> &BTreeMap<String, u64> {
        &self.lexicon
    }

    pub fn morph_count(&self) -> usize {
        self.lexicon.len()
    }

    /// Analysis chosen for a training word type.
    pub fn analysis(&self, word: &str) -> Option<&[String]> {
        self.analyses.get(word).map(Vec::as_slice)
    }

    /// Viterbi segmentation under unigram morph probabilities. Characters
    /// that no lexicon morph covers become single-character pieces.
    pub fn segment_word(&self, word: &str) -> Result<MorphSegmentation> {
        if word.is_empty() {
            return Err(Error::Segmentation("cannot segment an empty word".into()));
        }
        let n_tokens: u64 = self.lexicon.values().sum();
        let log_n = (n_tokens.max(1) as f64).ln();
        let char_cost = ((self.alphabet.len() + 1) as f64).ln();
        // a one-character piece outside the lexicon is charged its lexicon
        // entry on top of a count-1 code, which exceeds any known morph
        let novel_cost = log_n + 2.0 * char_cost;
        let max_len = self.lexicon.keys().map(|m| m.chars().count()).max().unwrap_or(1);
        let offs: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let n = offs.len() - 1;
        let mut best = vec![f64::INFINITY; n + 1];
        let mut back = vec![(0usize, false); n + 1];
        best[0] = 0.0;
        for j in 1..=n {
            for i in j.saturating_sub(max_len)..j {
                if !best[i].is_finite() {
                    continue;
                }
                let piece = &word[offs[i]..offs[j]];
                if let Some(&c) = self.lexicon.get(piece) {
                    let cost = best[i] + log_n - (c as f64).ln();
                    if cost < best[j] {
                        best[j] = cost;
                        back[j] = (i, false);
                    }
                }
            }
            let cost = best[j - 1] + novel_cost;
            if cost < best[j] {
                best[j] = cost;
                back[j] = (j - 1, true);
            }
        }
        let mut morphs = Vec::new();
        let mut novel = false;
        let mut j = n;
        while j > 0 {
            let (i, is_novel) = back[j];
            morphs.push(word[offs[i]..offs[j]].to_string());
            novel |= is_novel;
            j = i;
        }
        morphs.reverse();
        Ok(MorphSegmentation {
            morphs,
            contains_novel_unit: novel,
        })
    }
}
