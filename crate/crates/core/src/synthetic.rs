//! Seeded generator of a small English-like corpus with regular inflection
//! (plural `-s`, verbal `-s`/`-ed`/`-ing`) and number agreement.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    /// Token budgets (including one end-of-sentence per line).
    pub train_tokens: usize,
    pub valid_tokens: usize,
    pub test_tokens: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 2018,
            nouns: 70,
            verbs: 40,
            adjectives: 30,
            train_tokens: 50_000,
            valid_tokens: 5_000,
            test_tokens: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub train: String,
    pub valid: String,
    pub test: String,
}

const SG_DET: &[&str] = &["a", "every", "this"];
const PL_DET: &[&str] = &["many", "several", "these"];
const ANY_DET: &[&str] = &["the", "my", "our"];
const PREPS: &[&str] = &["on", "near", "with", "under", "behind"];
const CONJ: &[&str] = &["and", "but", "while"];
const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "t", "v", "z", "br", "tr", "pl", "st"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "oa", "ee"];
const CODAS: &[&str] = &["b", "d", "g", "k", "l", "m", "n", "p", "r", "t", "nd", "mp", "lk", "rt"];

struct Lexicon {
    nouns: Vec<String>,
    verbs: Vec<String>,
    adjectives: Vec<String>,
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

fn stems<R: Rng>(rng: &mut R, n: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(1..=2);
        let mut s = String::new();
        for _ in 0..syllables {
            s.push_str(pick(rng, ONSETS));
            s.push_str(pick(rng, VOWELS));
        }
        s.push_str(pick(rng, CODAS));
        if taken.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|r| 1.0 / ((r + 1) as f64).powf(0.8))).expect("positive weights")
}

struct Grammar {
    lex: Lexicon,
    noun_dist: WeightedIndex<f64>,
    verb_dist: WeightedIndex<f64>,
    adj_dist: WeightedIndex<f64>,
}

impl Grammar {
    fn noun_phrase<R: Rng>(&self, rng: &mut R, plural: bool, out: &mut Vec<String>) {
        let det = if rng.gen_bool(0.5) {
            pick(rng, ANY_DET)
        } else if plural {
            pick(rng, PL_DET)
        } else {
            pick(rng, SG_DET)
        };
        out.push(det.to_string());
        if rng.gen_bool(0.4) {
            out.push(self.lex.adjectives[self.adj_dist.sample(rng)].clone());
        }
        let noun = &self.lex.nouns[self.noun_dist.sample(rng)];
        out.push(if plural { format!("{noun}s") } else { noun.clone() });
    }

    fn clause<R: Rng>(&self, rng: &mut R, out: &mut Vec<String>) {
        let plural = rng.gen_bool(0.4);
        self.noun_phrase(rng, plural, out);
        let verb = &self.lex.verbs[self.verb_dist.sample(rng)];
        match rng.gen_range(0..3) {
            0 => out.push(if plural { verb.clone() } else { format!("{verb}s") }),
            1 => out.push(format!("{verb}ed")),
            _ => {
                out.push(if plural { "are" } else { "is" }.to_string());
                out.push(format!("{verb}ing"));
            }
        }
        if rng.gen_bool(0.6) {
            let p = rng.gen_bool(0.4);
            self.noun_phrase(rng, p, out);
        }
        if rng.gen_bool(0.3) {
            out.push(pick(rng, PREPS).to_string());
            let p = rng.gen_bool(0.4);
            self.noun_phrase(rng, p, out);
        }
    }

    fn sentence<R: Rng>(&self, rng: &mut R) -> Vec<String> {
        let mut out = Vec::new();
        self.clause(rng, &mut out);
        if rng.gen_bool(0.25) {
            out.push(pick(rng, CONJ).to_string());
            self.clause(rng, &mut out);
        }
        out
    }

    fn text<R: Rng>(&self, rng: &mut R, budget: usize) -> String {
        let mut text = String::new();
        let mut tokens = 0;
        while tokens < budget {
            let s = self.sentence(rng);
            tokens += s.len() + 1;
            text.push_str(&s.join(" "));
            text.push('\n');
        }
        text
    }
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken: BTreeSet<String> = SG_DET
        .iter()
        .chain(PL_DET)
        .chain(ANY_DET)
        .chain(PREPS)
        .chain(CONJ)
        .chain(&["is", "are"])
        .map(|s| s.to_string())
        .collect();
    let lex = Lexicon {
        nouns: stems(&mut rng, spec.nouns, &mut taken),
        verbs: stems(&mut rng, spec.verbs, &mut taken),
        adjectives: stems(&mut rng, spec.adjectives, &mut taken),
    };
    let g = Grammar {
        noun_dist: zipf(lex.nouns.len()),
        verb_dist: zipf(lex.verbs.len()),
        adj_dist: zipf(lex.adjectives.len()),
        lex,
    };
    SyntheticCorpus {
        train: g.text(&mut rng, spec.train_tokens),
        valid: g.text(&mut rng, spec.valid_tokens),
        test: g.text(&mut rng, spec.test_tokens),
    }
}
