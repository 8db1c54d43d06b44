//! Liang's hyphenation algorithm over TeX-format pattern files.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

const ENGLISH: &str = include_str!("../../data/hyph-en-us.tex");

#[derive(Debug, Clone, PartialEq)]
pub struct HyphenationPatterns {
    /// Letter string (with `.` marking word boundaries) to interletter weights.
    patterns: HashMap<String, Vec<u8>>,
    exceptions: HashMap<String, Vec<usize>>,
    max_len: usize,
    pub left_min: usize,
    pub right_min: usize,
}

fn lower(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

/// Splits `a1b2c` into (`abc`, `[0,1,2,0]`).
fn parse_pattern(p: &str) -> Result<(String, Vec<u8>)> {
    let mut letters = String::new();
    let mut weights = vec![0u8];
    for ch in p.chars() {
        if let Some(d) = ch.to_digit(10) {
            *weights.last_mut().expect("nonempty") = d as u8;
        } else {
            letters.push(ch);
            weights.push(0);
        }
    }
    if letters.is_empty() {
        return Err(Error::Segmentation(format!("pattern {p:?} has no letters")));
    }
    Ok((letters, weights))
}

impl HyphenationPatterns {
    /// Bundled American English patterns, `left_min` 2 and `right_min` 3.
    pub fn english() -> Self {
        Self::parse_tex(ENGLISH, 2, 3).expect("bundled patterns are valid")
    }

    pub fn load(path: &Path, left_min: usize, right_min: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tex(&text, left_min, right_min)
    }

    /// Parses `\patterns{...}` and `\hyphenation{...}` groups. A file without
    /// any group is read as one pattern per whitespace-separated token.
    /// `%` starts a comment.
    pub fn parse_tex(text: &str, left_min: usize, right_min: usize) -> Result<Self> {
        if left_min == 0 || right_min == 0 {
            return Err(Error::Segmentation("left_min and right_min must be >= 1".into()));
        }
        let mut patterns = HashMap::new();
        let mut exceptions = HashMap::new();
        let has_groups = text.contains("\\patterns") || text.contains("\\hyphenation");
        let mut mode = if has_groups { None } else { Some(false) };
        for raw in text.lines() {
            let line = raw.split('%').next().unwrap_or("");
            for tok in line.split_whitespace() {
                let mut tok = tok;
                if let Some(rest) = tok.strip_prefix("\\patterns{") {
                    mode = Some(false);
                    tok = rest;
                } else if let Some(rest) = tok.strip_prefix("\\hyphenation{") {
                    mode = Some(true);
                    tok = rest;
                }
                let closes = tok.ends_with('}');
                let tok = tok.trim_end_matches('}');
                match mode {
                    Some(false) if !tok.is_empty() => {
                        let (letters, weights) = parse_pattern(tok)?;
                        patterns.insert(letters, weights);
                    }
                    Some(true) if !tok.is_empty() => {
                        let mut word = String::new();
                        let mut points = Vec::new();
                        for ch in tok.chars() {
                            if ch == '-' {
                                points.push(word.chars().count());
                            } else {
                                word.push(lower(ch));
                            }
                        }
                        exceptions.insert(word, points);
                    }
                    _ => {}
                }
                if closes && has_groups {
                    mode = None;
                }
            }
        }
        if patterns.is_empty() {
            return Err(Error::Segmentation("no hyphenation patterns found".into()));
        }
        let max_len = patterns.keys().map(|k: &String| k.chars().count()).max().unwrap_or(0);
        Ok(HyphenationPatterns {
            patterns,
            exceptions,
            max_len,
            left_min,
            right_min,
        })
    }

    pub fn pattern_count(&self) -> usize {
        self.patterns.len()
    }

    /// Char offsets where the word may be split, ascending.
    pub fn split_points(&self, word: &str) -> Vec<usize> {
        let lowered: Vec<char> = word.chars().map(lower).collect();
        let n = lowered.len();
        if n < self.left_min + self.right_min {
            return Vec::new();
        }
        let allowed = |p: usize| p >= self.left_min && p + self.right_min <= n;
        let key: String = lowered.iter().collect();
        if let Some(points) = self.exceptions.get(&key) {
            return points.iter().copied().filter(|&p| allowed(p)).collect();
        }
        let mut dotted = Vec::with_capacity(n + 2);
        dotted.push('.');
        dotted.extend_from_slice(&lowered);
        dotted.push('.');
        let mut weights = vec![0u8; dotted.len() + 1];
        let mut buf = String::new();
        for i in 0..dotted.len() {
            buf.clear();
            for j in i..dotted.len().min(i + self.max_len) {
                buf.push(dotted[j]);
                if let Some(p) = self.patterns.get(&buf) {
                    for (k, &v) in p.iter().enumerate() {
                        weights[i + k] = weights[i + k].max(v);
                    }
                }
            }
        }
        // weights[q] sits before dotted[q]; word offset p corresponds to q = p + 1
        (1..n)
            .filter(|&p| weights[p + 1] % 2 == 1 && allowed(p))
            .collect()
    }

    /// Syllables whose concatenation is `word`.
    pub fn syllabify(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        for p in self.split_points(word) {
            out.push(chars[start..p].iter().collect());
            start = p;
        }
        out.push(chars[start..].iter().collect());
        out
    }
}
