//! Diagnostics over trained or freshly assembled models.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use swlm_numcore::{ParamRegistry, Scalar, Tape, Tensor};

use crate::config::RunConfig;
use crate::corpus::{EncodedStream, UNK};
use crate::error::{Error, Result};
use crate::model::LanguageModel;
use crate::rnnlm::{Architecture, HeadKind};
use crate::segmentation::Encoded;
use crate::tying::{count_parameters, TyingReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Input,
    Output,
}

impl Side {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(Side::Input),
            "output" => Ok(Side::Output),
            _ => Err(Error::Config(format!("unknown side {s:?}"))),
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn row_f64<F: Scalar>(m: &Tensor<F>, r: usize) -> Vec<f64> {
    m.row(r).iter().map(|v| v.as_f64()).collect()
}

/// The `k` rows most similar to `query`, most similar first, skipping
/// `exclude`. Ties keep row order.
pub fn nearest_rows<F: Scalar>(matrix: &Tensor<F>, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut sims: Vec<(usize, f64)> = (0..matrix.rows())
        .filter(|&r| Some(r) != exclude)
        .map(|r| (r, cosine(query, &row_f64(matrix, r))))
        .collect();
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sims.truncate(k);
    sims
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub word: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub query: String,
    pub side: Side,
    pub in_vocabulary: bool,
    /// `"ok"`, or `"not available"` when the word cannot be built from
    /// known units.
    pub status: String,
    pub neighbors: Option<Vec<Neighbor>>,
}

/// Word vectors of the whole vocabulary: embedder outputs on the input
/// side, rows of the output matrix on the output side.
pub fn word_matrix(model: &LanguageModel, side: Side) -> Result<Tensor<f32>> {
    let seqs: Vec<&[usize]> = model.units().iter().map(Vec::as_slice).collect();
    let e = match side {
        Side::Input => &model.arch.input,
        Side::Output => &model.arch.output,
    };
    e.embed_values(&model.params, &seqs, 512)
}

pub fn nearest_neighbors(model: &LanguageModel, word: &str, side: Side, k: usize) -> Result<NeighborReport> {
    let matrix = word_matrix(model, side)?;
    let vocab = model.vocab();
    let (query, exclude) = match vocab.id(word) {
        Some(id) => (Some(row_f64(&matrix, id)), Some(id)),
        None if side == Side::Output => {
            return Err(Error::Data(format!("{word:?} is not in the output vocabulary")))
        }
        None => match &model.meta.subwords {
            None => (None, None),
            Some(sw) => match sw.encode_word(word)? {
                Encoded::NotAvailable { .. } => (None, None),
                Encoded::Units(u) => {
                    let mut tape = Tape::with_params(&model.params);
                    let v = model.arch.input.embed(&mut tape, &[&u])?;
                    (Some(row_f64(tape.value(v), 0)), None)
                }
            },
        },
    };
    let neighbors = query.map(|q| {
        nearest_rows(&matrix, &q, k, exclude)
            .into_iter()
            .map(|(r, s)| Neighbor {
                word: vocab.word(r).to_string(),
                similarity: s,
            })
            .collect()
    });
    Ok(NeighborReport {
        query: word.to_string(),
        side,
        status: if neighbors.is_some() { "ok" } else { "not available" }.to_string(),
        in_vocabulary: exclude.is_some(),
        neighbors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCurve {
    /// `(k, retained variance fraction)` for `k = 1..=d`.
    pub points: Vec<(usize, f64)>,
}

/// Fraction of variance retained by the top-`k` principal components of
/// the mean-centred rows.
pub fn pca_curve<F: Scalar>(matrix: &Tensor<F>) -> Result<VarianceCurve> {
    let (n, d) = (matrix.rows(), matrix.cols());
    if n < 2 || d == 0 {
        return Err(Error::Data("PCA needs at least two rows".into()));
    }
    let mut x = DMatrix::<f64>::from_fn(n, d, |r, c| matrix.at(r, c).as_f64());
    for c in 0..d {
        let mean = x.column(c).mean();
        x.column_mut(c).add_scalar_mut(-mean);
    }
    let cov = x.transpose() * &x;
    let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    let mut acc = 0.0;
    let points = eig
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            acc += v;
            let frac = if total > 0.0 { (acc / total).min(1.0) } else { 1.0 };
            (i + 1, frac)
        })
        .collect::<Vec<_>>();
    let mut points = points;
    if let Some(last) = points.last_mut() {
        last.1 = 1.0;
    }
    Ok(VarianceCurve { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub bandwidth: f64,
    pub xs: Vec<f64>,
    pub density: Vec<f64>,
    /// Trapezoidal integral of `density` over `xs`.
    pub integral: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule: `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, falling back
/// to whichever spread is non-zero, and to `1e-3` for constant samples.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return 1e-3,
    };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian kernel density on `grid` points spanning the samples padded by
/// six bandwidths on each side.
pub fn gaussian_kde(samples: &[f64], grid: usize) -> Result<Kde> {
    if samples.is_empty() {
        return Err(Error::Data("no samples for density estimation".into()));
    }
    if grid < 2 {
        return Err(Error::Config("KDE grid needs at least two points".into()));
    }
    let h = silverman_bandwidth(samples);
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 6.0 * h;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 6.0 * h;
    let step = (hi - lo) / (grid - 1) as f64;
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let xs: Vec<f64> = (0..grid).map(|i| lo + step * i as f64).collect();
    let density: Vec<f64> = xs
        .iter()
        .map(|&x| norm * samples.iter().map(|&s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    let integral = density.windows(2).map(|w| 0.5 * (w[0] + w[1]) * step).sum();
    Ok(Kde {
        bandwidth: h,
        xs,
        density,
        integral,
    })
}

/// All transform-gate coordinates of highway layer `layer` (1-based) for
/// the given words.
pub fn collect_gates<F: Scalar>(
    arch: &Architecture,
    params: &ParamRegistry<F>,
    units: &[Vec<usize>],
    words: &[usize],
    side: Side,
    layer: usize,
) -> Result<Vec<f64>> {
    let e = match side {
        Side::Input => &arch.input,
        Side::Output if arch.config.head == HeadKind::Subword => &arch.output,
        Side::Output => return Err(Error::Config("a word softmax head has no highway layers".into())),
    };
    if layer == 0 || layer > e.config.highway_layers {
        return Err(Error::Config(format!("no highway layer {layer}")));
    }
    if words.is_empty() {
        return Err(Error::Data("empty word sample".into()));
    }
    let mut out = Vec::new();
    for chunk in words.chunks(512) {
        let seqs: Vec<&[usize]> = chunk
            .iter()
            .map(|&w| units.get(w).map(Vec::as_slice).ok_or_else(|| Error::Data(format!("word {w} has no units"))))
            .collect::<Result<_>>()?;
        let mut tape = Tape::with_params(params);
        let mut trace = Vec::new();
        e.embed_traced(&mut tape, &seqs, Some(&mut trace))?;
        out.extend(tape.value(trace[layer - 1]).data().iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

pub fn gate_kde<F: Scalar>(
    arch: &Architecture,
    params: &ParamRegistry<F>,
    units: &[Vec<usize>],
    words: &[usize],
    side: Side,
) -> Result<Kde> {
    gaussian_kde(&collect_gates(arch, params, units, words, side, 1)?, 1001)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtrPoint {
    pub label: String,
    pub ttr: f64,
    pub delta_ppl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtrFit {
    /// Least-squares slope of a line through the origin.
    pub slope: f64,
    /// `None` when undefined (fewer than two points or zero variance).
    pub pearson_r: Option<f64>,
    pub points: usize,
}

/// Bundled perplexity-gain points (see the comment header of the file).
pub const TTR_FIXTURE: &str = include_str!("../data/ttr_points.csv");

/// Reads `label,data,tokens,types,word_ppl,morph_ppl` rows; `#` lines are
/// comments.
pub fn parse_ttr_points(text: &str) -> Result<Vec<TtrPoint>> {
    let mut out = Vec::new();
    let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Data("empty TTR file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Data(format!("TTR file lacks column {name}")))
    };
    let (label, tokens, types, word, morph) = (col("label")?, col("tokens")?, col("types")?, col("word_ppl")?, col("morph_ppl")?);
    for line in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(Error::Data(format!("bad TTR row {line:?}")));
        }
        let num = |i: usize| {
            f[i].parse::<f64>()
                .map_err(|_| Error::Data(format!("bad number {:?} in {line:?}", f[i])))
        };
        out.push(TtrPoint {
            label: f[label].to_string(),
            ttr: num(types)? / num(tokens)?,
            delta_ppl: num(word)? - num(morph)?,
        });
    }
    Ok(out)
}

pub fn load_ttr_points() -> Result<Vec<TtrPoint>> {
    parse_ttr_points(TTR_FIXTURE)
}

pub fn ttr_fit(points: &[TtrPoint]) -> Result<TtrFit> {
    if points.is_empty() {
        return Err(Error::Data("no TTR points".into()));
    }
    let sxx: f64 = points.iter().map(|p| p.ttr * p.ttr).sum();
    if sxx == 0.0 {
        return Err(Error::Data("all TTR values are zero".into()));
    }
    let sxy: f64 = points.iter().map(|p| p.ttr * p.delta_ppl).sum();
    let n = points.len() as f64;
    let pearson_r = (points.len() >= 2).then(|| {
        let mx = points.iter().map(|p| p.ttr).sum::<f64>() / n;
        let my = points.iter().map(|p| p.delta_ppl).sum::<f64>() / n;
        let cov: f64 = points.iter().map(|p| (p.ttr - mx) * (p.delta_ppl - my)).sum();
        let vx: f64 = points.iter().map(|p| (p.ttr - mx).powi(2)).sum();
        let vy: f64 = points.iter().map(|p| (p.delta_ppl - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    });
    Ok(TtrFit {
        slope: sxy / sxx,
        pearson_r: pearson_r.filter(|r| r.is_finite()),
        points: points.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OovReport {
    /// Test tokens whose word contains a unit unknown to the model.
    pub new_oov_tokens: usize,
    pub new_oov_types: usize,
    pub tokens: usize,
    /// Words the model can score: its own vocabulary plus embeddable new
    /// test words when the softmax is generated from subwords.
    pub eval_vocab_size: usize,
    pub ppl: f64,
}

/// Scores a foreign test stream. Words containing unknown units become
/// `<unk>` and are counted as new OOVs. With a subword softmax, other
/// unseen words are appended to the output vocabulary with the mean bias.
pub fn oov_transfer(model: &LanguageModel, tokens: &[String], batch_size: usize, steps: usize) -> Result<OovReport> {
    let vocab = model.vocab();
    let sw = model.meta.subwords.as_ref();
    let extend = sw.is_some() && model.arch.config.head == HeadKind::Subword;
    let mut new_oov = BTreeSet::new();
    let mut new_words: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for t in tokens {
        if vocab.id(t).is_some() || new_words.contains_key(t) || new_oov.contains(t) {
            continue;
        }
        match sw.map(|s| s.encode_word(t)).transpose()? {
            Some(Encoded::NotAvailable { .. }) => {
                new_oov.insert(t.clone());
            }
            Some(Encoded::Units(u)) if extend => {
                new_words.insert(t.clone(), u);
            }
            _ => {}
        }
    }
    let mut units = model.units().to_vec();
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    for (w, u) in &new_words {
        ids.insert(w.as_str(), units.len());
        units.push(u.clone());
    }
    let unk = vocab.unk();
    let mut new_oov_tokens = 0;
    let stream = EncodedStream {
        tokens: tokens
            .iter()
            .map(|t| {
                if new_oov.contains(t) {
                    new_oov_tokens += 1;
                }
                vocab.id(t).or_else(|| ids.get(t.as_str()).copied()).unwrap_or(unk)
            })
            .collect(),
    };
    let (arch, params) = if new_words.is_empty() {
        (model.arch.clone(), model.params.clone())
    } else {
        extend_vocabulary(&model.arch, &model.params, units.len())?
    };
    let r = arch.evaluate(&params, &units, &stream, batch_size, steps)?;
    debug_assert!(vocab.word(unk) == UNK);
    Ok(OovReport {
        new_oov_tokens,
        new_oov_types: new_oov.len(),
        tokens: stream.tokens.len(),
        eval_vocab_size: units.len(),
        ppl: r.ppl,
    })
}

/// Same model over a larger word vocabulary: every parameter is copied and
/// the bias of new words is the mean of the trained biases.
fn extend_vocabulary(
    arch: &Architecture,
    params: &ParamRegistry<f32>,
    vocab_size: usize,
) -> Result<(Architecture, ParamRegistry<f32>)> {
    let big = Architecture::new(arch.config.clone(), vocab_size)?;
    let mut reg = ParamRegistry::<f32>::zeros(big.layout().clone());
    let names: Vec<String> = big.layout().slots().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let old = params.value(&name)?;
        let new = reg.value_mut(&name)?;
        if name == "output.bias" {
            let mean = old.data().iter().sum::<f32>() / old.len() as f32;
            new.fill(mean);
            new.data_mut()[..old.len()].copy_from_slice(old.data());
        } else {
            new.data_mut().copy_from_slice(old.data());
        }
    }
    Ok((big, reg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub label: String,
    pub report: TyingReport,
    /// Unique parameters in millions, one decimal.
    pub millions: String,
}

/// Parameter counts for configurations given explicit vocabulary sizes.
pub fn param_report(rows: &[(String, RunConfig, usize, usize)]) -> Result<Vec<ParamRow>> {
    rows.iter()
        .map(|(label, run, words, subwords)| {
            let arch = Architecture::new(run.model_config(*words, *subwords)?, *words)?;
            let report = count_parameters(arch.layout(), arch.tied_layers.clone());
            Ok(ParamRow {
                label: label.clone(),
                millions: format!("{:.1}", report.unique_params as f64 / 1e6),
                report,
            })
        })
        .collect()
}
