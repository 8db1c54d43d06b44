//! Stacked LSTM language model with a word-level or subword-generated
//! softmax head.
//!
//! Activations are laid out time-major: row `t * B + b` holds lane `b` at
//! step `t`.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use swlm_numcore::{InitRule, ParamLayout, ParamRegistry, Scalar, Tape, Tensor, Var};

use crate::corpus::{batchify_with_tail, BatchView, EncodedStream};
use crate::embedders::{Embedder, EmbedderConfig, EmbedderKind, WordVectorCache};
use crate::error::{Error, Result};
use crate::tying::{apply_tying, ReuseMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Free output table `[V x d_lm]`.
    Word,
    /// Output rows generated by an output-side embedder over the vocabulary.
    Subword,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedder: EmbedderConfig,
    pub head: HeadKind,
    pub reuse: ReuseMode,
    pub d_lm: usize,
    pub lstm_layers: usize,
}

/// Structure of a model for a given vocabulary size, with tying applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub input: Embedder,
    pub output: Embedder,
    pub tied_layers: Vec<String>,
    layout: ParamLayout,
}

fn lstm_slot(layer: usize, what: &str) -> String {
    format!("lstm{layer}.{what}")
}

const BIAS: &str = "output.bias";
const HEAD_PROJ: &str = "output.proj";

impl Architecture {
    pub fn new(config: ModelConfig, vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 || config.d_lm == 0 || config.lstm_layers == 0 {
            return Err(Error::Config("vocabulary, d_lm and lstm_layers must be positive".into()));
        }
        let is_word = config.embedder.kind == EmbedderKind::Word;
        if is_word && config.embedder.units != vocab_size {
            return Err(Error::Config(format!(
                "word embedder has {} rows for a vocabulary of {vocab_size}",
                config.embedder.units
            )));
        }
        let input = Embedder::new(config.embedder.clone(), "input")?;
        let output = match config.head {
            HeadKind::Word => Embedder::new(
                EmbedderConfig {
                    kind: EmbedderKind::Word,
                    units: vocab_size,
                    d_s: config.d_lm,
                    d_hw: config.d_lm,
                    highway_layers: 0,
                },
                "output",
            )?,
            HeadKind::Subword if is_word => {
                return Err(Error::Config("a word embedder needs the word softmax head".into()))
            }
            HeadKind::Subword => Embedder::new(config.embedder.clone(), "output")?,
        };

        let mut layout = ParamLayout::new();
        input.declare(&mut layout)?;
        let d = config.d_lm;
        for l in 1..=config.lstm_layers {
            let d_in = if l == 1 { input.out_dim() } else { d };
            layout.declare(&lstm_slot(l, "input_weights"), &[d_in, 4 * d], InitRule::Uniform)?;
            layout.declare(&lstm_slot(l, "recurrent_weights"), &[d, 4 * d], InitRule::Uniform)?;
            layout.declare(
                &lstm_slot(l, "bias"),
                &[4 * d],
                InitRule::LstmBias { hidden: d, forget: 1.0 },
            )?;
        }
        output.declare(&mut layout)?;
        layout.declare(BIAS, &[vocab_size], InitRule::Uniform)?;
        if output.out_dim() != d {
            layout.declare(HEAD_PROJ, &[d, output.out_dim()], InitRule::Uniform)?;
        }

        let in_layers = input.layers();
        let mask = config.reuse.mask(in_layers.len())?;
        let tied_layers = if mask.iter().any(|&m| m) {
            if config.head == HeadKind::Word && !is_word {
                return Err(Error::Config(
                    "reuse needs a subword softmax head when the input is subword-based".into(),
                ));
            }
            if is_word && input.out_dim() != d {
                return Err(Error::Config("tying word embeddings needs d_w = d_lm".into()));
            }
            apply_tying(&mut layout, "input", "output", &in_layers, &output.layers(), &mask)?
        } else {
            Vec::new()
        };
        Ok(Architecture {
            config,
            vocab_size,
            input,
            output,
            tied_layers,
            layout,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn d_lm(&self) -> usize {
        self.config.d_lm
    }

    pub fn layers(&self) -> usize {
        self.config.lstm_layers
    }

    /// Every output-side layer shares its storage with the input side.
    pub fn fully_tied(&self) -> bool {
        self.tied_layers.len() == self.input.layers().len()
    }

    pub fn has_head_projection(&self) -> bool {
        self.layout.contains(HEAD_PROJ)
    }

    pub fn init_params<F: Scalar, R: Rng>(&self, rng: &mut R, range: f64) -> ParamRegistry<F> {
        let mut reg = ParamRegistry::zeros(self.layout.clone());
        reg.initialize(rng, range);
        reg
    }

    fn lstm_input_dim(&self, layer: usize) -> usize {
        if layer == 1 {
            self.input.out_dim()
        } else {
            self.d_lm()
        }
    }

    /// Output-side rows for `words` (all words when `None`).
    pub fn output_rows<F: Scalar>(
        &self,
        tape: &mut Tape<'_, F>,
        units: &[Vec<usize>],
        words: Option<&[usize]>,
    ) -> Result<Var> {
        match (self.config.head, words) {
            (HeadKind::Word, None) => Ok(tape.param("output.emb.table")?),
            (HeadKind::Word, Some(ws)) => {
                let t = tape.param("output.emb.table")?;
                Ok(tape.gather_rows(t, ws)?)
            }
            (HeadKind::Subword, None) => {
                let seqs: Vec<&[usize]> = units.iter().map(Vec::as_slice).collect();
                self.output.embed(tape, &seqs)
            }
            (HeadKind::Subword, Some(ws)) => {
                let seqs = word_units(units, ws)?;
                self.output.embed(tape, &seqs)
            }
        }
    }

    /// Input vectors for each listed word.
    pub fn input_rows<F: Scalar>(
        &self,
        tape: &mut Tape<'_, F>,
        units: &[Vec<usize>],
        words: &[usize],
    ) -> Result<Var> {
        let seqs = word_units(units, words)?;
        self.input.embed(tape, &seqs)
    }

    /// Runs the LSTM stack over one window. `embedded` gives the source of
    /// input vectors: `None` embeds the distinct words of the window,
    /// `Some(m)` gathers rows of a precomputed `[V x d]` matrix.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<'_, F>,
        units: &[Vec<usize>],
        inputs: &[Vec<usize>],
        state: &LmState<F>,
        masks: Option<&DropoutMasks<F>>,
        embedded: Option<Var>,
    ) -> Result<(Var, LmState<F>)> {
        let b = inputs.len();
        let steps = inputs.first().map_or(0, Vec::len);
        if b == 0 || steps == 0 || inputs.iter().any(|l| l.len() != steps) {
            return Err(Error::Data("inputs must be a non-empty rectangle".into()));
        }
        if state.batch_size() != b || state.h.len() != self.layers() {
            return Err(Error::Data(format!(
                "state has {} lanes and {} layers, batch has {b} lanes",
                state.batch_size(),
                state.h.len()
            )));
        }
        let flat: Vec<usize> = (0..steps).flat_map(|t| inputs.iter().map(move |l| l[t])).collect();
        let mut x = match embedded {
            Some(m) => tape.gather_rows(m, &flat)?,
            None => {
                let distinct: Vec<usize> = flat.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
                let pos: HashMap<usize, usize> = distinct.iter().enumerate().map(|(i, &w)| (w, i)).collect();
                let rows = self.input_rows(tape, units, &distinct)?;
                let idx: Vec<usize> = flat.iter().map(|w| pos[w]).collect();
                tape.gather_rows(rows, &idx)?
            }
        };
        let d = self.d_lm();
        let mut next = LmState { h: Vec::new(), c: Vec::new() };
        for l in 1..=self.layers() {
            if let Some(m) = masks {
                x = tape.dropout(x, &tile(&m.inputs[l - 1], steps), m.rate)?;
            }
            let wx = tape.param(&lstm_slot(l, "input_weights"))?;
            let wh = tape.param(&lstm_slot(l, "recurrent_weights"))?;
            let bias = tape.param(&lstm_slot(l, "bias"))?;
            let xw = tape.matmul(x, wx)?;
            let xw = tape.add_row(xw, bias)?;
            let mut h = tape.constant(state.h[l - 1].clone());
            let mut c = tape.constant(state.c[l - 1].clone());
            let mut outs = Vec::with_capacity(steps);
            for t in 0..steps {
                let xt = tape.slice_rows(xw, t * b, b)?;
                let hr = match masks {
                    Some(m) => tape.dropout(h, &m.recurrent[l - 1], m.rate)?,
                    None => h,
                };
                let hw = tape.matmul(hr, wh)?;
                let g = tape.add(xt, hw)?;
                let gi = tape.slice_cols(g, 0, d)?;
                let gf = tape.slice_cols(g, d, d)?;
                let gg = tape.slice_cols(g, 2 * d, d)?;
                let go = tape.slice_cols(g, 3 * d, d)?;
                let i = tape.sigmoid(gi)?;
                let f = tape.sigmoid(gf)?;
                let cand = tape.tanh(gg)?;
                let o = tape.sigmoid(go)?;
                let keep = tape.mul(f, c)?;
                let write = tape.mul(i, cand)?;
                c = tape.add(keep, write)?;
                let tc = tape.tanh(c)?;
                h = tape.mul(o, tc)?;
                outs.push(h);
            }
            next.h.push(tape.value(h).clone());
            next.c.push(tape.value(c).clone());
            x = tape.concat_rows(&outs)?;
        }
        if let Some(m) = masks {
            x = tape.dropout(x, &tile(&m.output, steps), m.rate)?;
        }
        Ok((x, next))
    }

    /// Maps LSTM outputs to the width of the output rows.
    pub fn head_input<F: Scalar>(&self, tape: &mut Tape<'_, F>, hidden: Var) -> Result<Var> {
        if self.has_head_projection() {
            let p = tape.param(HEAD_PROJ)?;
            Ok(tape.matmul(hidden, p)?)
        } else {
            Ok(hidden)
        }
    }

    /// `h E^T + b` over all words.
    pub fn logits<F: Scalar>(&self, tape: &mut Tape<'_, F>, hidden: Var, rows: Var) -> Result<Var> {
        let h = self.head_input(tape, hidden)?;
        let z = tape.matmul_nt(h, rows)?;
        let b = tape.param(BIAS)?;
        Ok(tape.add_row(z, b)?)
    }

    /// Mean NLL of a window under the full softmax.
    pub fn loss<F: Scalar>(
        &self,
        tape: &mut Tape<'_, F>,
        units: &[Vec<usize>],
        batch: &BatchView,
        state: &LmState<F>,
        masks: Option<&DropoutMasks<F>>,
    ) -> Result<(Var, LmState<F>)> {
        let rows = self.output_rows(tape, units, None)?;
        let shared = (self.config.head == HeadKind::Subword && self.fully_tied()).then_some(rows);
        let (h, next) = self.forward(tape, units, &batch.inputs, state, masks, shared)?;
        let z = self.logits(tape, h, rows)?;
        let loss = tape.softmax_cross_entropy(z, &time_major(&batch.targets))?;
        Ok((loss, next))
    }

    /// Sampled-softmax estimate of the mean NLL of a window. Only the
    /// candidate rows of the output matrix are built.
    #[allow(clippy::too_many_arguments)]
    pub fn sampled_loss<F: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<'_, F>,
        units: &[Vec<usize>],
        batch: &BatchView,
        state: &LmState<F>,
        masks: Option<&DropoutMasks<F>>,
        sampler: &NegativeSampler,
        rng: &mut R,
    ) -> Result<(Var, LmState<F>)> {
        let targets = time_major(&batch.targets);
        let cand = sampler.draw(&targets, rng)?;
        let (h, next) = self.forward(tape, units, &batch.inputs, state, masks, None)?;
        let rows = self.output_rows(tape, units, Some(&cand.classes))?;
        let h = self.head_input(tape, h)?;
        let z = tape.matmul_nt(h, rows)?;
        let bias = tape.param(BIAS)?;
        let col = tape.reshape(bias, &[self.vocab_size, 1])?;
        let picked = tape.gather_rows(col, &cand.classes)?;
        let picked = tape.reshape(picked, &[cand.classes.len()])?;
        let correction = Tensor::from_vec(
            &[cand.classes.len()],
            cand.log_q.iter().map(|&q| F::from_f64_lossy(-q)).collect(),
        )?;
        let correction = tape.constant(correction);
        let shift = tape.add(picked, correction)?;
        let z = tape.add_row(z, shift)?;
        let loss = tape.softmax_cross_entropy(z, &cand.target_index)?;
        Ok((loss, next))
    }

    /// Summed NLL over a stream with dropout off, state carried across
    /// windows, and input/output matrices computed once.
    pub fn evaluate<F: Scalar>(
        &self,
        params: &ParamRegistry<F>,
        units: &[Vec<usize>],
        stream: &EncodedStream,
        batch_size: usize,
        steps: usize,
    ) -> Result<EvalResult> {
        let mut caches = EvalCaches::default();
        self.evaluate_cached(params, units, stream, batch_size, steps, &mut caches)
    }

    pub fn evaluate_cached<F: Scalar>(
        &self,
        params: &ParamRegistry<F>,
        units: &[Vec<usize>],
        stream: &EncodedStream,
        batch_size: usize,
        steps: usize,
        caches: &mut EvalCaches<F>,
    ) -> Result<EvalResult> {
        caches.refresh(self, params, units)?;
        let input = caches.input.matrix().expect("refreshed");
        let output = caches.output.matrix().expect("refreshed");
        let mut state = LmState::zeros(self, batch_size);
        let mut nll = 0.0;
        let mut tokens = 0;
        for batch in batchify_with_tail(stream, batch_size, steps)? {
            let mut tape = Tape::with_params(params);
            let emb = tape.constant_ref(input);
            let rows = tape.constant_ref(output);
            let (h, next) = self.forward(&mut tape, units, &batch.inputs, &state, None, Some(emb))?;
            let z = self.logits(&mut tape, h, rows)?;
            let targets = time_major(&batch.targets);
            let loss = tape.softmax_cross_entropy(z, &targets)?;
            nll += tape.value(loss).data()[0].as_f64() * targets.len() as f64;
            tokens += targets.len();
            state = next;
        }
        if tokens == 0 {
            return Err(Error::Data("nothing to evaluate".into()));
        }
        Ok(EvalResult {
            nll,
            tokens,
            ppl: (nll / tokens as f64).exp(),
        })
    }
}

fn word_units<'a>(units: &'a [Vec<usize>], words: &[usize]) -> Result<Vec<&'a [usize]>> {
    words
        .iter()
        .map(|&w| {
            units
                .get(w)
                .map(Vec::as_slice)
                .ok_or_else(|| Error::Data(format!("word {w} has no units")))
        })
        .collect()
}

/// `targets[b][t]` flattened to row order `t * B + b`.
pub fn time_major(lanes: &[Vec<usize>]) -> Vec<usize> {
    let steps = lanes.first().map_or(0, Vec::len);
    (0..steps).flat_map(|t| lanes.iter().map(move |l| l[t])).collect()
}

/// Unit sequence `[w]` for each word of a word-level model.
pub fn identity_units(vocab_size: usize) -> Vec<Vec<usize>> {
    (0..vocab_size).map(|w| vec![w]).collect()
}

fn tile<F: Scalar>(mask: &Tensor<F>, times: usize) -> Tensor<F> {
    let mut data = Vec::with_capacity(mask.len() * times);
    for _ in 0..times {
        data.extend_from_slice(mask.data());
    }
    Tensor::from_vec(&[mask.rows() * times, mask.cols()], data).expect("shape matches data")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub nll: f64,
    pub tokens: usize,
    pub ppl: f64,
}

/// Frozen input and output word matrices reused across evaluation calls
/// while the parameters are unchanged.
#[derive(Debug, Clone, Default)]
pub struct EvalCaches<F: Scalar> {
    pub input: WordVectorCache<F>,
    pub output: WordVectorCache<F>,
}

impl<F: Scalar> EvalCaches<F> {
    pub fn refresh(&mut self, arch: &Architecture, params: &ParamRegistry<F>, units: &[Vec<usize>]) -> Result<()> {
        if units.len() != arch.vocab_size {
            return Err(Error::Data(format!(
                "{} unit sequences for a vocabulary of {}",
                units.len(),
                arch.vocab_size
            )));
        }
        let seqs: Vec<&[usize]> = units.iter().map(Vec::as_slice).collect();
        self.input.get(&arch.input, params, &seqs)?;
        self.output.get(&arch.output, params, &seqs)?;
        Ok(())
    }
}

/// Per-layer recurrent state, `[B x d_lm]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LmState<F> {
    pub h: Vec<Tensor<F>>,
    pub c: Vec<Tensor<F>>,
}

impl<F: Scalar> LmState<F> {
    pub fn zeros(arch: &Architecture, batch_size: usize) -> Self {
        let z = || Tensor::zeros(&[batch_size, arch.d_lm()]);
        LmState {
            h: (0..arch.layers()).map(|_| z()).collect(),
            c: (0..arch.layers()).map(|_| z()).collect(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.h.first().map_or(0, Tensor::rows)
    }
}

/// Binary keep-masks held fixed over the time steps of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<F> {
    pub rate: F,
    /// Per LSTM layer, on its input, `[B x d_in]`.
    pub inputs: Vec<Tensor<F>>,
    /// Per LSTM layer, on the previous hidden state feeding the recurrent
    /// weights, `[B x d_lm]`.
    pub recurrent: Vec<Tensor<F>>,
    /// On the top LSTM output, `[B x d_lm]`.
    pub output: Tensor<F>,
}

impl<F: Scalar> DropoutMasks<F> {
    pub fn sample<R: Rng>(arch: &Architecture, batch_size: usize, rate: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        let mut draw = |cols: usize| {
            let data = (0..batch_size * cols)
                .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { F::one() })
                .collect();
            Tensor::from_vec(&[batch_size, cols], data).expect("shape matches data")
        };
        let inputs = (1..=arch.layers()).map(|l| draw(arch.lstm_input_dim(l))).collect();
        let recurrent = (1..=arch.layers()).map(|_| draw(arch.d_lm())).collect();
        let output = draw(arch.d_lm());
        Ok(DropoutMasks {
            rate: F::from_f64_lossy(rate),
            inputs,
            recurrent,
            output,
        })
    }
}

/// Candidate classes of one sampled-softmax step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCandidates {
    /// Distinct targets first (ascending), then negatives.
    pub classes: Vec<usize>,
    /// Log expected inclusion count per class; 0 for targets.
    pub log_q: Vec<f64>,
    /// Position of each target in `classes`.
    pub target_index: Vec<usize>,
}

/// Draws negatives without replacement from a log-uniform distribution
/// over word ranks (ids are rank-ordered by frequency).
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSampler {
    vocab_size: usize,
    negatives: usize,
    weights: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(vocab_size: usize, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!("sample fraction {fraction} not in (0, 1)")));
        }
        if vocab_size == 0 {
            return Err(Error::Config("empty vocabulary".into()));
        }
        let norm = ((vocab_size + 1) as f64).ln();
        let weights = (0..vocab_size)
            .map(|r| ((r + 2) as f64 / (r + 1) as f64).ln() / norm)
            .collect();
        Ok(NegativeSampler {
            vocab_size,
            negatives: ((fraction * vocab_size as f64).round() as usize).max(1),
            weights,
        })
    }

    pub fn negatives(&self) -> usize {
        self.negatives
    }

    pub fn draw<R: Rng>(&self, targets: &[usize], rng: &mut R) -> Result<SampledCandidates> {
        if let Some(&t) = targets.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::Data(format!("target {t} outside vocabulary of {}", self.vocab_size)));
        }
        let distinct: BTreeSet<usize> = targets.iter().copied().collect();
        let mut classes: Vec<usize> = distinct.iter().copied().collect();
        let mut log_q = vec![0.0; classes.len()];
        let pool: Vec<usize> = (0..self.vocab_size).filter(|c| !distinct.contains(c)).collect();
        if self.negatives >= pool.len() {
            log_q.extend(std::iter::repeat(0.0).take(pool.len()));
            classes.extend(pool);
        } else {
            let n = self.negatives;
            let mass: f64 = pool.iter().map(|&c| self.weights[c]).sum();
            let p: Vec<f64> = pool.iter().map(|&c| self.weights[c] / mass).collect();
            // Efraimidis-Spirakis: the n largest ln(u) / w form a weighted
            // sample without replacement
            let mut keyed: Vec<(f64, usize)> = pool
                .iter()
                .zip(&p)
                .map(|(&c, &w)| (rng.gen::<f64>().max(f64::MIN_POSITIVE).ln() / w, c))
                .collect();
            keyed.select_nth_unstable_by(n - 1, |a, b| b.0.total_cmp(&a.0));
            let mut chosen: Vec<usize> = keyed[..n].iter().map(|&(_, c)| c).collect();
            chosen.sort_unstable();
            let trials = inclusion_trials(&p, n);
            let p_of: HashMap<usize, f64> = pool.iter().copied().zip(p.iter().copied()).collect();
            for c in chosen {
                let q = 1.0 - (1.0 - p_of[&c]).powf(trials);
                log_q.push(q.max(f64::MIN_POSITIVE).ln());
                classes.push(c);
            }
        }
        let pos: HashMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Ok(SampledCandidates {
            target_index: targets.iter().map(|t| pos[t]).collect(),
            classes,
            log_q,
        })
    }
}

/// `T` such that `sum_c 1 - (1 - p_c)^T = n`, so that the per-class
/// inclusion probabilities of a without-replacement sample sum to `n`.
fn inclusion_trials(p: &[f64], n: usize) -> f64 {
    let total = |t: f64| p.iter().map(|&pc| 1.0 - (1.0 - pc).powf(t)).sum::<f64>();
    let target = n as f64;
    let mut lo = target;
    let mut hi = target.max(1.0) * 2.0;
    while total(hi) < target && hi < 1e300 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
