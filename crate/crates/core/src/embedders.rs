//! Word embedders built from subword units: CharCNN, SylConcat, MorphSum,
//! plus the plain lookup table used by word-level models.
//!
//! Every embedder exposes an ordered, bottom-up layer list. Layer 0 is
//! always the unit embedding table.

use serde::{Deserialize, Serialize};
use swlm_numcore::{InitRule, ParamLayout, ParamRegistry, Scalar, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::tying::Layer;

/// Unit id reserved for padding in every subword vocabulary.
pub const PAD_UNIT: usize = 0;

/// Highway transform bias at initialization.
pub const HIGHWAY_GATE_BIAS: f64 = -2.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharCnnConfig {
    pub char_dim: usize,
    pub widths: Vec<usize>,
    pub maps: Vec<usize>,
}

impl CharCnnConfig {
    /// Widths 1..=6 with `25 * w` maps.
    pub fn small() -> Self {
        CharCnnConfig {
            char_dim: 15,
            widths: (1..=6).collect(),
            maps: (1..=6).map(|w| 25 * w).collect(),
        }
    }

    /// Widths 1..=6 with `min(200, 50 * w)` maps.
    pub fn medium() -> Self {
        CharCnnConfig {
            char_dim: 15,
            widths: (1..=6).collect(),
            maps: (1..=6).map(|w| (50 * w).min(200)).collect(),
        }
    }

    pub fn feature_count(&self) -> usize {
        self.maps.iter().sum()
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EmbedderKind {
    /// One row per word; no composition and no highway layers.
    Word,
    MorphSum,
    SylConcat { slots: usize },
    CharCnn(CharCnnConfig),
}

impl EmbedderKind {
    pub fn name(&self) -> &'static str {
        match self {
            EmbedderKind::Word => "word",
            EmbedderKind::MorphSum => "morphsum",
            EmbedderKind::SylConcat { .. } => "sylconcat",
            EmbedderKind::CharCnn(_) => "charcnn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    /// Rows of the embedding table: subword units, or words for `Word`.
    pub units: usize,
    /// Width of one table row.
    pub d_s: usize,
    /// Output width.
    pub d_hw: usize,
    pub highway_layers: usize,
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.units == 0 || self.d_s == 0 || self.d_hw == 0 {
            return bad("embedder dimensions must be positive".into());
        }
        match &self.kind {
            EmbedderKind::Word => {
                if self.highway_layers != 0 || self.d_s != self.d_hw {
                    return bad("word embedder has no highway layers and d_s = d_hw".into());
                }
            }
            EmbedderKind::MorphSum => {
                if self.d_s != self.d_hw {
                    return bad(format!("morphsum needs d_s = d_hw, got {} and {}", self.d_s, self.d_hw));
                }
            }
            EmbedderKind::SylConcat { slots } => {
                if *slots == 0 || slots * self.d_s != self.d_hw {
                    return bad(format!(
                        "sylconcat needs slots * d_s = d_hw, got {slots} * {} vs {}",
                        self.d_s, self.d_hw
                    ));
                }
            }
            EmbedderKind::CharCnn(c) => {
                if c.widths.is_empty()
                    || c.widths.len() != c.maps.len()
                    || c.widths.contains(&0)
                    || c.maps.contains(&0)
                {
                    return bad("charcnn needs one positive map count per positive width".into());
                }
                if c.char_dim != self.d_s {
                    return bad("charcnn char_dim must equal d_s".into());
                }
            }
        }
        Ok(())
    }

    /// Whether a CharCNN needs a projection from pooled features to `d_hw`.
    pub fn has_projection(&self) -> bool {
        matches!(&self.kind, EmbedderKind::CharCnn(c) if c.feature_count() != self.d_hw)
    }
}

/// One side (input or output) of the model's word representation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embedder {
    pub config: EmbedderConfig,
    pub prefix: String,
}

/// Per-word highway transform gates, one `[N x d_hw]` node per layer.
pub type GateTrace = Vec<Var>;

impl Embedder {
    pub fn new(config: EmbedderConfig, prefix: &str) -> Result<Self> {
        config.validate()?;
        Ok(Embedder {
            config,
            prefix: prefix.to_string(),
        })
    }

    pub fn out_dim(&self) -> usize {
        self.config.d_hw
    }

    fn slot(&self, rel: &str) -> String {
        format!("{}.{rel}", self.prefix)
    }

    pub fn layers(&self) -> Vec<Layer> {
        let c = &self.config;
        let mut layers = vec![Layer {
            name: "emb".into(),
            slots: vec!["emb.table".into()],
        }];
        if let EmbedderKind::CharCnn(cnn) = &c.kind {
            let mut slots: Vec<String> = cnn
                .widths
                .iter()
                .flat_map(|w| [format!("cnn.w{w}.kernel"), format!("cnn.w{w}.bias")])
                .collect();
            if c.has_projection() {
                slots.push("cnn.proj".into());
            }
            layers.push(Layer { name: "cnn".into(), slots });
        }
        for k in 1..=c.highway_layers {
            layers.push(Layer {
                name: format!("hw{k}"),
                slots: ["W", "c", "A", "b"].iter().map(|p| format!("hw{k}.{p}")).collect(),
            });
        }
        layers
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers().into_iter().map(|l| l.name).collect()
    }

    pub fn declare(&self, layout: &mut ParamLayout) -> Result<()> {
        let c = &self.config;
        layout.declare(&self.slot("emb.table"), &[c.units, c.d_s], InitRule::Uniform)?;
        if let EmbedderKind::CharCnn(cnn) = &c.kind {
            for (&w, &m) in cnn.widths.iter().zip(&cnn.maps) {
                layout.declare(
                    &self.slot(&format!("cnn.w{w}.kernel")),
                    &[w * cnn.char_dim, m],
                    InitRule::Uniform,
                )?;
                layout.declare(&self.slot(&format!("cnn.w{w}.bias")), &[m], InitRule::Uniform)?;
            }
            if c.has_projection() {
                layout.declare(
                    &self.slot("cnn.proj"),
                    &[cnn.feature_count(), c.d_hw],
                    InitRule::Uniform,
                )?;
            }
        }
        let d = c.d_hw;
        for k in 1..=c.highway_layers {
            layout.declare(&self.slot(&format!("hw{k}.W")), &[d, d], InitRule::Uniform)?;
            layout.declare(
                &self.slot(&format!("hw{k}.c")),
                &[d],
                InitRule::Constant(HIGHWAY_GATE_BIAS),
            )?;
            layout.declare(&self.slot(&format!("hw{k}.A")), &[d, d], InitRule::Uniform)?;
            layout.declare(&self.slot(&format!("hw{k}.b")), &[d], InitRule::Uniform)?;
        }
        Ok(())
    }

    /// Embeds each unit sequence into one `d_hw` row.
    pub fn embed<F: Scalar>(&self, tape: &mut Tape<'_, F>, words: &[&[usize]]) -> Result<Var> {
        self.embed_traced(tape, words, None)
    }

    pub fn embed_traced<F: Scalar>(
        &self,
        tape: &mut Tape<'_, F>,
        words: &[&[usize]],
        mut gates: Option<&mut GateTrace>,
    ) -> Result<Var> {
        if words.is_empty() {
            return Err(Error::Data("no words to embed".into()));
        }
        if let Some(i) = words.iter().position(|w| w.is_empty()) {
            return Err(Error::Data(format!("word {i} has no units")));
        }
        let table = tape.param(&self.slot("emb.table"))?;
        let mut x = match &self.config.kind {
            EmbedderKind::Word => {
                let ids: Vec<usize> = words
                    .iter()
                    .map(|w| match w {
                        [id] => Ok(*id),
                        _ => Err(Error::Data("word embedder takes one id per word".into())),
                    })
                    .collect::<Result<_>>()?;
                tape.gather_rows(table, &ids)?
            }
            EmbedderKind::MorphSum => {
                let groups: Vec<Vec<usize>> = words.iter().map(|w| w.to_vec()).collect();
                tape.gather_sum(table, &groups)?
            }
            EmbedderKind::SylConcat { slots } => {
                let parts = (0..*slots)
                    .map(|k| {
                        let idx: Vec<Option<usize>> = words.iter().map(|w| w.get(k).copied()).collect();
                        tape.gather_rows_or_zero(table, &idx)
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                tape.concat_cols(&parts)?
            }
            EmbedderKind::CharCnn(cnn) => self.char_features(tape, table, cnn, words)?,
        };
        for k in 1..=self.config.highway_layers {
            let (out, gate) = highway(tape, x, &self.slot(&format!("hw{k}")))?;
            if let Some(g) = gates.as_deref_mut() {
                g.push(gate);
            }
            x = out;
        }
        Ok(x)
    }

    /// Convolution over padded char embeddings, max over valid windows,
    /// bias and tanh per map, then an optional projection.
    fn char_features<F: Scalar>(
        &self,
        tape: &mut Tape<'_, F>,
        table: Var,
        cnn: &CharCnnConfig,
        words: &[&[usize]],
    ) -> Result<Var> {
        // trailing padding does not count towards the word length
        let lens: Vec<usize> = words
            .iter()
            .map(|w| w.len() - w.iter().rev().take_while(|&&u| u == PAD_UNIT).count())
            .collect();
        let max_len = lens.iter().copied().max().unwrap_or(0).max(cnn.max_width());
        let mut pooled = Vec::with_capacity(cnn.widths.len());
        for (&w, _) in cnn.widths.iter().zip(&cnn.maps) {
            let positions = max_len - w + 1;
            let mut offsets = Vec::with_capacity(w);
            for j in 0..w {
                let mut idx = Vec::with_capacity(words.len() * positions);
                for (word, &len) in words.iter().zip(&lens) {
                    for p in 0..positions {
                        let q = p + j;
                        idx.push(if q < len { Some(word[q]) } else { None });
                    }
                }
                offsets.push(tape.gather_rows_or_zero(table, &idx)?);
            }
            let windows = tape.concat_cols(&offsets)?;
            let kernel = tape.param(&self.slot(&format!("cnn.w{w}.kernel")))?;
            let conv = tape.matmul(windows, kernel)?;
            let valid: Vec<usize> = lens.iter().map(|&l| (l + 1).saturating_sub(w).max(1)).collect();
            let maxed = tape.max_over_time(conv, positions, &valid)?;
            let bias = tape.param(&self.slot(&format!("cnn.w{w}.bias")))?;
            let shifted = tape.add_row(maxed, bias)?;
            pooled.push(tape.tanh(shifted)?);
        }
        let mut feats = tape.concat_cols(&pooled)?;
        if self.config.has_projection() {
            let proj = tape.param(&self.slot("cnn.proj"))?;
            feats = tape.matmul(feats, proj)?;
        }
        Ok(feats)
    }

    /// Embeds `words` in chunks on fresh tapes and returns the values only.
    pub fn embed_values<F: Scalar>(
        &self,
        params: &ParamRegistry<F>,
        words: &[&[usize]],
        chunk: usize,
    ) -> Result<Tensor<F>> {
        let d = self.out_dim();
        let mut data = Vec::with_capacity(words.len() * d);
        for part in words.chunks(chunk.max(1)) {
            let mut tape = Tape::with_params(params);
            let v = self.embed(&mut tape, part)?;
            data.extend_from_slice(tape.value(v).data());
        }
        Ok(Tensor::from_vec(&[words.len(), d], data)?)
    }
}

/// `x + t * (relu(x A + b) - x)` with `t = sigmoid(x W + c)`; returns the
/// output and the gate.
pub fn highway<F: Scalar>(tape: &mut Tape<'_, F>, x: Var, prefix: &str) -> Result<(Var, Var)> {
    let w = tape.param(&format!("{prefix}.W"))?;
    let c = tape.param(&format!("{prefix}.c"))?;
    let a = tape.param(&format!("{prefix}.A"))?;
    let b = tape.param(&format!("{prefix}.b"))?;
    let xw = tape.matmul(x, w)?;
    let pre_gate = tape.add_row(xw, c)?;
    let gate = tape.sigmoid(pre_gate)?;
    let xa = tape.matmul(x, a)?;
    let pre = tape.add_row(xa, b)?;
    let candidate = tape.relu(pre)?;
    let delta = tape.sub(candidate, x)?;
    let gated = tape.mul(gate, delta)?;
    Ok((tape.add(x, gated)?, gate))
}

/// Word vectors computed once for a fixed parameter version.
#[derive(Debug, Clone)]
pub struct WordVectorCache<F> {
    matrix: Option<Tensor<F>>,
    version: u64,
}

impl<F: Scalar> Default for WordVectorCache<F> {
    fn default() -> Self {
        WordVectorCache {
            matrix: None,
            version: 0,
        }
    }
}

impl<F: Scalar> WordVectorCache<F> {
    pub fn is_dirty(&self, params: &ParamRegistry<F>) -> bool {
        self.matrix.is_none() || self.version != params.version()
    }

    pub fn invalidate(&mut self) {
        self.matrix = None;
    }

    /// Rebuilds the matrix if parameters changed since the last build.
    pub fn get(
        &mut self,
        embedder: &Embedder,
        params: &ParamRegistry<F>,
        words: &[&[usize]],
    ) -> Result<&Tensor<F>> {
        if self.is_dirty(params) {
            self.matrix = Some(embedder.embed_values(params, words, 512)?);
            self.version = params.version();
        }
        Ok(self.matrix.as_ref().expect("built above"))
    }

    pub fn matrix(&self) -> Option<&Tensor<F>> {
        self.matrix.as_ref()
    }
}
