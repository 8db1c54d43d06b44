//! Acceptance run. Each criterion prints one PASS/FAIL line straight to
//! stdout, so the lines show up even when the harness captures output.

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swlm_core::analysis::{gate_kde, gaussian_kde, load_ttr_points, pca_curve, ttr_fit, word_matrix, Side};
use swlm_core::config::RunConfig;
use swlm_core::corpus::{unigram_ppl, BatchView, Corpus};
use swlm_core::embedders::{CharCnnConfig, EmbedderConfig, EmbedderKind};
use swlm_core::model::{prepare_subwords, LanguageModel};
use swlm_core::rnnlm::{Architecture, DropoutMasks, HeadKind, LmState, ModelConfig};
use swlm_core::segmentation::{HyphenationPatterns, MorphModel, MorphTrainConfig};
use swlm_core::trainer::{init_parameters, train};
use swlm_core::tying::ReuseMode;
use swlm_numcore::{
    check_gradients, GradCheckOptions, InitRule, ParamLayout, ParamRegistry, Tape, Tensor, Var,
};

type Outcome = Result<String, String>;

const GOLDEN_SYLLABLES: &str = include_str!("../../core/tests/fixtures/syllables-en.tsv");

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    root().join("configs").join(format!("{name}.conf"))
}

fn swlm(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_swlm"))
        .args(args)
        .env_remove("SWLM_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("swlm {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn run(id: &str, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    });
    match &result {
        Ok(detail) => emit(&format!("[PASS] {id} {title}: {detail}")),
        Err(detail) => emit(&format!("[FAIL] {id} {title}: {detail}")),
    }
    result.is_ok()
}

// 1

fn unique_counts(name: &str) -> Result<Vec<(String, usize)>, String> {
    let cfg = config(name);
    let out = swlm(&["count-params", "--config", cfg.to_str().unwrap(), "--all-reuse"])?;
    out.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let n = f.get(2).ok_or_else(|| format!("bad row {l:?}"))?.parse().map_err(err)?;
            Ok((f[1].to_string(), n))
        })
        .collect()
}

fn parameter_counts() -> Outcome {
    let targets: [(&str, &[(&str, f64)]); 3] = [
        ("ptb-morph-small", &[("none", 2.4), ("re", 1.6), ("rw", 2.2), ("rerw", 1.5)]),
        ("ptb-morph-medium", &[("none", 14.5), ("re", 12.3), ("rw", 12.8), ("rerw", 10.7)]),
        ("ptb-word-small", &[("none", 4.7), ("re", 2.7)]),
    ];
    let mut worst: f64 = 0.0;
    let mut shown = Vec::new();
    for (name, expect) in targets {
        let got = unique_counts(name)?;
        ensure(got.len() == expect.len(), || format!("{name}: {got:?}"))?;
        for ((mode, n), (emode, m)) in got.iter().zip(expect) {
            ensure(mode == emode, || format!("{name}: mode {mode} vs {emode}"))?;
            let millions = *n as f64 / 1e6;
            let rel = (millions / m - 1.0).abs();
            worst = worst.max(rel);
            shown.push(format!("{millions:.2}"));
            ensure(rel <= 0.05, || format!("{name} {mode}: {millions:.3}M vs {m}M"))?;
        }
    }
    Ok(format!("[{}]M, worst deviation {:.1}%", shown.join(" "), worst * 100.0))
}

// 2

const VOCAB: usize = 6;
const UNITS: usize = 10;
const TOL: f64 = 1e-4;

fn registry(decls: &[(&str, &[usize])], seed: u64) -> ParamRegistry<f64> {
    let mut l = ParamLayout::new();
    for (n, s) in decls {
        l.declare(n, s, InitRule::Uniform).unwrap();
    }
    let mut reg = ParamRegistry::zeros(l);
    reg.initialize(&mut ChaCha8Rng::seed_from_u64(seed), 1.0);
    reg
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn weighted_sum(t: &mut Tape<'_, f64>, v: Var, seed: u64) -> swlm_numcore::Result<Var> {
    let shape = t.value(v).shape().to_vec();
    let r = t.value(v).rows();
    let w = t.constant(random(&shape, seed));
    let m = t.mul(v, w)?;
    let s = t.sum_cols(m)?;
    let ones = t.constant(Tensor::full(&[1, r], 1.0));
    t.matmul(ones, s)
}

fn max_error(reg: &ParamRegistry<f64>, f: impl Fn(&mut Tape<'_, f64>) -> swlm_numcore::Result<Var>) -> Result<f64, String> {
    let rep = check_gradients(reg, f, GradCheckOptions::default()).map_err(err)?;
    ensure(rep.checked > 0, || "nothing checked".into())?;
    Ok(rep.max_rel_error)
}

fn op_errors() -> Result<Vec<(&'static str, f64)>, String> {
    let mut out = Vec::new();
    let reg = registry(&[("a", &[3, 4]), ("b", &[4, 2]), ("bt", &[2, 4])], 1);
    out.push((
        "matmul",
        max_error(&reg, |t| {
            let (a, b, bt) = (t.param("a")?, t.param("b")?, t.param("bt")?);
            let x = t.matmul(a, b)?;
            let y = t.matmul_nt(a, bt)?;
            let z = t.add(x, y)?;
            weighted_sum(t, z, 2)
        })?,
    ));
    let reg = registry(&[("a", &[3, 4]), ("b", &[3, 4]), ("bias", &[4])], 3);
    out.push((
        "elementwise",
        max_error(&reg, |t| {
            let (a, b, bias) = (t.param("a")?, t.param("b")?, t.param("bias")?);
            let p = t.mul(a, b)?;
            let d = t.sub(p, b)?;
            let s = t.sigmoid(d)?;
            let th = t.tanh(a)?;
            let om = t.one_minus(s)?;
            let q = t.mul(om, th)?;
            let q = t.add_row(q, bias)?;
            let q = t.scale(q, 1.7)?;
            weighted_sum(t, q, 4)
        })?,
    ));
    let mut reg = registry(&[("a", &[3, 4])], 5);
    for v in reg.value_mut("a").unwrap().data_mut() {
        if v.abs() < 1e-3 {
            *v = 0.5;
        }
    }
    out.push((
        "relu",
        max_error(&reg, |t| {
            let a = t.param("a")?;
            let y = t.relu(a)?;
            weighted_sum(t, y, 6)
        })?,
    ));
    let reg = registry(&[("a", &[3, 2]), ("b", &[3, 3])], 7);
    out.push((
        "concat/slice/reshape",
        max_error(&reg, |t| {
            let (a, b) = (t.param("a")?, t.param("b")?);
            let cc = t.concat_cols(&[a, b, a])?;
            let sc = t.slice_cols(cc, 1, 4)?;
            let cr = t.concat_rows(&[sc, sc])?;
            let sr = t.slice_rows(cr, 2, 3)?;
            let rs = t.reshape(sr, &[12])?;
            let rs = t.reshape(rs, &[3, 4])?;
            weighted_sum(t, rs, 8)
        })?,
    ));
    let reg = registry(&[("table", &[5, 3])], 9);
    let idx = [0, 4, 2, 2, 1];
    let opt = [Some(0), None, Some(2), Some(2), None];
    let groups = vec![vec![0, 4], vec![2, 2], vec![1]];
    out.push((
        "gathers",
        max_error(&reg, |t| {
            let table = t.param("table")?;
            let a = t.gather_rows(table, &idx)?;
            let b = t.gather_rows_or_zero(table, &opt)?;
            let s = t.gather_sum(table, &groups)?;
            let ab = t.add(a, b)?;
            let x = weighted_sum(t, ab, 10)?;
            let y = weighted_sum(t, s, 11)?;
            t.add(x, y)
        })?,
    ));
    let reg = registry(&[("x", &[12, 3])], 12);
    out.push((
        "max_over_time",
        max_error(&reg, |t| {
            let x = t.param("x")?;
            let m = t.max_over_time(x, 4, &[4, 2, 1])?;
            weighted_sum(t, m, 13)
        })?,
    ));
    let reg = registry(&[("z", &[3, 5])], 14);
    let mask = Tensor::from_vec(&[3, 5], (0..15).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 }).collect()).unwrap();
    out.push((
        "dropout/softmax_ce",
        max_error(&reg, |t| {
            let z = t.param("z")?;
            let d = t.dropout(z, &mask, 0.3)?;
            t.softmax_cross_entropy(d, &[0, 4, 2])
        })?,
    ));
    Ok(out)
}

fn embedder(kind: &str) -> EmbedderConfig {
    let kind_cfg = match kind {
        "morph" => EmbedderKind::MorphSum,
        "syl" => EmbedderKind::SylConcat { slots: 2 },
        _ => EmbedderKind::CharCnn(CharCnnConfig {
            char_dim: 3,
            widths: vec![1, 2],
            maps: vec![2, 3],
        }),
    };
    let d_s = match kind {
        "syl" => 2,
        "char" => 3,
        _ => 4,
    };
    EmbedderConfig {
        kind: kind_cfg,
        units: UNITS,
        d_s,
        d_hw: 4,
        highway_layers: 2,
    }
}

fn unit_table(kind: &str) -> Vec<Vec<usize>> {
    if kind == "char" {
        vec![
            vec![3, 1, 4],
            vec![3, 2, 4],
            vec![3, 5, 6, 4],
            vec![3, 5, 7, 8, 4],
            vec![3, 9, 4],
            vec![3, 6, 5, 9, 7, 4],
        ]
    } else {
        vec![vec![1], vec![2], vec![5, 6], vec![5, 7, 8], vec![9], vec![6, 5]]
    }
}

fn tiny(kind: &str, reuse: ReuseMode) -> Architecture {
    Architecture::new(
        ModelConfig {
            embedder: embedder(kind),
            head: HeadKind::Subword,
            reuse,
            d_lm: 4,
            lstm_layers: 2,
        },
        VOCAB,
    )
    .unwrap()
}

fn modes() -> [ReuseMode; 4] {
    [ReuseMode::None, ReuseMode::Re, ReuseMode::Rw, ReuseMode::ReRw]
}

fn model_error(arch: &Architecture, units: &[Vec<usize>], seed: u64) -> Result<f64, String> {
    let reg: ParamRegistry<f64> = arch.init_params(&mut ChaCha8Rng::seed_from_u64(seed), 0.5);
    let batch = BatchView {
        inputs: vec![vec![0, 2, 3], vec![5, 1, 4]],
        targets: vec![vec![2, 3, 5], vec![1, 4, 0]],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut state = LmState::zeros(arch, 2);
    for t in state.h.iter_mut().chain(state.c.iter_mut()) {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let masks = DropoutMasks::<f64>::sample(arch, 2, 0.25, &mut rng).map_err(err)?;
    max_error(&reg, |tape| {
        arch.loss(tape, units, &batch, &state, Some(&masks))
            .map(|(loss, _)| loss)
            .map_err(|e| swlm_numcore::NumError::InvalidArgument(e.to_string()))
    })
}

fn gradient_checks() -> Outcome {
    let mut worst = (0.0f64, String::new());
    let mut note = |name: String, e: f64| {
        if e >= worst.0 {
            worst = (e, name);
        }
    };
    let ops = op_errors()?;
    let n_ops = ops.len();
    for (name, e) in ops {
        ensure(e < TOL, || format!("op {name}: {e:.2e}"))?;
        note(name.to_string(), e);
    }
    let mut variants = 0;
    for kind in ["char", "syl", "morph"] {
        for reuse in modes() {
            let e = model_error(&tiny(kind, reuse.clone()), &unit_table(kind), 3)?;
            ensure(e < TOL, || format!("{kind} {reuse:?}: {e:.2e}"))?;
            note(format!("{kind} {reuse:?}"), e);
            variants += 1;
        }
    }
    Ok(format!(
        "{n_ops} op groups, {variants} model variants, max rel error {:.2e} ({})",
        worst.0, worst.1
    ))
}

// 3

fn tying_semantics() -> Outcome {
    let arch = tiny("morph", ReuseMode::ReRw);
    let layout = arch.layout();
    let mut shared = 0;
    for (slot, _) in layout.slots().filter(|(s, _)| s.starts_with("input.")) {
        let twin = slot.replacen("input.", "output.", 1);
        ensure(layout.shares_storage(slot, &twin).map_err(err)?, || format!("{slot} not shared"))?;
        shared += 1;
    }
    let reg: ParamRegistry<f64> = arch.init_params(&mut ChaCha8Rng::seed_from_u64(2), 0.3);
    let units = unit_table("morph");
    let words: Vec<usize> = (0..VOCAB).collect();
    let mut tape = Tape::with_params(&reg);
    let input = arch.input_rows(&mut tape, &units, &words).map_err(err)?;
    let output = arch.output_rows(&mut tape, &units, None).map_err(err)?;
    ensure(tape.value(input) == tape.value(output), || "input and output rows differ".into())?;
    let h = random(&[3, 4], 8);
    let hv = tape.constant(h.clone());
    let z = arch.logits(&mut tape, hv, output).map_err(err)?;
    let bias = reg.value("output.bias").map_err(err)?;
    let e = tape.value(input);
    let mut worst: f64 = 0.0;
    for r in 0..3 {
        for w in 0..VOCAB {
            let dot: f64 = (0..4).map(|k| h.at(r, k) * e.at(w, k)).sum();
            worst = worst.max((tape.value(z).at(r, w) - (dot + bias.data()[w])).abs());
        }
    }
    ensure(worst < 1e-12, || format!("logit mismatch {worst:e}"))?;

    let mut orders = Vec::new();
    for kind in ["char", "syl", "morph"] {
        let [none, re, rw, rerw] = modes().map(|m| tiny(kind, m).layout().unique_param_count());
        ensure(none > re && re > rerw && none > rw && rw > rerw, || {
            format!("{kind}: none {none} re {re} rw {rw} rerw {rerw}")
        })?;
        orders.push(format!("{kind} {none}>{re}|{rw}>{rerw}"));
    }
    Ok(format!(
        "{shared} input slots share storage, |logit - (h.e + b)| = {worst:e}; {}",
        orders.join(", ")
    ))
}

// 4

fn sweep_rows(name: &str, dir: &Path) -> Result<(usize, usize), String> {
    let out = dir.join(name);
    let cfg = config(name);
    swlm(&["sweep-tying", "--config", cfg.to_str().unwrap(), "--dry-run", "--out", out.to_str().unwrap()])?;
    let mut reader = csv::Reader::from_path(out.join("sweep.csv")).map_err(err)?;
    let col = reader
        .headers()
        .map_err(err)?
        .iter()
        .position(|h| h == "in_reported_subset")
        .ok_or("missing in_reported_subset column")?;
    let rows: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().map_err(err)?;
    let kept = rows.iter().filter(|r| r.get(col) == Some("true")).count();
    Ok((rows.len(), kept))
}

fn sweep_shape() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let (n3, k3) = sweep_rows("ptb-morph-small", dir.path())?;
    let (n4, k4) = sweep_rows("ptb-char-medium", dir.path())?;
    ensure((n3, k3, n4, k4) == (8, 6, 16, 14), || {
        format!("3 layers: {k3}/{n3}, 4 layers: {k4}/{n4}")
    })?;
    Ok(format!("3-layer stack {k3} of {n3} masks, 4-layer stack {k4} of {n4}"))
}

// 5, 6

fn synthetic() -> (RunConfig, Corpus) {
    let run = RunConfig::load(&config("synthetic-morph")).unwrap();
    let corpus = Corpus::load_dir(&root().join("data/synthetic")).unwrap();
    (run, corpus)
}

fn training_sanity() -> Outcome {
    let (run, corpus) = synthetic();
    let lm = LanguageModel::from_corpus(run, &corpus.train).map_err(err)?;
    let (train_s, valid_s, test_s) = (lm.encode(&corpus.train), lm.encode(&corpus.valid), lm.encode(&corpus.test));
    let schedule = lm.meta.run.schedule().map_err(err)?;
    ensure(schedule.epochs == 10, || format!("{} epochs configured", schedule.epochs))?;
    let outcome = train(&lm.arch, lm.units(), &train_s, &valid_s, &schedule, &mut ()).map_err(err)?;
    let mut one = schedule.clone();
    one.epochs = 1;
    let replay = train(&lm.arch, lm.units(), &train_s, &valid_s, &one, &mut ()).map_err(err)?;
    let (a, b) = (&outcome.records[0], &replay.records[0]);
    ensure(
        a.train_ppl.to_bits() == b.train_ppl.to_bits() && a.valid_ppl.to_bits() == b.valid_ppl.to_bits(),
        || format!("replay differs: {} vs {}", a.valid_ppl, b.valid_ppl),
    )?;
    let test = lm
        .arch
        .evaluate(&outcome.best_params, lm.units(), &test_s, schedule.eval_batch_size, schedule.bptt)
        .map_err(err)?;
    let unigram = unigram_ppl(&train_s, &test_s, lm.vocab().len()).map_err(err)?;
    let ratio = test.ppl / unigram;
    ensure(ratio < 0.7, || format!("test PPL {:.2} vs unigram {unigram:.2} (ratio {ratio:.3})", test.ppl))?;
    Ok(format!(
        "{} train tokens, test PPL {:.2} vs unigram {unigram:.2} (ratio {ratio:.3}), epoch-1 replay bitwise identical",
        train_s.token_count(),
        test.ppl
    ))
}

fn normalization() -> Outcome {
    let (run, corpus) = synthetic();
    let mut lm = LanguageModel::from_corpus(run, &corpus.train).map_err(err)?;
    let schedule = lm.meta.run.schedule().map_err(err)?;
    lm.params = init_parameters(&lm.arch, &schedule);
    let v = lm.vocab().len();

    let reg: ParamRegistry<f64> = lm.arch.init_params(&mut ChaCha8Rng::seed_from_u64(4), 0.1);
    let mut tape = Tape::with_params(&reg);
    let rows = lm.arch.output_rows(&mut tape, lm.units(), None).map_err(err)?;
    let h = tape.constant(random(&[4, lm.arch.d_lm()], 5));
    let z = lm.arch.logits(&mut tape, h, rows).map_err(err)?;
    let mut worst_sum: f64 = 0.0;
    for r in 0..4 {
        let zr = tape.slice_rows(z, r, 1).map_err(err)?;
        let mut total = 0.0;
        for w in 0..v {
            let ce = tape.softmax_cross_entropy(zr, &[w]).map_err(err)?;
            total += (-tape.value(ce).data()[0]).exp();
        }
        worst_sum = worst_sum.max((total - 1.0).abs());
    }
    ensure(worst_sum < 1e-6, || format!("softmax row sum off by {worst_sum:e}"))?;

    let valid = lm.encode(&corpus.valid);
    let r = lm
        .arch
        .evaluate(&lm.params, lm.units(), &valid, schedule.eval_batch_size, schedule.bptt)
        .map_err(err)?;
    let nll = r.nll / r.tokens as f64;
    let ln_v = (v as f64).ln();
    ensure((nll / ln_v - 1.0).abs() < 0.05, || format!("untrained NLL {nll:.4} vs ln V {ln_v:.4}"))?;

    let words: Vec<usize> = (0..v).collect();
    let mut worst_int: f64 = 0.0;
    for side in [Side::Input, Side::Output] {
        let k = gate_kde(&lm.arch, &lm.params, lm.units(), &words, side).map_err(err)?;
        worst_int = worst_int.max((k.integral - 1.0).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..1.0)).collect();
    worst_int = worst_int.max((gaussian_kde(&samples, 1001).map_err(err)?.integral - 1.0).abs());
    ensure(worst_int < 1e-3, || format!("KDE integral off by {worst_int:e}"))?;

    for side in [Side::Input, Side::Output] {
        let c = pca_curve(&word_matrix(&lm, side).map_err(err)?).map_err(err)?;
        ensure(c.points.windows(2).all(|w| w[1].1 >= w[0].1), || "PCA curve decreases".into())?;
        ensure(c.points.last().map(|p| p.1) == Some(1.0), || "PCA curve does not end at 1".into())?;
    }
    Ok(format!(
        "row sums within {worst_sum:.1e}, untrained NLL {nll:.3} vs ln {v} = {ln_v:.3}, KDE within {worst_int:.1e}, PCA curves monotone to 1"
    ))
}

// 7

fn concatenates(run: RunConfig, corpus_train: &[String]) -> Result<usize, String> {
    let lm = LanguageModel::from_corpus(run.clone(), corpus_train).map_err(err)?;
    let sub = prepare_subwords(&run, lm.vocab()).map_err(err)?.ok_or("word units")?;
    let mut n = 0;
    for w in lm.vocab().words().iter().filter(|w| !w.starts_with('<')) {
        let pieces = sub.segmenter.pieces(w).map_err(err)?;
        ensure(pieces.concat() == *w && pieces.iter().all(|p| !p.is_empty()), || {
            format!("{w:?} -> {pieces:?}")
        })?;
        n += 1;
    }
    Ok(n)
}

fn segmentation() -> Outcome {
    let p = HyphenationPatterns::english();
    let mut golden = 0;
    for line in GOLDEN_SYLLABLES.lines() {
        let (word, expected) = line.split_once('\t').ok_or("bad fixture line")?;
        let got = p.syllabify(word);
        ensure(got.join(" ") == expected, || format!("{word}: {got:?} vs {expected}"))?;
        golden += 1;
    }
    ensure(golden == 50, || format!("{golden} fixture words"))?;

    let freqs = ["walk", "walks", "walked", "talk", "talks", "talked"]
        .iter()
        .map(|w| (w.to_string(), 5))
        .collect();
    let model = MorphModel::train(&freqs, &MorphTrainConfig::default()).map_err(err)?;
    let lexicon: BTreeSet<&str> = model.lexicon().keys().map(String::as_str).collect();
    ensure(lexicon == BTreeSet::from(["walk", "talk", "s", "ed"]), || format!("lexicon {lexicon:?}"))?;

    let (run, corpus) = synthetic();
    let mut counts = Vec::new();
    for units in ["syl", "morph"] {
        let mut r = run.clone();
        r.set("units", units).map_err(err)?;
        counts.push(format!("{units} {}", concatenates(r, &corpus.train)?));
    }
    let ptb = match std::env::var_os("SWLM_PTB_DIR") {
        Some(dir) => {
            let ptb = Corpus::load_dir(Path::new(&dir)).map_err(err)?;
            let mut parts = Vec::new();
            for name in ["ptb-syl-small", "ptb-morph-small"] {
                let r = RunConfig::load(&config(name)).map_err(err)?;
                parts.push(format!("{name} {}", concatenates(r, &ptb.train)?));
            }
            format!("PTB vocabulary concatenates ({})", parts.join(", "))
        }
        None => "PTB vocabulary not checked (SWLM_PTB_DIR unset)".into(),
    };
    Ok(format!(
        "{golden} golden syllabifications, toy lexicon {{walk,talk,s,ed}}, synthetic vocabulary concatenates ({}); {ptb}",
        counts.join(", ")
    ))
}

// 8

fn ttr() -> Outcome {
    let fit = ttr_fit(&load_ttr_points().map_err(err)?).map_err(err)?;
    let r = fit.pearson_r.ok_or("undefined correlation")?;
    ensure((fit.slope / 2109.0 - 1.0).abs() <= 0.15, || format!("slope {:.1}", fit.slope))?;
    ensure((r - 0.84).abs() <= 0.1, || format!("r {r:.4}"))?;
    Ok(format!("slope {:.1} (target 2109 +-15%), r {r:.4} (target 0.84 +-0.1)", fit.slope))
}

#[test]
fn acceptance_criteria() {
    emit("\nacceptance criteria");
    let results = [
        run("1", "parameter counts", parameter_counts),
        run("2", "gradient verification", gradient_checks),
        run("3", "tying semantics", tying_semantics),
        run("4", "sweep shape", sweep_shape),
        run("5", "training sanity", training_sanity),
        run("6", "normalization and numerics", normalization),
        run("7", "segmentation", segmentation),
        run("8", "TTR analysis", ttr),
    ];
    emit("[SKIP] 9 full PTB training: ignored test full_ptb_training (needs SWLM_PTB_DIR)");
    let failed: Vec<usize> = (1..=results.len()).filter(|i| !results[i - 1]).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
#[ignore = "needs SWLM_PTB_DIR and hours of CPU time"]
fn full_ptb_training() {
    let dir = std::env::var("SWLM_PTB_DIR").expect("SWLM_PTB_DIR");
    let out = tempfile::tempdir().unwrap();
    let cfg = config("ptb-morph-small");
    let stdout = swlm(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        &dir,
        "--out",
        out.path().to_str().unwrap(),
    ])
    .unwrap();
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("result.json")).unwrap()).unwrap();
    let ppl = result["test_ppl"].as_f64().unwrap();
    let line = format!("9 full PTB training: {}", stdout.trim());
    emit(&format!("[{}] {line}", if ppl <= 90.0 { "PASS" } else { "FAIL" }));
    assert!(ppl <= 90.0, "test PPL {ppl}");
}

#[test]
#[ignore = "needs SWLM_PTB_DIR"]
fn ptb_vocabulary_concatenates() {
    let dir = std::env::var("SWLM_PTB_DIR").expect("SWLM_PTB_DIR");
    let ptb = Corpus::load_dir(Path::new(&dir)).unwrap();
    for name in ["ptb-syl-small", "ptb-morph-small", "ptb-char-small"] {
        let n = concatenates(RunConfig::load(&config(name)).unwrap(), &ptb.train).unwrap();
        assert!(n >= 9_000, "{name}: {n}");
    }
}
