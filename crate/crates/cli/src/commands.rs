use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::json;
use swlm_core::analysis::{
    gate_kde, load_ttr_points, nearest_neighbors, oov_transfer, param_report, parse_ttr_points,
    pca_curve, ttr_fit, word_matrix, Side,
};
use swlm_core::config::{RunConfig, Units};
use swlm_core::corpus::{load_corpus, split_path, Corpus, Split, Vocabulary};
use swlm_core::model::{prepare_subwords, LanguageModel};
use swlm_core::rnnlm::{Architecture, HeadKind};
use swlm_core::segmentation::{write_segmentation, SubwordData};
use swlm_core::trainer::{train as run_training, DirectoryObserver, TrainSchedule};
use swlm_core::tying::{count_parameters, enumerate_bottom_up};
use swlm_core::{Error, Result};

use crate::manifest;
use crate::{AnalysisKind, AnalyzeArgs, ConfigArgs};

pub fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut run = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(u) = &args.units {
        run.set("units", u)?;
    }
    if let Some(r) = &args.reuse {
        run.remove("tie");
        run.set("reuse", r)?;
    }
    if let Some(t) = &args.tie {
        run.set("tie", t)?;
    }
    run.apply_overrides(&args.overrides)?;
    Ok(run)
}

fn effective_schedule(run: &mut RunConfig) -> Result<TrainSchedule> {
    let mut s = run.schedule()?;
    s.apply_env()?;
    run.set("seed", &s.seed.to_string())?;
    Ok(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(format!("{e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        _ => Err(Error::Config(format!("unknown split {s:?}"))),
    }
}

#[derive(Debug, Clone, Serialize)]
struct TrainSummary {
    best_epoch: usize,
    best_valid_ppl: f64,
    test_ppl: f64,
    initial_lr: f64,
    unique_params: usize,
}

/// Trains one model into `out`. On failure a `FAILED` file marks the
/// directory's checkpoints as partial.
fn train_into(lm: &LanguageModel, corpus: &Corpus, schedule: &TrainSchedule, out: &Path) -> Result<TrainSummary> {
    let result = (|| {
        let train = lm.encode(&corpus.train);
        let valid = lm.encode(&corpus.valid);
        let test = lm.encode(&corpus.test);
        let mut observer = DirectoryObserver::create(out, |p: &Path, params: &_| lm.save_params(p, params))?;
        let outcome = run_training(&lm.arch, lm.units(), &train, &valid, schedule, &mut observer)?;
        let test_ppl = lm
            .arch
            .evaluate(&outcome.best_params, lm.units(), &test, schedule.eval_batch_size, schedule.bptt)?
            .ppl;
        let summary = TrainSummary {
            best_epoch: outcome.best_epoch,
            best_valid_ppl: outcome.best_valid_ppl,
            test_ppl,
            initial_lr: outcome.initial_lr,
            unique_params: lm.arch.layout().unique_param_count(),
        };
        write_json(&out.join("result.json"), &summary)?;
        Ok(summary)
    })();
    if let Err(e) = &result {
        let _ = std::fs::write(out.join("FAILED"), format!("{e}\n"));
    }
    result
}

pub fn train(cfg: &ConfigArgs, data: &Path, out: &Path) -> Result<()> {
    let mut run = resolve_config(cfg)?;
    let schedule = effective_schedule(&mut run)?;
    let corpus = Corpus::load_dir(data)?;
    create_dir(out)?;
    let args = BTreeMap::from([("data", data.display().to_string()), ("out", out.display().to_string())]);
    manifest::write(&out.join("manifest.json"), "train", &run, Some(schedule.seed), args)?;
    let lm = LanguageModel::from_corpus(run, &corpus.train)?;
    eprintln!(
        "vocabulary {} words, {} unique parameters",
        lm.vocab().len(),
        lm.arch.layout().unique_param_count()
    );
    let s = train_into(&lm, &corpus, &schedule, out)?;
    println!(
        "best_epoch={} valid_ppl={:.3} test_ppl={:.3}",
        s.best_epoch, s.best_valid_ppl, s.test_ppl
    );
    Ok(())
}

pub fn eval(model: &Path, data: &Path, split: &str, batch: usize, bptt: usize, manifest_path: Option<&Path>) -> Result<()> {
    let lm = LanguageModel::load(model)?;
    let tokens = load_corpus(&split_path(data, parse_split(split)?)?)?;
    let stream = lm.encode(&tokens);
    let r = lm.arch.evaluate(&lm.params, lm.units(), &stream, batch, bptt)?;
    if let Some(p) = manifest_path {
        let args = BTreeMap::from([
            ("model", model.display().to_string()),
            ("data", data.display().to_string()),
            ("split", split.to_string()),
            ("batch_size", batch.to_string()),
            ("bptt", bptt.to_string()),
        ]);
        manifest::write(p, "eval", &lm.meta.run, None, args)?;
    }
    println!("split={split} tokens={} nll={:.6} ppl={:.6}", r.tokens, r.nll, r.ppl);
    Ok(())
}

pub fn segment(cfg: &ConfigArgs, input: &Path, out: &Path) -> Result<()> {
    let run = resolve_config(cfg)?;
    if run.units()? == Units::Word {
        return Err(Error::Config("segment needs subword units".into()));
    }
    let tokens = load_corpus(input)?;
    let vocab = Vocabulary::build(&tokens, run.min_count()?)?;
    let sub: SubwordData = prepare_subwords(&run, &vocab)?.expect("subword units");
    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(file);
    write_segmentation(&mut w, vocab.words(), &sub.segmenter)?;
    w.flush().map_err(|e| Error::io(out, e))?;
    let args = BTreeMap::from([("in", input.display().to_string()), ("out", out.display().to_string())]);
    manifest::write(&manifest::beside(out), "segment", &run, None, args)?;
    eprintln!("{} words, {} units", vocab.len() - 2, sub.vocab.len());
    Ok(())
}

/// Word and subword vocabulary sizes from data when given, otherwise from
/// the configuration.
fn vocab_sizes(run: &RunConfig, data: Option<&Path>) -> Result<(usize, usize)> {
    if let Some(dir) = data {
        let tokens = load_corpus(&split_path(dir, Split::Train)?)?;
        let vocab = Vocabulary::build(&tokens, run.min_count()?)?;
        let sub = prepare_subwords(run, &vocab)?;
        return Ok((vocab.len(), sub.map_or(0, |s| s.vocab.len())));
    }
    match run.vocab_sizes()? {
        (Some(w), s) => {
            if s.is_none() && run.units()? != Units::Word {
                return Err(Error::Config("subword_vocab_size is required without --data".into()));
            }
            Ok((w, s.unwrap_or(0)))
        }
        (None, _) => Err(Error::Config("word_vocab_size is required without --data".into())),
    }
}

fn layer_names(run: &RunConfig, words: usize, subwords: usize) -> Result<Vec<String>> {
    let arch = Architecture::new(run.model_config(words, subwords)?, words)?;
    Ok(arch.input.layer_names())
}

fn with_mask(base: &RunConfig, names: &[String], mask: &[bool]) -> Result<RunConfig> {
    let mut run = base.clone();
    run.remove("tie");
    if mask.iter().any(|&b| b) {
        let list: Vec<&str> = names.iter().zip(mask).filter(|(_, &b)| b).map(|(n, _)| n.as_str()).collect();
        run.set("tie", &list.join(","))?;
        run.remove("reuse");
    } else {
        run.set("reuse", "none")?;
    }
    Ok(run)
}

pub fn count_params(cfg: &ConfigArgs, data: Option<&Path>, all: bool, manifest_path: Option<&Path>) -> Result<()> {
    let run = resolve_config(cfg)?;
    let (words, subwords) = vocab_sizes(&run, data)?;
    let label = cfg
        .config
        .as_ref()
        .and_then(|p| p.file_stem())
        .map_or_else(|| run.units().map(|u| u.name().to_string()).unwrap_or_default(), |s| s.to_string_lossy().into_owned());
    let modes: Vec<RunConfig> = if all {
        let names: &[&str] = if run.units()? == Units::Word { &["none", "re"] } else { &["none", "re", "rw", "rerw"] };
        names
            .iter()
            .map(|m| {
                let mut r = run.clone();
                r.remove("tie");
                r.set("reuse", m)?;
                Ok(r)
            })
            .collect::<Result<_>>()?
    } else {
        vec![run.clone()]
    };
    println!("config,reuse,unique_params,total_params,millions");
    for r in &modes {
        let mc = r.model_config(words, subwords)?;
        let reuse = mc.reuse.label();
        let arch = Architecture::new(mc, words)?;
        let rep = count_parameters(arch.layout(), arch.tied_layers.clone());
        println!(
            "{label},{reuse},{},{},{:.1}M",
            rep.unique_params,
            rep.total_params,
            rep.unique_params as f64 / 1e6
        );
    }
    if let Some(p) = manifest_path {
        let mut args = BTreeMap::from([("all_reuse", all.to_string())]);
        if let Some(d) = data {
            args.insert("data", d.display().to_string());
        }
        manifest::write(p, "count-params", &run, None, args)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    rank: Option<usize>,
    mask: String,
    tied_layers: String,
    bottom_up: bool,
    in_reported_subset: bool,
    unique_params: usize,
    best_valid_ppl: Option<f64>,
    test_ppl: Option<f64>,
    status: String,
}

fn csv_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.4}"))
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut text = String::from("rank,mask,tied_layers,bottom_up,in_reported_subset,unique_params,best_valid_ppl,test_ppl,status\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},\"{}\",{},{},{},{},{},{}\n",
            r.rank.map_or_else(String::new, |k| k.to_string()),
            r.mask,
            r.tied_layers,
            r.bottom_up,
            r.in_reported_subset,
            r.unique_params,
            csv_opt(r.best_valid_ppl),
            csv_opt(r.test_ppl),
            r.status
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn sweep(cfg: &ConfigArgs, data: Option<&Path>, out: &Path, dry_run: bool, jobs: usize) -> Result<()> {
    let mut base = resolve_config(cfg)?;
    if base.units()? == Units::Word {
        return Err(Error::Config("tying sweeps need a subword embedder".into()));
    }
    if !dry_run && data.is_none() {
        return Err(Error::Config("--data is required unless --dry-run".into()));
    }
    let schedule = effective_schedule(&mut base)?;
    create_dir(out)?;
    let mut args = BTreeMap::from([
        ("out", out.display().to_string()),
        ("dry_run", dry_run.to_string()),
        ("jobs", jobs.to_string()),
    ]);
    if let Some(d) = data {
        args.insert("data", d.display().to_string());
    }
    manifest::write(&out.join("manifest.json"), "sweep-tying", &base, Some(schedule.seed), args)?;

    let prepared = match data {
        Some(dir) => {
            let corpus = Corpus::load_dir(dir)?;
            let vocab = Vocabulary::build(&corpus.train, base.min_count()?)?;
            let sub = prepare_subwords(&base, &vocab)?;
            Some((corpus, vocab, sub))
        }
        None => None,
    };
    let (words, subwords) = match &prepared {
        Some((_, v, s)) => (v.len(), s.as_ref().map_or(0, |s| s.vocab.len())),
        None => vocab_sizes(&base, None)?,
    };
    let names = layer_names(&base, words, subwords)?;
    let entries = enumerate_bottom_up(names.len())?;
    let mut rows = Vec::with_capacity(entries.len());
    let mut runs = Vec::with_capacity(entries.len());
    for e in &entries {
        let run = with_mask(&base, &names, &e.mask)?;
        let arch = Architecture::new(run.model_config(words, subwords)?, words)?;
        let bits: String = e.mask.iter().map(|&b| if b { '1' } else { '0' }).collect();
        rows.push(SweepRow {
            rank: None,
            tied_layers: arch.tied_layers.join(","),
            mask: bits,
            bottom_up: e.bottom_up,
            in_reported_subset: e.in_reported_subset,
            unique_params: arch.layout().unique_param_count(),
            best_valid_ppl: None,
            test_ppl: None,
            status: if dry_run { "enumerated".into() } else { "pending".into() },
        });
        runs.push(run);
    }
    if let Some((corpus, vocab, sub)) = &prepared {
        if !dry_run {
            let next = AtomicUsize::new(0);
            let results = Mutex::new(vec![None; runs.len()]);
            let workers = jobs.clamp(1, runs.len());
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= runs.len() {
                            break;
                        }
                        let dir = out.join(format!("mask-{}", rows[i].mask));
                        let r = LanguageModel::assemble(runs[i].clone(), vocab.clone(), sub.clone())
                            .and_then(|lm| {
                                create_dir(&dir)?;
                                train_into(&lm, corpus, &schedule, &dir)
                            })
                            .map_err(|e| e.to_string());
                        results.lock().expect("results lock")[i] = Some(r);
                    });
                }
            });
            for (row, r) in rows.iter_mut().zip(results.into_inner().expect("results lock")) {
                match r.expect("every job ran") {
                    Ok(s) => {
                        row.best_valid_ppl = Some(s.best_valid_ppl);
                        row.test_ppl = Some(s.test_ppl);
                        row.status = "ok".into();
                    }
                    Err(e) => row.status = format!("failed: {}", e.replace(',', ";")),
                }
            }
            rows.sort_by(|a, b| match (a.best_valid_ppl, b.best_valid_ppl) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            });
            for (k, row) in rows.iter_mut().enumerate() {
                if row.best_valid_ppl.is_some() {
                    row.rank = Some(k + 1);
                }
            }
        }
    }
    write_sweep_csv(&out.join("sweep.csv"), &rows)?;
    let subset = rows.iter().filter(|r| r.in_reported_subset).count();
    println!("{} masks over layers [{}], {subset} in the reported subset", rows.len(), names.join(", "));
    if rows.iter().any(|r| r.status.starts_with("failed")) {
        return Err(Error::Diverged("some sweep jobs failed; see sweep.csv".into()));
    }
    Ok(())
}

fn need<'a, T>(x: &'a Option<T>, flag: &str) -> Result<&'a T> {
    x.as_ref().ok_or_else(|| Error::Config(format!("--{flag} is required for this analysis")))
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let side = Side::parse(&a.side)?;
    let report: serde_json::Value = match a.kind {
        AnalysisKind::Neighbors => {
            let lm = LanguageModel::load(need(&a.model, "model")?)?;
            if a.words.is_empty() {
                return Err(Error::Config("--word is required for neighbors".into()));
            }
            let reports = a
                .words
                .iter()
                .map(|w| nearest_neighbors(&lm, w, side, a.k))
                .collect::<Result<Vec<_>>>()?;
            json!(reports)
        }
        AnalysisKind::Pca => {
            let lm = LanguageModel::load(need(&a.model, "model")?)?;
            let input = pca_curve(&word_matrix(&lm, Side::Input)?)?;
            let output = pca_curve(&word_matrix(&lm, Side::Output)?)?;
            let source = if lm.meta.units == Units::Word { "input table rows" } else { "embedder outputs over the vocabulary" };
            json!({ "input_source": source, "input": input, "output": output })
        }
        AnalysisKind::Kde => {
            let lm = LanguageModel::load(need(&a.model, "model")?)?;
            let words: Vec<usize> = (0..lm.vocab().len().min(a.sample)).collect();
            let input = gate_kde(&lm.arch, &lm.params, lm.units(), &words, Side::Input)?;
            let untied_output = lm.arch.config.head == HeadKind::Subword && !lm.arch.tied_layers.iter().any(|l| l == "hw1");
            let output = if untied_output {
                Some(gate_kde(&lm.arch, &lm.params, lm.units(), &words, Side::Output)?)
            } else {
                None
            };
            json!({ "words": words.len(), "input": input, "output": output })
        }
        AnalysisKind::Ttr => {
            let points = match &a.points {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    parse_ttr_points(&text)?
                }
                None => load_ttr_points()?,
            };
            let fit = ttr_fit(&points)?;
            json!({ "fit": fit, "points": points })
        }
        AnalysisKind::Oov => {
            let lm = LanguageModel::load(need(&a.model, "model")?)?;
            let dir = need(&a.data, "data")?;
            let tokens = load_corpus(&split_path(dir, Split::Test)?)?;
            let lanes = 10.min(tokens.len().saturating_sub(1)).max(1);
            json!(oov_transfer(&lm, &tokens, lanes, 35)?)
        }
        AnalysisKind::Params => {
            if a.configs.is_empty() {
                return Err(Error::Config("--config is required for params".into()));
            }
            let rows = a
                .configs
                .iter()
                .map(|p| {
                    let run = RunConfig::load(p)?;
                    let (w, s) = vocab_sizes(&run, None)?;
                    let label = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
                    Ok((label, run, w, s))
                })
                .collect::<Result<Vec<_>>>()?;
            json!(param_report(&rows)?)
        }
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Data(format!("{e}")))? + "\n";
    match &a.out {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
            let mut args = BTreeMap::from([("kind", format!("{:?}", a.kind).to_lowercase())]);
            if let Some(m) = &a.model {
                args.insert("model", m.display().to_string());
            }
            if let Some(d) = &a.data {
                args.insert("data", d.display().to_string());
            }
            manifest::write(&manifest::beside(p), "analyze", &RunConfig::default(), None, args)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
