//! SGD training with truncated BPTT, variational dropout, norm clipping and
//! an exponentially decaying learning rate.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use swlm_numcore::{NumError, ParamRegistry, Tape};

use crate::corpus::{batchify, EncodedStream};
use crate::error::{Error, Result};
use crate::rnnlm::{Architecture, DropoutMasks, EvalCaches, LmState, NegativeSampler};

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "SWLM_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub initial_lr: f64,
    pub lr_probe: bool,
    /// Learning rate is constant up to and including this epoch.
    pub decay_start: usize,
    pub decay_rate: f64,
    pub epochs: usize,
    pub bptt: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub clip_norm: f64,
    pub dropout: f64,
    pub init_range: f64,
    pub seed: u64,
    pub sample_fraction: Option<f64>,
    pub max_batches: Option<usize>,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.initial_lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad("decay_rate must be in (0, 1]");
        }
        if self.epochs == 0 || self.bptt == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("epochs, bptt and batch sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.clip_norm > 0.0) || !(self.init_range >= 0.0) {
            return bad("clip_norm must be positive and init_range non-negative");
        }
        if let Some(f) = self.sample_fraction {
            if !(f > 0.0 && f < 1.0) {
                return bad("sample_fraction must be in (0, 1)");
            }
        }
        Ok(())
    }

    /// Replaces the seed from the environment when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an integer")))?;
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch.
pub fn lr_at(epoch: usize, s: &TrainSchedule) -> f64 {
    if epoch > s.decay_start {
        s.initial_lr * s.decay_rate.powi((epoch - s.decay_start) as i32)
    } else {
        s.initial_lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_ppl: f64,
    pub valid_ppl: f64,
    pub wall_time: f64,
}

pub fn write_log_header<W: Write>(mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,lr,train_ppl,valid_ppl,wall_time")
}

pub fn write_log_row<W: Write>(mut w: W, r: &EpochRecord) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{},{:.6},{:.6},{:.3}",
        r.epoch, r.lr, r.train_ppl, r.valid_ppl, r.wall_time
    )
}

/// Receives each finished epoch; `improved` marks a new best validation PPL.
pub trait TrainObserver {
    fn on_epoch(&mut self, record: &EpochRecord, params: &ParamRegistry<f32>, improved: bool) -> Result<()>;
}

impl TrainObserver for () {
    fn on_epoch(&mut self, _: &EpochRecord, _: &ParamRegistry<f32>, _: bool) -> Result<()> {
        Ok(())
    }
}

/// Writes the CSV log and keeps `best.ckpt` / `last.ckpt` up to date via
/// the supplied saver.
pub struct DirectoryObserver<S> {
    log: std::fs::File,
    dir: std::path::PathBuf,
    save: S,
}

impl<S: FnMut(&Path, &ParamRegistry<f32>) -> Result<()>> DirectoryObserver<S> {
    pub fn create(dir: &Path, save: S) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("log.csv");
        let mut log = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_log_header(&mut log).map_err(|e| Error::io(&path, e))?;
        Ok(DirectoryObserver {
            log,
            dir: dir.to_path_buf(),
            save,
        })
    }
}

impl<S: FnMut(&Path, &ParamRegistry<f32>) -> Result<()>> TrainObserver for DirectoryObserver<S> {
    fn on_epoch(&mut self, record: &EpochRecord, params: &ParamRegistry<f32>, improved: bool) -> Result<()> {
        let path = self.dir.join("log.csv");
        write_log_row(&mut self.log, record).map_err(|e| Error::io(&path, e))?;
        (self.save)(&self.dir.join("last.ckpt"), params)?;
        if improved {
            (self.save)(&self.dir.join("best.ckpt"), params)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_ppl: f64,
    /// Parameters of the best validation epoch.
    pub best_params: ParamRegistry<f32>,
    /// Learning rate actually used for the first epoch.
    pub initial_lr: f64,
}

fn diverged(e: Error) -> Error {
    match e {
        Error::Num(NumError::NonFinite { op }) => Error::Diverged(format!("non-finite value in {op}")),
        other => other,
    }
}

/// Fresh parameters drawn from the schedule's seed.
pub fn init_parameters(arch: &Architecture, s: &TrainSchedule) -> ParamRegistry<f32> {
    arch.init_params(&mut ChaCha8Rng::seed_from_u64(s.seed), s.init_range)
}

/// One pass over the training stream; returns the training PPL.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    arch: &Architecture,
    params: &mut ParamRegistry<f32>,
    units: &[Vec<usize>],
    train: &EncodedStream,
    s: &TrainSchedule,
    lr: f64,
    sampler: Option<&NegativeSampler>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let batches = batchify(train, s.batch_size, s.bptt)?;
    let limit = s.max_batches.unwrap_or(usize::MAX);
    let mut state = LmState::zeros(arch, s.batch_size);
    let mut nll = 0.0;
    let mut count = 0usize;
    for batch in batches.iter().take(limit) {
        let masks = if s.dropout > 0.0 {
            Some(DropoutMasks::sample(arch, s.batch_size, s.dropout, rng)?)
        } else {
            None
        };
        let tokens = batch.batch_size() * batch.steps();
        let (mean, grads, next) = {
            let mut tape = Tape::with_params(&*params);
            let (loss, next) = match sampler {
                Some(smp) => arch.sampled_loss(&mut tape, units, batch, &state, masks.as_ref(), smp, rng),
                None => arch.loss(&mut tape, units, batch, &state, masks.as_ref()),
            }
            .map_err(diverged)?;
            let mean = tape.value(loss).data()[0] as f64;
            let total = tape.scale(loss, tokens as f32)?;
            let grads = tape.backward(total).map_err(|e| diverged(e.into()))?;
            (mean, grads, next)
        };
        if !mean.is_finite() {
            return Err(Error::Diverged(format!("loss {mean} after {count} tokens")));
        }
        params.accumulate(&grads);
        params.clip_global_norm(s.clip_norm as f32, s.batch_size);
        params.sgd_step(lr as f32);
        state = next;
        nll += mean * tokens as f64;
        count += tokens;
    }
    if count == 0 {
        return Err(Error::Data("no training batches".into()));
    }
    Ok((nll / count as f64).exp())
}

/// Full training run. Validation PPL uses the full softmax.
pub fn train(
    arch: &Architecture,
    units: &[Vec<usize>],
    train_stream: &EncodedStream,
    valid_stream: &EncodedStream,
    schedule: &TrainSchedule,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    let mut s = schedule.clone();
    if s.lr_probe {
        s.initial_lr = probe_lr(arch, units, train_stream, valid_stream, &s)?;
    }
    let mut params = init_parameters(arch, &s);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x9e37_79b9_7f4a_7c15);
    let sampler = s
        .sample_fraction
        .map(|f| NegativeSampler::new(arch.vocab_size, f))
        .transpose()?;
    let mut caches = EvalCaches::default();
    let mut records = Vec::with_capacity(s.epochs);
    let mut best: Option<(usize, f64, ParamRegistry<f32>)> = None;
    for epoch in 1..=s.epochs {
        let start = Instant::now();
        let lr = lr_at(epoch, &s);
        let train_ppl = train_epoch(arch, &mut params, units, train_stream, &s, lr, sampler.as_ref(), &mut rng)?;
        let valid = arch
            .evaluate_cached(&params, units, valid_stream, s.eval_batch_size, s.bptt, &mut caches)
            .map_err(diverged)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_ppl,
            valid_ppl: valid.ppl,
            wall_time: start.elapsed().as_secs_f64(),
        };
        let improved = best.as_ref().is_none_or(|b| valid.ppl < b.1);
        if improved {
            best = Some((epoch, valid.ppl, params.clone()));
        }
        observer.on_epoch(&record, &params, improved)?;
        records.push(record);
    }
    let (best_epoch, best_valid_ppl, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        records,
        best_epoch,
        best_valid_ppl,
        best_params,
        initial_lr: s.initial_lr,
    })
}

/// Tries 1.0, 0.9, ... and returns the first rate whose first epoch stays
/// finite and ends below the uniform-predictor perplexity.
pub fn probe_lr(
    arch: &Architecture,
    units: &[Vec<usize>],
    train_stream: &EncodedStream,
    valid_stream: &EncodedStream,
    s: &TrainSchedule,
) -> Result<f64> {
    for k in 0..10 {
        let lr = 1.0 - 0.1 * k as f64;
        let mut params = init_parameters(arch, s);
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x9e37_79b9_7f4a_7c15);
        let sampler = s
            .sample_fraction
            .map(|f| NegativeSampler::new(arch.vocab_size, f))
            .transpose()?;
        match train_epoch(arch, &mut params, units, train_stream, s, lr, sampler.as_ref(), &mut rng) {
            Ok(_) => {}
            Err(Error::Diverged(_)) => continue,
            Err(e) => return Err(e),
        }
        match arch.evaluate(&params, units, valid_stream, s.eval_batch_size, s.bptt) {
            Ok(r) if r.ppl.is_finite() && r.ppl < arch.vocab_size as f64 => return Ok(lr),
            Ok(_) => continue,
            Err(Error::Num(NumError::NonFinite { .. })) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Diverged("no learning rate in 1.0..0.1 converged in the first epoch".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule() -> TrainSchedule {
        TrainSchedule {
            initial_lr: 1.0,
            lr_probe: false,
            decay_start: 5,
            decay_rate: 0.9,
            epochs: 70,
            bptt: 35,
            batch_size: 20,
            eval_batch_size: 10,
            clip_norm: 5.0,
            dropout: 0.3,
            init_range: 0.1,
            seed: 1,
            sample_fraction: None,
            max_batches: None,
        }
    }

    #[test]
    fn lr_schedule() {
        let s = schedule();
        assert_eq!(lr_at(1, &s), 1.0);
        assert_eq!(lr_at(5, &s), 1.0);
        assert!((lr_at(6, &s) - 0.9).abs() < 1e-12);
        assert!((lr_at(8, &s) - 0.729).abs() < 1e-12);
        let flat = TrainSchedule { decay_rate: 1.0, ..s };
        assert_eq!(lr_at(60, &flat), 1.0);
    }

    #[test]
    fn validation() {
        assert!(TrainSchedule { decay_rate: 0.0, ..schedule() }.validate().is_err());
        assert!(TrainSchedule { dropout: 1.0, ..schedule() }.validate().is_err());
        assert!(TrainSchedule { sample_fraction: Some(1.0), ..schedule() }.validate().is_err());
        assert!(schedule().validate().is_ok());
    }
}
