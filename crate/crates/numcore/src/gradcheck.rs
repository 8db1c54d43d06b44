//! Central finite-difference verification of tape gradients (64-bit).

use crate::error::Result;
use crate::params::{ParamRegistry, StorageId};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Coordinates probed per storage; `None` probes all of them.
    pub max_coords: Option<usize>,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            max_coords: None,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Slot name and coordinate of the worst mismatch.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn storage_name(reg: &ParamRegistry<f64>, id: StorageId) -> String {
    reg.layout()
        .slots()
        .find(|(_, s)| *s == id)
        .map(|(n, _)| n.to_string())
        .unwrap_or_default()
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences for every storage of `reg`.
pub fn check_gradients<B>(
    reg: &ParamRegistry<f64>,
    f: B,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    B: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::with_params(reg);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |r: &ParamRegistry<f64>| -> Result<f64> {
        let mut tape = Tape::with_params(r);
        let loss = f(&mut tape)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut work = reg.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for s in 0..reg.layout().storages().len() {
        let id = StorageId(s);
        let n = reg.storage_value(id).len();
        let stride = match opts.max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for k in (0..n).step_by(stride) {
            let orig = reg.storage_value(id).data()[k];
            work.storage_value_mut(id).data_mut()[k] = orig + opts.h;
            let plus = eval(&work)?;
            work.storage_value_mut(id).data_mut()[k] = orig - opts.h;
            let minus = eval(&work)?;
            work.storage_value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
            let err = relative_error(analytic, numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((storage_name(reg, id), k));
                }
            }
        }
    }
    Ok(report)
}
