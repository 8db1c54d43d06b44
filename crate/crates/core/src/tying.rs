//! Reuse of input-side embedder layers at the output side.

use serde::{Deserialize, Serialize};
use swlm_numcore::ParamLayout;

use crate::error::{Error, Result};

/// Named group of slots forming one layer of an embedder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    /// Slot names relative to the side prefix (e.g. `hw1.W`).
    pub slots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReuseMode {
    None,
    Re,
    Rw,
    ReRw,
    /// Explicit per-layer mask, index 0 being the subword embedding table.
    Custom(Vec<bool>),
}

impl ReuseMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ReuseMode::None),
            "re" => Ok(ReuseMode::Re),
            "rw" => Ok(ReuseMode::Rw),
            "rerw" | "re+rw" => Ok(ReuseMode::ReRw),
            _ => Err(Error::Config(format!("unknown reuse mode {s:?}"))),
        }
    }

    /// Mask from a comma-separated list of layer names.
    pub fn from_layer_list(list: &str, layers: &[String]) -> Result<Self> {
        let mut mask = vec![false; layers.len()];
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let i = layers.iter().position(|l| l == name).ok_or_else(|| {
                Error::Config(format!("unknown layer {name:?}; layers are {layers:?}"))
            })?;
            mask[i] = true;
        }
        Ok(ReuseMode::Custom(mask))
    }

    pub fn mask(&self, n_layers: usize) -> Result<Vec<bool>> {
        Ok(match self {
            ReuseMode::None => vec![false; n_layers],
            ReuseMode::Re => (0..n_layers).map(|i| i == 0).collect(),
            ReuseMode::Rw => (0..n_layers).map(|i| i > 0).collect(),
            ReuseMode::ReRw => vec![true; n_layers],
            ReuseMode::Custom(m) => {
                if m.len() != n_layers {
                    return Err(Error::Config(format!(
                        "tying mask has {} entries for {n_layers} layers",
                        m.len()
                    )));
                }
                m.clone()
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            ReuseMode::None => "none".into(),
            ReuseMode::Re => "re".into(),
            ReuseMode::Rw => "rw".into(),
            ReuseMode::ReRw => "rerw".into(),
            ReuseMode::Custom(m) => format!(
                "custom:{}",
                m.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>()
            ),
        }
    }
}

/// Rebinds every output-side slot of each masked layer to the storage of
/// the matching input-side slot. Must run before parameters are allocated.
pub fn apply_tying(
    layout: &mut ParamLayout,
    input_prefix: &str,
    output_prefix: &str,
    input_layers: &[Layer],
    output_layers: &[Layer],
    mask: &[bool],
) -> Result<Vec<String>> {
    if input_layers != output_layers {
        return Err(Error::Config(
            "input and output embedders differ structurally".into(),
        ));
    }
    if mask.len() != input_layers.len() {
        return Err(Error::Config(format!(
            "tying mask has {} entries for {} layers",
            mask.len(),
            input_layers.len()
        )));
    }
    let mut tied = Vec::new();
    for (layer, &on) in input_layers.iter().zip(mask) {
        if !on {
            continue;
        }
        for slot in &layer.slots {
            layout.tie(
                &format!("{output_prefix}.{slot}"),
                &format!("{input_prefix}.{slot}"),
            )?;
        }
        tied.push(layer.name.clone());
    }
    Ok(tied)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub mask: Vec<bool>,
    /// The mask is `{0..j}` for some `j` (tied consecutively bottom-up).
    pub bottom_up: bool,
    /// Neither empty nor the embedding table alone.
    pub in_reported_subset: bool,
}

/// All `2^n` tying masks of an `n`-layer embedder, ordered by their binary
/// value with layer 0 as the lowest bit.
pub fn enumerate_bottom_up(n: usize) -> Result<Vec<SweepEntry>> {
    if n == 0 || n > 16 {
        return Err(Error::Config(format!("cannot enumerate {n} layers")));
    }
    Ok((0u32..1 << n)
        .map(|bits| {
            let mask: Vec<bool> = (0..n).map(|i| bits & (1 << i) != 0).collect();
            let count = bits.count_ones() as usize;
            let bottom_up = bits != 0 && bits == (1u32 << count) - 1;
            SweepEntry {
                in_reported_subset: bits != 0 && bits != 1,
                bottom_up,
                mask,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TyingReport {
    /// Scalars summed over all slots, counting shared storages repeatedly.
    pub total_params: usize,
    /// Scalars summed over unique storages (the model size).
    pub unique_params: usize,
    pub tied_layer_names: Vec<String>,
}

pub fn count_parameters(layout: &ParamLayout, tied_layer_names: Vec<String>) -> TyingReport {
    TyingReport {
        total_params: layout.total_slot_param_count(),
        unique_params: layout.unique_param_count(),
        tied_layer_names,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_counts() {
        for (n, expected) in [(3, 6), (4, 14)] {
            let all = enumerate_bottom_up(n).unwrap();
            assert_eq!(all.len(), 1 << n);
            assert_eq!(all.iter().filter(|e| e.in_reported_subset).count(), expected);
        }
    }

    #[test]
    fn prefix_property() {
        let all = enumerate_bottom_up(3).unwrap();
        let find = |m: [bool; 3]| all.iter().find(|e| e.mask == m).unwrap().bottom_up;
        assert!(find([true, true, false]));
        assert!(!find([false, true, false]));
        assert!(!find([true, false, true]));
        assert!(!find([false, false, false]));
    }

    #[test]
    fn masks() {
        assert_eq!(ReuseMode::Re.mask(3).unwrap(), vec![true, false, false]);
        assert_eq!(ReuseMode::Rw.mask(3).unwrap(), vec![false, true, true]);
        assert!(ReuseMode::Custom(vec![true]).mask(3).is_err());
        let layers: Vec<String> = ["emb", "hw1", "hw2"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            ReuseMode::from_layer_list("hw2", &layers).unwrap().mask(3).unwrap(),
            vec![false, false, true]
        );
        assert!(ReuseMode::from_layer_list("cnn", &layers).is_err());
    }
}
