use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Prng;

/// Which tokens enter the encoder. Both lists are ascending and together
/// form a permutation of `0..n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub visible: Vec<usize>,
    pub masked: Vec<usize>,
    pub ratio: f64,
}

impl MaskPlan {
    /// Every token visible.
    pub fn full(n: usize) -> Self {
        MaskPlan {
            visible: (0..n).collect(),
            masked: Vec::new(),
            ratio: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.visible.len() + self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Masks `round(r * n)` tokens (halves round away from zero), chosen as the
/// head of a Fisher-Yates shuffle. With nothing to mask the generator is not
/// advanced.
pub fn make_mask_plan(n: usize, r: f64, rng: &mut Prng) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::contract(format!("mask ratio {r} outside [0, 1)")));
    }
    let count = (r * n as f64).round() as usize;
    if count == 0 {
        return Ok(MaskPlan {
            ratio: r,
            ..MaskPlan::full(n)
        });
    }
    if count >= n {
        return Err(Error::contract(format!(
            "mask ratio {r} masks all {n} tokens; nothing left to encode"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut masked = order[..count].to_vec();
    let mut visible = order[count..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();
    Ok(MaskPlan {
        visible,
        masked,
        ratio: r,
    })
}
