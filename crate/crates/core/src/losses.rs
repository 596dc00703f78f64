//! Hinge contrast, consistency regulariser and the combined objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which energy the hinge pushes down.
///
/// `Paper` is `max(0, E(raw) - E(cal) + m)`: satisfied once the raw latent
/// sits at least `m` below the calibrated one. `Swapped` is the usual
/// contrastive direction `max(0, E(cal) - E(raw) + m)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingeOrientation {
    #[default]
    Paper,
    Swapped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub margin: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub hinge_orientation: HingeOrientation,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 1.0,
            lambda: 0.1,
            alpha: 0.1,
            hinge_orientation: HingeOrientation::Paper,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("margin", self.margin), ("lambda", self.lambda), ("alpha", self.alpha)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

fn hinge_argument(e_raw: f64, e_cal: f64, margin: f64, orientation: HingeOrientation) -> f64 {
    match orientation {
        HingeOrientation::Paper => e_raw - e_cal + margin,
        HingeOrientation::Swapped => e_cal - e_raw + margin,
    }
}

/// Hinge on the energies of the raw and calibrated latents.
pub fn hinge_loss(e_raw: f64, e_cal: f64, margin: f64, orientation: HingeOrientation) -> f64 {
    hinge_argument(e_raw, e_cal, margin, orientation).max(0.0)
}

/// Subgradient `(d/de_raw, d/de_cal)` of [`hinge_loss`]. The hinge is closed
/// at its kink: an argument of exactly zero gives `(0, 0)`.
pub fn hinge_subgradient(e_raw: f64, e_cal: f64, margin: f64, orientation: HingeOrientation) -> (f64, f64) {
    if hinge_argument(e_raw, e_cal, margin, orientation) > 0.0 {
        match orientation {
            HingeOrientation::Paper => (1.0, -1.0),
            HingeOrientation::Swapped => (-1.0, 1.0),
        }
    } else {
        (0.0, 0.0)
    }
}

/// `lambda * |l_cal - l_raw|^2`
pub fn consistency_loss(l_cal: &Tensor, l_raw: &Tensor, lambda: f64) -> Result<f64> {
    Ok(lambda * l_cal.sub(l_raw)?.sq_norm())
}

/// `d/dl_cal` of [`consistency_loss`]; the raw-side gradient is its negation.
pub fn consistency_grad(l_cal: &Tensor, l_raw: &Tensor, lambda: f64) -> Result<Tensor> {
    Ok(l_cal.sub(l_raw)?.scale(2.0 * lambda))
}

/// One batch element of the energy objective.
#[derive(Clone, Debug)]
pub struct EbmPair<'a> {
    pub e_raw: f64,
    pub e_cal: f64,
    pub l_raw: &'a Tensor,
    pub l_cal: &'a Tensor,
}

/// Hinge plus consistency for a single pair.
pub fn ebm_loss_single(pair: &EbmPair<'_>, cfg: &LossConfig) -> Result<f64> {
    Ok(hinge_loss(pair.e_raw, pair.e_cal, cfg.margin, cfg.hinge_orientation)
        + consistency_loss(pair.l_cal, pair.l_raw, cfg.lambda)?)
}

/// Batch mean of hinge plus consistency.
pub fn ebm_loss_batch(pairs: &[EbmPair<'_>], cfg: &LossConfig) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("ebm_loss_batch"));
    }
    let mut total = 0.0;
    for p in pairs {
        total += ebm_loss_single(p, cfg)?;
    }
    Ok(total / pairs.len() as f64)
}

/// `l_lm + alpha * l_ebm`
pub fn total_loss(l_lm: f64, l_ebm: f64, alpha: f64) -> f64 {
    l_lm + alpha * l_ebm
}
