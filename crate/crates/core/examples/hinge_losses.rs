//! Hinge, consistency and combined losses on a few hand-picked inputs.

use thoughtcal::losses::{consistency_loss, ebm_loss_batch, hinge_loss, total_loss, EbmPair};
use thoughtcal::{HingeOrientation, LossConfig, Result, Tensor};

fn main() -> Result<()> {
    for (e_raw, e_cal, m) in [(0.5, 0.2, 0.0), (0.2, 0.9, 0.5), (0.4, 0.4, 1.0)] {
        println!(
            "E(raw)={e_raw} E(cal)={e_cal} m={m}: hinge {} (swapped {})",
            hinge_loss(e_raw, e_cal, m, HingeOrientation::Paper),
            hinge_loss(e_raw, e_cal, m, HingeOrientation::Swapped)
        );
    }
    let raw = Tensor::vector(vec![0.0, 0.0]);
    let cal = Tensor::vector(vec![3.0, 4.0]);
    println!("consistency, difference [3, 4], lambda 0.1: {}", consistency_loss(&cal, &raw, 0.1)?);

    let cfg = LossConfig::default();
    let pairs = [
        EbmPair { e_raw: 0.5, e_cal: 0.2, l_raw: &raw, l_cal: &cal },
        EbmPair { e_raw: -1.0, e_cal: 0.5, l_raw: &raw, l_cal: &raw },
    ];
    let l_ebm = ebm_loss_batch(&pairs, &cfg)?;
    println!("batch energy loss {l_ebm}, total with L_LM = 2.0: {}", total_loss(2.0, l_ebm, cfg.alpha));
    Ok(())
}
