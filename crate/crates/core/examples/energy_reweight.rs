//! Residual energy reweighting of a base next-token distribution at a few
//! temperatures, and the Boltzmann reading of logits.

use thoughtcal::energy::{logits_to_energies, partition_function, residual_reweight};
use thoughtcal::Result;

fn main() -> Result<()> {
    let base = [0.5, 0.3, 0.2];
    let energies = [1.0, 0.0, -0.5];
    println!("base     {base:?}");
    for t in [0.25, 1.0, 4.0, 1e6] {
        let p = residual_reweight(&base, &energies, t)?;
        let z = partition_function(&base, &energies, t)?;
        println!("T={t:<8} Z={z:.4} p={:?}", p.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>());
    }

    let logits = [2.0, 0.5, -1.0];
    let uniform = [1.0 / 3.0; 3];
    let boltzmann = residual_reweight(&uniform, &logits_to_energies(&logits)?, 1.0)?;
    println!("softmax of {logits:?} as a Boltzmann distribution: {boltzmann:.4?}");
    Ok(())
}
