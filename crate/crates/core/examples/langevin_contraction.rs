//! Langevin chains on E = |l|^2 / 2: noiseless contraction by (1 - eta) per
//! step, and the stationary variance 1 / (1 - eta / 2) with noise on.

use thoughtcal::langevin::calibrate;
use thoughtcal::rng::{stream_rng, Stream};
use thoughtcal::{Context, LangevinConfig, QuadraticEnergy, Result, Tensor, ThoughtBlock};

fn main() -> Result<()> {
    let energy = QuadraticEnergy::new(1.0);
    let ctx = Context::empty();
    let mut rng = stream_rng(0, Stream::Langevin, 0);

    let init = ThoughtBlock::new(Tensor::new(vec![1, 1], vec![4.0])?)?;
    let traj = calibrate(&energy, &ctx, &init, &LangevinConfig::new(0.1, 3, false), &mut rng)?;
    for (s, (state, e)) in traj.states().iter().zip(traj.energies()).enumerate() {
        println!("step {s}: l = {:.6}, E = {e:.6}", state.tensor().data()[0]);
    }

    let eta = 0.05;
    let init = ThoughtBlock::new(Tensor::zeros(&[8, 8]))?;
    let traj = calibrate(&energy, &ctx, &init, &LangevinConfig::new(eta, 12_000, true), &mut rng)?;
    let samples: Vec<f64> = traj.states()[2_000..].iter().flat_map(|s| s.tensor().data().to_vec()).collect();
    let var = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
    println!("empirical variance {var:.4}, fixed point {:.4}", 1.0 / (1.0 - eta / 2.0));
    Ok(())
}
