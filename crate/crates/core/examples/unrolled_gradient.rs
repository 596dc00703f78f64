//! Gradient of a loss on the final Langevin state with respect to the energy
//! parameters, three ways: closed form, reverse mode through the chain, and
//! central differences with the noise held fixed.

use thoughtcal::agreement::run_case;
use thoughtcal::Result;

fn main() -> Result<()> {
    println!("case  dim  hidden    S   eta    params  closed/tape  closed/fd  tape/fd");
    for i in 0..8 {
        let c = run_case(0, i)?;
        println!(
            "{:>4} {:>4}  {:<8} {:>2}  {:.3}  {:>6}  {:>11.2e}  {:>9.2e}  {:>7.2e}",
            c.index,
            c.latent_dim,
            format!("{:?}", c.hidden),
            c.steps,
            c.eta,
            c.n_params,
            c.closed_vs_tape,
            c.closed_vs_fd,
            c.tape_vs_fd
        );
    }
    Ok(())
}
