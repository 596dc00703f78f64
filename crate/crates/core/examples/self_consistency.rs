//! Majority voting over sampled chains, pass@1, pass@N and the consistency
//! rate.

use thoughtcal::eval::{consistency_rate, majority_vote, pass_at_1, pass_at_n};
use thoughtcal::Result;

fn main() -> Result<()> {
    let chains = vec![vec![4, 4, 7, 4, 1], vec![2, 3, 3, 2, 5], vec![9, 0, 0, 9, 9], vec![6, 6, 6, 6, 6]];
    let gold = [4, 2, 0, 6];
    for (c, g) in chains.iter().zip(gold) {
        println!("chains {c:?} vote {} gold {g}", majority_vote(c)?);
    }
    let acc1 = pass_at_1(&chains, &gold, 5)?;
    let accn = pass_at_n(&chains, &gold, 5)?;
    println!("pass@1 {acc1:.2}  pass@5 {accn:.2}  consistency {:.2}", consistency_rate(acc1, accn)?);
    println!("consistency_rate(85.26, 90.48) = {:.2}", consistency_rate(85.26, 90.48)?);
    Ok(())
}
