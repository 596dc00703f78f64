//! Reverse-mode gradients of a two-layer tanh network against central
//! differences, plus a second derivative taken through the tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thoughtcal::gradcheck::{central_difference, rel_error, FD_STEP};
use thoughtcal::{ParamSet, Result, Tape, Tensor};

fn loss(tape: &mut Tape, params: &ParamSet, x: &Tensor) -> Result<(thoughtcal::Var, thoughtcal::ParamVars)> {
    let vars = params.register(tape, true)?;
    let x = tape.constant(x.clone())?;
    let h = tape.matmul(x, vars.get("w1")?)?;
    let h = tape.add_row(h, vars.get("b1")?)?;
    let h = tape.tanh(h)?;
    let y = tape.matmul(h, vars.get("w2")?)?;
    let out = tape.sq_norm(y)?;
    Ok((out, vars))
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = ParamSet::new();
    params.insert("w1", Tensor::randn(&[3, 5], 0.7, &mut rng));
    params.insert("b1", Tensor::randn(&[5], 0.1, &mut rng));
    params.insert("w2", Tensor::randn(&[5, 2], 0.7, &mut rng));
    let x = Tensor::randn(&[4, 3], 1.0, &mut rng);

    let mut tape = Tape::new();
    let (out, vars) = loss(&mut tape, &params, &x)?;
    let analytic = vars.gradients(&mut tape, out)?;

    let mut probe = params.clone();
    let numeric = central_difference(
        |flat| {
            probe.assign_flat(flat)?;
            let mut t = Tape::new();
            let (o, _) = loss(&mut t, &probe, &x)?;
            t.value(o).item()
        },
        &params.flatten(),
        FD_STEP,
    )?;
    println!("loss {:.6}", tape.value(out).item()?);
    println!("{} parameters, relative error {:.2e}", numeric.len(), rel_error(&analytic.flatten(), &numeric));

    // d^2/dx^2 tanh(x) = -2 tanh(x) (1 - tanh(x)^2)
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.4))?;
    let y = tape.tanh(x)?;
    let dy = tape.grad(y, &[x])?[0];
    let d2y = tape.gradients(dy, &[x])?.remove(0).item()?;
    let t = 0.4f64.tanh();
    println!("second derivative of tanh at 0.4: {d2y:.12} (closed form {:.12})", -2.0 * t * (1.0 - t * t));
    Ok(())
}
