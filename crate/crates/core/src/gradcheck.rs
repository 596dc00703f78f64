//! Finite-difference oracles and error metrics used to audit the tape.
//!
//! Nothing here touches [`crate::tape`]; the oracles only evaluate forward maps.

use crate::error::Result;
use crate::tensor::Tensor;

/// Default central-difference perturbation.
pub const FD_STEP: f64 = 1e-4;

/// `max |a - b| / max(max |a|, max |b|)`, with a floor on the denominator so
/// that two vanishing gradients compare as equal.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "rel_error length mismatch");
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a
        .iter()
        .chain(b)
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1e-10);
    diff / scale
}

/// Central differences of a scalar function of a flat vector.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Dense Hessian by central differences of an analytic gradient. Row `i`
/// holds `d grad / d x_i`; the result is symmetrised.
pub fn dense_hessian<G>(mut grad: G, x: &Tensor, h: f64) -> Result<Vec<Vec<f64>>>
where
    G: FnMut(&Tensor) -> Result<Tensor>,
{
    let n = x.numel();
    let mut rows = Vec::with_capacity(n);
    let mut probe = x.clone();
    for i in 0..n {
        probe.data_mut()[i] = x.data()[i] + h;
        let up = grad(&probe)?;
        probe.data_mut()[i] = x.data()[i] - h;
        let down = grad(&probe)?;
        probe.data_mut()[i] = x.data()[i];
        rows.push(
            up.data()
                .iter()
                .zip(down.data())
                .map(|(u, d)| (u - d) / (2.0 * h))
                .collect::<Vec<_>>(),
        );
    }
    let mut sym = rows.clone();
    for i in 0..n {
        for j in 0..n {
            sym[i][j] = 0.5 * (rows[i][j] + rows[j][i]);
        }
    }
    Ok(sym)
}

pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}
