//! Hessian-vector products by central differences of an analytic gradient.

use crate::error::{Error, Result};
use crate::tape::check_same_shape;
use crate::tensor::Tensor;

/// Relative step used by [`hvp_latent`]: `h = HVP_STEP * (1 + |l|_inf)`.
pub const HVP_STEP: f64 = 1e-4;

/// `(d^2 f / d l^2) v` given `grad = nabla f`.
///
/// The probe direction is `v / |v|_inf` and the result is rescaled, so the
/// perturbation size does not depend on the magnitude of `v`.
pub fn hvp_latent<G>(mut grad: G, l: &Tensor, v: &Tensor) -> Result<Tensor>
where
    G: FnMut(&Tensor) -> Result<Tensor>,
{
    check_same_shape("hvp_latent", l, v)?;
    let vmax = v.max_abs();
    if vmax == 0.0 {
        return Ok(Tensor::zeros(v.shape()));
    }
    let h = HVP_STEP * (1.0 + l.max_abs());
    let dir = v.scale(1.0 / vmax);
    let mut up = l.clone();
    up.axpy(h, &dir)?;
    let mut down = l.clone();
    down.axpy(-h, &dir)?;
    let gu = grad(&up)?;
    let gd = grad(&down)?;
    let out = gu.sub(&gd)?.scale(vmax / (2.0 * h));
    if !out.is_finite() {
        return Err(Error::NonFinite {
            op: "hvp_latent".into(),
        });
    }
    Ok(out)
}
