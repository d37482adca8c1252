//! Central finite-difference harness for validating analytic gradients.

use crate::tensor::Tensor;

/// Largest relative error between analytic gradients already stored on
/// `params` and central differences of `forward`. `forward` must rebuild the
/// computation and return the loss value; it is called twice per parameter
/// entry. Entries where both estimates are below `1e-8` in magnitude count
/// as exact.
pub fn max_rel_error(
    forward: &mut dyn FnMut() -> f64,
    params: &[Tensor],
    h: f64,
) -> f64 {
    let mut worst = 0.0_f64;
    for param in params {
        let analytic = param
            .grad()
            .expect("gradcheck: parameter has no analytic gradient");
        for i in 0..param.numel() {
            param.fd_perturb(i, h);
            let plus = forward();
            param.fd_perturb(i, -2.0 * h);
            let minus = forward();
            param.fd_perturb(i, h);
            let fd = (plus - minus) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs());
            if denom > 1e-8 {
                worst = worst.max((fd - analytic[i]).abs() / denom);
            }
        }
    }
    worst
}
