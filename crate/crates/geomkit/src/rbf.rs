//! Gaussian radial basis expansion of distances.

use crate::error::{GeomError, Result};

/// Expands a distance into `n_rbf` Gaussian responses with centers evenly
/// spaced on `[0, d_max]` and width equal to the center spacing. A distance
/// sitting exactly on a center scores 1.0 there.
pub fn rbf_encode(d: f64, n_rbf: usize, d_max: f64) -> Result<Vec<f64>> {
    if n_rbf < 2 {
        return Err(GeomError::Parameter(format!(
            "rbf_encode needs at least 2 basis functions, got {n_rbf}"
        )));
    }
    if d_max <= 0.0 {
        return Err(GeomError::Parameter(format!(
            "rbf_encode needs d_max > 0, got {d_max}"
        )));
    }
    debug_assert!(d >= 0.0, "rbf_encode called with negative distance");
    let spacing = d_max / (n_rbf - 1) as f64;
    let denom = 2.0 * spacing * spacing;
    Ok((0..n_rbf)
        .map(|k| {
            let delta = d - k as f64 * spacing;
            (-delta * delta / denom).exp()
        })
        .collect())
}
