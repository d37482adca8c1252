//! k-nearest-neighbor graph construction.

use crate::error::{GeomError, Result};
use crate::vec3::{dot, sub, Vec3};

/// Directed edges `(i, j)` connecting each node `i` to its `k` nearest
/// neighbors `j` by Euclidean distance, ties broken by smaller index.
/// Edges are emitted grouped by destination in ascending node order, so the
/// result is deterministic and independent of input perturbations that do
/// not change the distance ranking.
pub fn knn_graph(x: &[Vec3], k: usize) -> Result<Vec<(usize, usize)>> {
    let n = x.len();
    if k == 0 || k >= n {
        return Err(GeomError::Parameter(format!(
            "knn_graph requires 1 <= k < n, got k = {k}, n = {n}"
        )));
    }
    let mut edges = Vec::with_capacity(n * k);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        candidates.clear();
        for (j, &xj) in x.iter().enumerate() {
            if j != i {
                let d = sub(x[i], xj);
                candidates.push((dot(d, d), j));
            }
        }
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in candidates.iter().take(k) {
            edges.push((i, j));
        }
    }
    Ok(edges)
}

/// All ordered pairs; the graph used when every body interacts with every
/// other.
pub fn fully_connected(n: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(n.saturating_sub(1) * n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                edges.push((i, j));
            }
        }
    }
    edges
}
