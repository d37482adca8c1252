//! Shared builders for the model tests.

use diffcore::DetRng;
use geomkit::{fully_connected, GeoGraph};

/// Fully connected graph with random geometry and random feature blocks of
/// the given widths. Vector features are arbitrary; the harness transforms
/// them together with the positions.
pub fn random_graph(
    rng: &mut DetRng,
    n: usize,
    node_s: usize,
    node_v: usize,
    edge_s: usize,
    edge_v: usize,
) -> GeoGraph {
    let positions = (0..n)
        .map(|_| [rng.normal(), rng.normal(), rng.normal()])
        .collect::<Vec<_>>();
    let edges = fully_connected(n);
    let e = edges.len();
    let g = GeoGraph {
        positions,
        edges,
        node_scalars: (0..n * node_s).map(|_| rng.normal()).collect(),
        node_scalar_width: node_s,
        node_vectors: (0..n * node_v)
            .map(|_| [rng.normal(), rng.normal(), rng.normal()])
            .collect(),
        node_vector_width: node_v,
        edge_scalars: (0..e * edge_s).map(|_| rng.normal()).collect(),
        edge_scalar_width: edge_s,
        edge_vectors: (0..e * edge_v)
            .map(|_| [rng.normal(), rng.normal(), rng.normal()])
            .collect(),
        edge_vector_width: edge_v,
        centroid: None,
    };
    g.validate().unwrap();
    g
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
