//! Featurized geometric graphs and the transforms the test harness applies
//! to them.

use crate::error::{GeomError, Result};
use crate::transform::{mat_vec, Mat3};
use crate::vec3::{add, scale, sub, Vec3};

/// Node positions, directed edges, and the four feature blocks. An edge
/// `(i, j)` carries information from source `j` into destination `i`; its
/// frame is built from `(x_i, x_j)`.
///
/// Vector feature blocks are stored channel-major: entry `n * width + k` is
/// channel `k` of row `n`.
#[derive(Clone, Debug, Default)]
pub struct GeoGraph {
    pub positions: Vec<Vec3>,
    pub edges: Vec<(usize, usize)>,
    pub node_scalars: Vec<f64>,
    pub node_scalar_width: usize,
    pub node_vectors: Vec<Vec3>,
    pub node_vector_width: usize,
    pub edge_scalars: Vec<f64>,
    pub edge_scalar_width: usize,
    pub edge_vectors: Vec<Vec3>,
    pub edge_vector_width: usize,
    /// Set by `centralize`; consumed by `decentralize`.
    pub centroid: Option<Vec3>,
}

impl GeoGraph {
    pub fn n_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        for &(i, j) in &self.edges {
            if i == j {
                return Err(GeomError::Graph(format!("self-loop on node {i}")));
            }
            if i >= n || j >= n {
                return Err(GeomError::Graph(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
        }
        let checks = [
            (self.node_scalars.len(), n * self.node_scalar_width, "node scalars"),
            (self.node_vectors.len(), n * self.node_vector_width, "node vectors"),
            (
                self.edge_scalars.len(),
                self.n_edges() * self.edge_scalar_width,
                "edge scalars",
            ),
            (
                self.edge_vectors.len(),
                self.n_edges() * self.edge_vector_width,
                "edge vectors",
            ),
        ];
        for (got, want, what) in checks {
            if got != want {
                return Err(GeomError::Graph(format!(
                    "{what}: {got} entries, expected {want}"
                )));
            }
        }
        Ok(())
    }

    /// Removes the center of mass in place and remembers it.
    pub fn centralize(&mut self) -> Vec3 {
        let (centered, centroid) = centralize(&self.positions);
        self.positions = centered;
        self.centroid = Some(centroid);
        centroid
    }

    /// Adds the stored centroid back.
    pub fn decentralize(&mut self) -> Result<()> {
        let centroid = self
            .centroid
            .take()
            .ok_or_else(|| GeomError::Graph("decentralize without a stored centroid".into()))?;
        self.positions = decentralize(&self.positions, centroid);
        Ok(())
    }

    /// Applies a linear map to all geometry: positions, node vector
    /// channels, and edge vector channels.
    pub fn linear_mapped(&self, m: &Mat3) -> GeoGraph {
        let mut out = self.clone();
        out.positions = self.positions.iter().map(|&p| mat_vec(m, p)).collect();
        out.node_vectors = self.node_vectors.iter().map(|&v| mat_vec(m, v)).collect();
        out.edge_vectors = self.edge_vectors.iter().map(|&v| mat_vec(m, v)).collect();
        out.centroid = self.centroid.map(|c| mat_vec(m, c));
        out
    }

    /// Translates positions only; feature vectors are directions, not points.
    pub fn translated(&self, t: Vec3) -> GeoGraph {
        let mut out = self.clone();
        out.positions = self.positions.iter().map(|&p| add(p, t)).collect();
        out.centroid = self.centroid.map(|c| add(c, t));
        out
    }

    /// Central inversion of all geometry.
    pub fn reflected(&self) -> GeoGraph {
        let mut out = self.clone();
        out.positions = self.positions.iter().map(|&p| scale(p, -1.0)).collect();
        out.node_vectors = self.node_vectors.iter().map(|&v| scale(v, -1.0)).collect();
        out.edge_vectors = self.edge_vectors.iter().map(|&v| scale(v, -1.0)).collect();
        out.centroid = self.centroid.map(|c| scale(c, -1.0));
        out
    }

    /// Relabels nodes: old node `i` becomes `perm[i]`. Edge storage order is
    /// unchanged, only the endpoint labels move.
    pub fn permuted(&self, perm: &[usize]) -> Result<GeoGraph> {
        let n = self.n_nodes();
        if perm.len() != n {
            return Err(GeomError::Graph("permutation length mismatch".into()));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(GeomError::Graph("not a permutation".into()));
            }
            seen[p] = true;
        }
        let mut out = self.clone();
        for (i, &p) in perm.iter().enumerate() {
            out.positions[p] = self.positions[i];
            let sw = self.node_scalar_width;
            out.node_scalars[p * sw..(p + 1) * sw]
                .copy_from_slice(&self.node_scalars[i * sw..(i + 1) * sw]);
            let vw = self.node_vector_width;
            out.node_vectors[p * vw..(p + 1) * vw]
                .copy_from_slice(&self.node_vectors[i * vw..(i + 1) * vw]);
        }
        out.edges = self
            .edges
            .iter()
            .map(|&(i, j)| (perm[i], perm[j]))
            .collect();
        Ok(out)
    }
}

/// Subtracts the mean position; returns the centered cloud and the centroid.
pub fn centralize(x: &[Vec3]) -> (Vec<Vec3>, Vec3) {
    assert!(!x.is_empty(), "centralize of an empty point set");
    let mut centroid = [0.0; 3];
    for p in x {
        centroid = add(centroid, *p);
    }
    centroid = scale(centroid, 1.0 / x.len() as f64);
    (x.iter().map(|&p| sub(p, centroid)).collect(), centroid)
}

/// Inverse of `centralize` for a matching centroid.
pub fn decentralize(x: &[Vec3], centroid: Vec3) -> Vec<Vec3> {
    x.iter().map(|&p| add(p, centroid)).collect()
}
