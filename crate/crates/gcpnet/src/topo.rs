//! Bridging between featurized graphs and the tensor engine.

use std::rc::Rc;

use diffcore::Tensor;
use geomkit::{Frame, GeoGraph, Vec3};

use crate::error::Result;

/// Directed-edge topology shared by every module in a forward pass. Edge
/// `e` carries information from `src[e]` into `dst[e]`.
#[derive(Clone, Debug)]
pub struct GraphTopo {
    pub n_nodes: usize,
    pub dst: Rc<Vec<usize>>,
    pub src: Rc<Vec<usize>>,
}

impl GraphTopo {
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> GraphTopo {
        GraphTopo {
            n_nodes,
            dst: Rc::new(edges.iter().map(|&(i, _)| i).collect()),
            src: Rc::new(edges.iter().map(|&(_, j)| j).collect()),
        }
    }

    pub fn n_edges(&self) -> usize {
        self.dst.len()
    }
}

/// Per-edge frames as a constant `[E, 3, 3]` tensor with rows (a, b, c).
pub fn frames_tensor(frames: &[Frame]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(frames.len() * 9);
    for f in frames {
        for row in f.rows() {
            data.extend_from_slice(&row);
        }
    }
    Ok(Tensor::from_vec(&[frames.len(), 3, 3], data)?)
}

pub fn positions_tensor(x: &[Vec3]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(x.len() * 3);
    for p in x {
        data.extend_from_slice(p);
    }
    Ok(Tensor::from_vec(&[x.len(), 3], data)?)
}

fn vectors_tensor(rows: usize, width: usize, flat: &[Vec3]) -> Result<Option<Tensor>> {
    if width == 0 {
        return Ok(None);
    }
    let mut data = Vec::with_capacity(rows * width * 3);
    for v in flat {
        data.extend_from_slice(v);
    }
    Ok(Some(Tensor::from_vec(&[rows, width, 3], data)?))
}

fn scalars_tensor(rows: usize, width: usize, flat: &[f64]) -> Result<Option<Tensor>> {
    if width == 0 {
        return Ok(None);
    }
    Ok(Some(Tensor::from_vec(&[rows, width], flat.to_vec())?))
}

/// Constant input tensors for the node feature block of a graph.
pub fn node_features(g: &GeoGraph) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let n = g.n_nodes();
    Ok((
        scalars_tensor(n, g.node_scalar_width, &g.node_scalars)?,
        vectors_tensor(n, g.node_vector_width, &g.node_vectors)?,
    ))
}

/// Constant input tensors for the edge feature block of a graph.
pub fn edge_features(g: &GeoGraph) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let e = g.n_edges();
    Ok((
        scalars_tensor(e, g.edge_scalar_width, &g.edge_scalars)?,
        vectors_tensor(e, g.edge_vector_width, &g.edge_vectors)?,
    ))
}
