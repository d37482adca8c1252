//! Per-edge orthonormal frames and the scalarization that turns equivariant
//! vectors into invariant features.

use crate::vec3::{cross, dot, norm, normalize_clamped, scale, sub, Vec3};

/// Norm clamp for degenerate geometry.
pub const FRAME_EPS: f64 = 1e-8;

/// Right-handed orthonormal triple attached to a directed edge. `a` points
/// along the edge, `b` is normal to the plane the two endpoints span with
/// the origin, and `c` completes the basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub a: Vec3,
    pub b: Vec3,
    pub c: Vec3,
}

impl Frame {
    pub fn rows(&self) -> [Vec3; 3] {
        [self.a, self.b, self.c]
    }

    /// Largest deviation from the frame invariants: unit norms, pairwise
    /// orthogonality, and determinant +1.
    pub fn violation(&self) -> f64 {
        let det = dot(self.a, cross(self.b, self.c));
        [
            (norm(self.a) - 1.0).abs(),
            (norm(self.b) - 1.0).abs(),
            (norm(self.c) - 1.0).abs(),
            dot(self.a, self.b).abs(),
            dot(self.a, self.c).abs(),
            dot(self.b, self.c).abs(),
            (det - 1.0).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Builds the frame for one ordered position pair. `b` uses the absolute
/// positions, so callers must center their point cloud first if they want
/// translation-invariant frames.
pub fn frame_for_pair(xi: Vec3, xj: Vec3) -> Frame {
    let a = normalize_clamped(sub(xi, xj), FRAME_EPS);
    let planar = cross(xi, xj);
    let b = if norm(planar) < FRAME_EPS {
        // endpoints collinear with the origin: use the component of a fixed
        // reference axis orthogonal to a (prefer +z, else +x)
        let z = [0.0, 0.0, 1.0];
        let zc = sub(z, scale(a, dot(z, a)));
        if norm(zc) >= FRAME_EPS {
            normalize_clamped(zc, FRAME_EPS)
        } else {
            let x = [1.0, 0.0, 0.0];
            normalize_clamped(sub(x, scale(a, dot(x, a))), FRAME_EPS)
        }
    } else {
        scale(planar, 1.0 / norm(planar))
    };
    let c = cross(a, b);
    Frame { a, b, c }
}

/// Frames for every directed edge `(i, j)` of a centered point cloud.
pub fn localize(x0: &[Vec3], edges: &[(usize, usize)]) -> Vec<Frame> {
    edges
        .iter()
        .map(|&(i, j)| frame_for_pair(x0[i], x0[j]))
        .collect()
}

/// Projects each vector onto the frame axes, producing three invariant
/// scalars per channel: `(v.a, v.b, v.c)` for every `v`.
pub fn scalarize(vectors: &[Vec3], frame: &Frame) -> Vec<f64> {
    let mut out = Vec::with_capacity(vectors.len() * 3);
    for &v in vectors {
        out.push(dot(v, frame.a));
        out.push(dot(v, frame.b));
        out.push(dot(v, frame.c));
    }
    out
}
