//! Paired invariant-scalar / equivariant-vector feature channels.

use diffcore::Tensor;

use crate::error::{ModelError, Result};

/// Feature tuple `(s, V)` for a set of nodes or edges: `s` is `[rows, t]`
/// invariant scalars, `V` is `[rows, r, 3]` equivariant vector channels.
/// Either side may be absent (width zero), never both.
#[derive(Clone, Debug)]
pub struct ScalarVector {
    pub s: Option<Tensor>,
    pub v: Option<Tensor>,
}

impl ScalarVector {
    pub fn new(s: Option<Tensor>, v: Option<Tensor>) -> Result<ScalarVector> {
        if s.is_none() && v.is_none() {
            return Err(ModelError::Config(
                "scalar and vector channels cannot both be absent".into(),
            ));
        }
        if let (Some(s), Some(v)) = (&s, &v) {
            if s.shape()[0] != v.shape()[0] {
                return Err(ModelError::Config(format!(
                    "scalar rows {} != vector rows {}",
                    s.shape()[0],
                    v.shape()[0]
                )));
            }
        }
        Ok(ScalarVector { s, v })
    }

    pub fn rows(&self) -> usize {
        match (&self.s, &self.v) {
            (Some(s), _) => s.shape()[0],
            (None, Some(v)) => v.shape()[0],
            (None, None) => 0,
        }
    }

    pub fn scalar_width(&self) -> usize {
        self.s.as_ref().map_or(0, |s| s.shape()[1])
    }

    pub fn vector_width(&self) -> usize {
        self.v.as_ref().map_or(0, |v| v.shape()[1])
    }

    /// Channel-wise sum on both sides; widths must match.
    pub fn add(&self, other: &ScalarVector) -> Result<ScalarVector> {
        let s = match (&self.s, &other.s) {
            (Some(a), Some(b)) => Some(a.add(b)?),
            (None, None) => None,
            _ => {
                return Err(ModelError::Config(
                    "residual add: scalar channels present on one side only".into(),
                ))
            }
        };
        let v = match (&self.v, &other.v) {
            (Some(a), Some(b)) => Some(a.add(b)?),
            (None, None) => None,
            _ => {
                return Err(ModelError::Config(
                    "residual add: vector channels present on one side only".into(),
                ))
            }
        };
        ScalarVector::new(s, v)
    }

    pub fn is_finite(&self) -> bool {
        self.s.as_ref().map_or(true, Tensor::is_finite)
            && self.v.as_ref().map_or(true, Tensor::is_finite)
    }
}
