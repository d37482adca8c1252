//! The differentiable primitives.
//!
//! Shapes follow a few fixed conventions: matrices are `[rows, cols]`,
//! vector-channel blocks are `[rows, channels, 3]`, and losses reduce to a
//! single-element tensor. Backward formulas accumulate into every parent
//! that requires gradients and leave the others untouched.

use std::rc::Rc;

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;
const VEC_NORM_EPS: f64 = 1e-8;

pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    AddBias(Tensor, Tensor),
    Matmul(Tensor, Tensor),
    ChannelLinear(Tensor, Tensor),
    Scalarize(Tensor, Tensor),
    RowNorms(Tensor),
    ConcatCols(Vec<Tensor>),
    ConcatChannels(Vec<Tensor>),
    GatherRows(Tensor, Rc<Vec<usize>>),
    ScatterMean(Tensor, Rc<Vec<usize>>, Vec<f64>),
    Sigmoid(Tensor),
    Relu(Tensor),
    SmoothGate(Tensor),
    LayerNorm(Tensor, Vec<f64>),
    VectorRmsNorm(Tensor, Vec<f64>),
    VectorGate(Tensor, Tensor),
    Reshape(Tensor),
    MeanRows(Tensor),
    MseLoss(Tensor, Rc<Vec<f64>>),
    CrossEntropy(Tensor, Rc<Vec<usize>>, Vec<f64>),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddBias(..) => "add_bias",
            Op::Matmul(..) => "matmul",
            Op::ChannelLinear(..) => "channel_linear",
            Op::Scalarize(..) => "scalarize",
            Op::RowNorms(..) => "row_norms",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatChannels(..) => "concat_channels",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterMean(..) => "scatter_mean",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::SmoothGate(..) => "smooth_gate",
            Op::LayerNorm(..) => "layer_norm",
            Op::VectorRmsNorm(..) => "vector_rms_norm",
            Op::VectorGate(..) => "vector_gate",
            Op::Reshape(..) => "reshape",
            Op::MeanRows(..) => "mean_rows",
            Op::MseLoss(..) => "mse_loss",
            Op::CrossEntropy(..) => "cross_entropy",
        }
    }

    pub(crate) fn parents(&self) -> Vec<Tensor> {
        match self {
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBias(a, b)
            | Op::Matmul(a, b)
            | Op::ChannelLinear(a, b)
            | Op::Scalarize(a, b)
            | Op::VectorGate(a, b) => vec![a.clone(), b.clone()],
            Op::Scale(a, _)
            | Op::RowNorms(a)
            | Op::GatherRows(a, _)
            | Op::ScatterMean(a, _, _)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::SmoothGate(a)
            | Op::LayerNorm(a, _)
            | Op::VectorRmsNorm(a, _)
            | Op::Reshape(a)
            | Op::MeanRows(a)
            | Op::MseLoss(a, _)
            | Op::CrossEntropy(a, _, _) => vec![a.clone()],
            Op::ConcatCols(parts) | Op::ConcatChannels(parts) => parts.clone(),
        }
    }

    pub(crate) fn backward(&self, g: &[f64], out: &[f64]) {
        match self {
            Op::Add(a, b) => {
                if a.requires_grad() {
                    a.accumulate_grad(g);
                }
                if b.requires_grad() {
                    b.accumulate_grad(g);
                }
            }
            Op::Sub(a, b) => {
                if a.requires_grad() {
                    a.accumulate_grad(g);
                }
                if b.requires_grad() {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    b.accumulate_grad(&neg);
                }
            }
            Op::Mul(a, b) => {
                if a.requires_grad() {
                    let bd = b.inner.borrow();
                    let ga: Vec<f64> = g.iter().zip(bd.data.iter()).map(|(g, b)| g * b).collect();
                    drop(bd);
                    a.accumulate_grad(&ga);
                }
                if b.requires_grad() {
                    let ad = a.inner.borrow();
                    let gb: Vec<f64> = g.iter().zip(ad.data.iter()).map(|(g, a)| g * a).collect();
                    drop(ad);
                    b.accumulate_grad(&gb);
                }
            }
            Op::Scale(a, c) => {
                if a.requires_grad() {
                    let ga: Vec<f64> = g.iter().map(|v| v * c).collect();
                    a.accumulate_grad(&ga);
                }
            }
            Op::AddBias(a, b) => {
                if a.requires_grad() {
                    a.accumulate_grad(g);
                }
                if b.requires_grad() {
                    let d = b.numel();
                    let mut gb = vec![0.0; d];
                    for row in g.chunks_exact(d) {
                        for (gb, gv) in gb.iter_mut().zip(row) {
                            *gb += gv;
                        }
                    }
                    b.accumulate_grad(&gb);
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = {
                    let s = a.inner.borrow();
                    (s.shape[0], s.shape[1])
                };
                let n = b.inner.borrow().shape[1];
                if a.requires_grad() {
                    // ga = g . b^T
                    let bd = b.inner.borrow();
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let garow = &mut ga[i * k..(i + 1) * k];
                        for (p, gav) in garow.iter_mut().enumerate() {
                            let brow = &bd.data[p * n..(p + 1) * n];
                            *gav = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    drop(bd);
                    a.accumulate_grad(&ga);
                }
                if b.requires_grad() {
                    // gb = a^T . g
                    let ad = a.inner.borrow();
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let arow = &ad.data[i * k..(i + 1) * k];
                        let grow = &g[i * n..(i + 1) * n];
                        for (p, &av) in arow.iter().enumerate() {
                            if av != 0.0 {
                                let gbrow = &mut gb[p * n..(p + 1) * n];
                                for (gbv, &gv) in gbrow.iter_mut().zip(grow) {
                                    *gbv += av * gv;
                                }
                            }
                        }
                    }
                    drop(ad);
                    b.accumulate_grad(&gb);
                }
            }
            Op::ChannelLinear(v, w) => {
                let (rows, r) = {
                    let s = v.inner.borrow();
                    (s.shape[0], s.shape[1])
                };
                let k = w.inner.borrow().shape[1];
                if v.requires_grad() {
                    let wd = w.inner.borrow();
                    let mut gv = vec![0.0; rows * r * 3];
                    for b in 0..rows {
                        for rr in 0..r {
                            let wrow = &wd.data[rr * k..(rr + 1) * k];
                            let gvrow = &mut gv[(b * r + rr) * 3..(b * r + rr) * 3 + 3];
                            for (kk, &wv) in wrow.iter().enumerate() {
                                let grow = &g[(b * k + kk) * 3..(b * k + kk) * 3 + 3];
                                for c in 0..3 {
                                    gvrow[c] += grow[c] * wv;
                                }
                            }
                        }
                    }
                    drop(wd);
                    v.accumulate_grad(&gv);
                }
                if w.requires_grad() {
                    let vd = v.inner.borrow();
                    let mut gw = vec![0.0; r * k];
                    for b in 0..rows {
                        for rr in 0..r {
                            let vrow = &vd.data[(b * r + rr) * 3..(b * r + rr) * 3 + 3];
                            let gwrow = &mut gw[rr * k..(rr + 1) * k];
                            for (kk, gwv) in gwrow.iter_mut().enumerate() {
                                let grow = &g[(b * k + kk) * 3..(b * k + kk) * 3 + 3];
                                *gwv += vrow[0] * grow[0] + vrow[1] * grow[1] + vrow[2] * grow[2];
                            }
                        }
                    }
                    drop(vd);
                    w.accumulate_grad(&gw);
                }
            }
            Op::Scalarize(vs, frames) => {
                let (rows, k) = {
                    let s = vs.inner.borrow();
                    (s.shape[0], s.shape[1])
                };
                if vs.requires_grad() {
                    let fd = frames.inner.borrow();
                    let mut gv = vec![0.0; rows * k * 3];
                    for b in 0..rows {
                        for i in 0..k {
                            let gvrow = &mut gv[(b * k + i) * 3..(b * k + i) * 3 + 3];
                            for d in 0..3 {
                                let gq = g[b * 3 * k + i * 3 + d];
                                let frow = &fd.data[(b * 3 + d) * 3..(b * 3 + d) * 3 + 3];
                                for c in 0..3 {
                                    gvrow[c] += gq * frow[c];
                                }
                            }
                        }
                    }
                    drop(fd);
                    vs.accumulate_grad(&gv);
                }
                if frames.requires_grad() {
                    let vd = vs.inner.borrow();
                    let mut gf = vec![0.0; rows * 9];
                    for b in 0..rows {
                        for i in 0..k {
                            let vrow = &vd.data[(b * k + i) * 3..(b * k + i) * 3 + 3];
                            for d in 0..3 {
                                let gq = g[b * 3 * k + i * 3 + d];
                                let gfrow = &mut gf[(b * 3 + d) * 3..(b * 3 + d) * 3 + 3];
                                for c in 0..3 {
                                    gfrow[c] += gq * vrow[c];
                                }
                            }
                        }
                    }
                    drop(vd);
                    frames.accumulate_grad(&gf);
                }
            }
            Op::RowNorms(v) => {
                if v.requires_grad() {
                    let vd = v.inner.borrow();
                    let mut gv = vec![0.0; vd.data.len()];
                    for (i, &n) in out.iter().enumerate() {
                        if n > 0.0 {
                            let scale = g[i] / n;
                            for c in 0..3 {
                                gv[i * 3 + c] = scale * vd.data[i * 3 + c];
                            }
                        }
                    }
                    drop(vd);
                    v.accumulate_grad(&gv);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = parts[0].inner.borrow().shape[0];
                let widths: Vec<usize> = parts.iter().map(|p| p.inner.borrow().shape[1]).collect();
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (part, &w) in parts.iter().zip(&widths) {
                    if part.requires_grad() && w > 0 {
                        let mut gp = vec![0.0; rows * w];
                        for row in 0..rows {
                            gp[row * w..(row + 1) * w]
                                .copy_from_slice(&g[row * total + offset..row * total + offset + w]);
                        }
                        part.accumulate_grad(&gp);
                    }
                    offset += w;
                }
            }
            Op::ConcatChannels(parts) => {
                let rows = parts[0].inner.borrow().shape[0];
                let widths: Vec<usize> = parts.iter().map(|p| p.inner.borrow().shape[1]).collect();
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (part, &w) in parts.iter().zip(&widths) {
                    if part.requires_grad() && w > 0 {
                        let mut gp = vec![0.0; rows * w * 3];
                        for row in 0..rows {
                            gp[row * w * 3..(row + 1) * w * 3].copy_from_slice(
                                &g[(row * total + offset) * 3..(row * total + offset + w) * 3],
                            );
                        }
                        part.accumulate_grad(&gp);
                    }
                    offset += w;
                }
            }
            Op::GatherRows(x, idx) => {
                if x.requires_grad() {
                    let (n, row) = {
                        let s = x.inner.borrow();
                        (s.shape[0], s.data.len() / s.shape[0].max(1))
                    };
                    let mut gx = vec![0.0; n * row];
                    for (e, &i) in idx.iter().enumerate() {
                        let src = &g[e * row..(e + 1) * row];
                        let dst = &mut gx[i * row..(i + 1) * row];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    x.accumulate_grad(&gx);
                }
            }
            Op::ScatterMean(x, idx, counts) => {
                if x.requires_grad() {
                    let row = {
                        let s = x.inner.borrow();
                        s.data.len() / s.shape[0].max(1)
                    };
                    let mut gx = vec![0.0; idx.len() * row];
                    for (e, &i) in idx.iter().enumerate() {
                        let c = counts[i];
                        if c > 0.0 {
                            let src = &g[i * row..(i + 1) * row];
                            let dst = &mut gx[e * row..(e + 1) * row];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d = s / c;
                            }
                        }
                    }
                    x.accumulate_grad(&gx);
                }
            }
            Op::Sigmoid(x) => {
                if x.requires_grad() {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(out)
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    x.accumulate_grad(&gx);
                }
            }
            Op::Relu(x) => {
                if x.requires_grad() {
                    let xd = x.inner.borrow();
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(xd.data.iter())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    drop(xd);
                    x.accumulate_grad(&gx);
                }
            }
            Op::SmoothGate(x) => {
                if x.requires_grad() {
                    let xd = x.inner.borrow();
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(xd.data.iter())
                        .map(|(g, &x)| {
                            let s = sigmoid_scalar(x);
                            g * (s + x * s * (1.0 - s))
                        })
                        .collect();
                    drop(xd);
                    x.accumulate_grad(&gx);
                }
            }
            Op::LayerNorm(x, inv_std) => {
                if x.requires_grad() {
                    let d = {
                        let s = x.inner.borrow();
                        s.shape[1]
                    };
                    let mut gx = vec![0.0; g.len()];
                    for (row, &is) in inv_std.iter().enumerate() {
                        let grow = &g[row * d..(row + 1) * d];
                        let yrow = &out[row * d..(row + 1) * d];
                        let gmean: f64 = grow.iter().sum::<f64>() / d as f64;
                        let gymean: f64 =
                            grow.iter().zip(yrow).map(|(g, y)| g * y).sum::<f64>() / d as f64;
                        let gxrow = &mut gx[row * d..(row + 1) * d];
                        for ((gx, &g), &y) in gxrow.iter_mut().zip(grow).zip(yrow) {
                            *gx = is * (g - gmean - y * gymean);
                        }
                    }
                    x.accumulate_grad(&gx);
                }
            }
            Op::VectorRmsNorm(x, rms) => {
                if x.requires_grad() {
                    let (rows, r) = {
                        let s = x.inner.borrow();
                        (s.shape[0], s.shape[1])
                    };
                    let xd = x.inner.borrow();
                    let mut gx = vec![0.0; xd.data.len()];
                    let width = r * 3;
                    for (b, &rm) in rms.iter().enumerate().take(rows) {
                        let denom = rm + VEC_NORM_EPS;
                        let grow = &g[b * width..(b + 1) * width];
                        let xrow = &xd.data[b * width..(b + 1) * width];
                        let gxrow = &mut gx[b * width..(b + 1) * width];
                        let dot: f64 = grow.iter().zip(xrow).map(|(g, x)| g * x).sum();
                        let corr = if rm > 1e-300 {
                            dot / (r as f64 * rm * denom * denom)
                        } else {
                            0.0
                        };
                        for ((gx, &g), &x) in gxrow.iter_mut().zip(grow).zip(xrow) {
                            *gx = g / denom - x * corr;
                        }
                    }
                    drop(xd);
                    x.accumulate_grad(&gx);
                }
            }
            Op::VectorGate(v, gate) => {
                let (rows, r) = {
                    let s = v.inner.borrow();
                    (s.shape[0], s.shape[1])
                };
                if v.requires_grad() {
                    let gd = gate.inner.borrow();
                    let mut gv = vec![0.0; rows * r * 3];
                    for b in 0..rows {
                        for i in 0..r {
                            let gateval = gd.data[b * r + i];
                            for c in 0..3 {
                                gv[(b * r + i) * 3 + c] = g[(b * r + i) * 3 + c] * gateval;
                            }
                        }
                    }
                    drop(gd);
                    v.accumulate_grad(&gv);
                }
                if gate.requires_grad() {
                    let vd = v.inner.borrow();
                    let mut gg = vec![0.0; rows * r];
                    for b in 0..rows {
                        for i in 0..r {
                            let mut acc = 0.0;
                            for c in 0..3 {
                                acc += g[(b * r + i) * 3 + c] * vd.data[(b * r + i) * 3 + c];
                            }
                            gg[b * r + i] = acc;
                        }
                    }
                    drop(vd);
                    gate.accumulate_grad(&gg);
                }
            }
            Op::Reshape(x) => {
                if x.requires_grad() {
                    x.accumulate_grad(g);
                }
            }
            Op::MeanRows(x) => {
                if x.requires_grad() {
                    let (n, d) = {
                        let s = x.inner.borrow();
                        (s.shape[0], s.shape[1])
                    };
                    let mut gx = vec![0.0; n * d];
                    for row in gx.chunks_exact_mut(d) {
                        for (gx, gv) in row.iter_mut().zip(g) {
                            *gx = gv / n as f64;
                        }
                    }
                    x.accumulate_grad(&gx);
                }
            }
            Op::MseLoss(x, target) => {
                if x.requires_grad() {
                    let xd = x.inner.borrow();
                    let n = xd.data.len() as f64;
                    let gx: Vec<f64> = xd
                        .data
                        .iter()
                        .zip(target.iter())
                        .map(|(&p, &t)| g[0] * 2.0 * (p - t) / n)
                        .collect();
                    drop(xd);
                    x.accumulate_grad(&gx);
                }
            }
            Op::CrossEntropy(x, labels, softmax) => {
                if x.requires_grad() {
                    let (b, c) = {
                        let s = x.inner.borrow();
                        (s.shape[0], s.shape[1])
                    };
                    let mut gx = vec![0.0; b * c];
                    for (row, &label) in labels.iter().enumerate() {
                        for col in 0..c {
                            let indicator = if col == label { 1.0 } else { 0.0 };
                            gx[row * c + col] =
                                g[0] * (softmax[row * c + col] - indicator) / b as f64;
                        }
                    }
                    x.accumulate_grad(&gx);
                }
            }
        }
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(dim_err(op, format!("shapes {:?} and {:?} differ", sa, sb)));
    }
    Ok(())
}

impl Tensor {
    /// Element-wise sum; shapes must match.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let (a, b) = (self.inner.borrow(), other.inner.borrow());
        let data: Vec<f64> = a.data.iter().zip(b.data.iter()).map(|(x, y)| x + y).collect();
        let shape = a.shape.clone();
        drop((a, b));
        Tensor::from_op(shape, data, Op::Add(self.clone(), other.clone()))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let (a, b) = (self.inner.borrow(), other.inner.borrow());
        let data: Vec<f64> = a.data.iter().zip(b.data.iter()).map(|(x, y)| x - y).collect();
        let shape = a.shape.clone();
        drop((a, b));
        Tensor::from_op(shape, data, Op::Sub(self.clone(), other.clone()))
    }

    /// Element-wise product; shapes must match.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let (a, b) = (self.inner.borrow(), other.inner.borrow());
        let data: Vec<f64> = a.data.iter().zip(b.data.iter()).map(|(x, y)| x * y).collect();
        let shape = a.shape.clone();
        drop((a, b));
        Tensor::from_op(shape, data, Op::Mul(self.clone(), other.clone()))
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let a = self.inner.borrow();
        let data: Vec<f64> = a.data.iter().map(|x| x * c).collect();
        let shape = a.shape.clone();
        drop(a);
        Tensor::from_op(shape, data, Op::Scale(self.clone(), c))
    }

    /// Adds a vector to every row: `[rows, d] + [d]`.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let a = self.inner.borrow();
        let b = bias.inner.borrow();
        let d = b.data.len();
        if a.shape.last().copied() != Some(d) || a.data.len() % d.max(1) != 0 {
            return Err(dim_err(
                "add_bias",
                format!("bias of {} entries against shape {:?}", d, a.shape),
            ));
        }
        let mut data = a.data.clone();
        for row in data.chunks_exact_mut(d) {
            for (x, y) in row.iter_mut().zip(b.data.iter()) {
                *x += y;
            }
        }
        let shape = a.shape.clone();
        drop((a, b));
        Tensor::from_op(shape, data, Op::AddBias(self.clone(), bias.clone()))
    }

    /// Matrix product `[m, k] . [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let a = self.inner.borrow();
        let b = other.inner.borrow();
        if a.shape.len() != 2 || b.shape.len() != 2 {
            return Err(dim_err(
                "matmul",
                format!("expects 2-d operands, got {:?} and {:?}", a.shape, b.shape),
            ));
        }
        let (m, k) = (a.shape[0], a.shape[1]);
        let (k2, n) = (b.shape[0], b.shape[1]);
        if k != k2 {
            return Err(dim_err(
                "matmul",
                format!("inner dimensions differ: {:?} vs {:?}", a.shape, b.shape),
            ));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                if av != 0.0 {
                    let brow = &b.data[p * n..(p + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        drop((a, b));
        Tensor::from_op(vec![m, n], out, Op::Matmul(self.clone(), other.clone()))
    }

    /// Mixes vector channels: `[rows, r, 3] . [r, k] -> [rows, k, 3]`.
    /// Acts independently on each spatial coordinate, so rotation
    /// equivariance of the channels is preserved.
    pub fn channel_linear(&self, w: &Tensor) -> Result<Tensor> {
        let v = self.inner.borrow();
        let wd = w.inner.borrow();
        if v.shape.len() != 3 || v.shape[2] != 3 || wd.shape.len() != 2 || wd.shape[0] != v.shape[1]
        {
            return Err(dim_err(
                "channel_linear",
                format!("shapes {:?} and {:?}", v.shape, wd.shape),
            ));
        }
        let (rows, r) = (v.shape[0], v.shape[1]);
        let k = wd.shape[1];
        let mut out = vec![0.0; rows * k * 3];
        for b in 0..rows {
            for rr in 0..r {
                let vrow = &v.data[(b * r + rr) * 3..(b * r + rr) * 3 + 3];
                let wrow = &wd.data[rr * k..(rr + 1) * k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    if wv != 0.0 {
                        let orow = &mut out[(b * k + kk) * 3..(b * k + kk) * 3 + 3];
                        orow[0] += vrow[0] * wv;
                        orow[1] += vrow[1] * wv;
                        orow[2] += vrow[2] * wv;
                    }
                }
            }
        }
        drop((v, wd));
        Tensor::from_op(
            vec![rows, k, 3],
            out,
            Op::ChannelLinear(self.clone(), w.clone()),
        )
    }

    /// Projects vector channels onto per-row frames:
    /// `[rows, k, 3] x [rows, 3, 3] -> [rows, 3k]`, laid out as
    /// `(v_1.a, v_1.b, v_1.c, v_2.a, ...)`.
    pub fn scalarize(&self, frames: &Tensor) -> Result<Tensor> {
        let v = self.inner.borrow();
        let f = frames.inner.borrow();
        if v.shape.len() != 3
            || v.shape[2] != 3
            || f.shape.len() != 3
            || f.shape[1] != 3
            || f.shape[2] != 3
            || f.shape[0] != v.shape[0]
        {
            return Err(dim_err(
                "scalarize",
                format!("shapes {:?} and {:?}", v.shape, f.shape),
            ));
        }
        let (rows, k) = (v.shape[0], v.shape[1]);
        let mut out = vec![0.0; rows * 3 * k];
        for b in 0..rows {
            for i in 0..k {
                let vrow = &v.data[(b * k + i) * 3..(b * k + i) * 3 + 3];
                for d in 0..3 {
                    let frow = &f.data[(b * 3 + d) * 3..(b * 3 + d) * 3 + 3];
                    out[b * 3 * k + i * 3 + d] =
                        vrow[0] * frow[0] + vrow[1] * frow[1] + vrow[2] * frow[2];
                }
            }
        }
        drop((v, f));
        Tensor::from_op(
            vec![rows, 3 * k],
            out,
            Op::Scalarize(self.clone(), frames.clone()),
        )
    }

    /// Per-channel Euclidean norms: `[rows, k, 3] -> [rows, k]`.
    pub fn row_norms(&self) -> Result<Tensor> {
        let v = self.inner.borrow();
        if v.shape.len() != 3 || v.shape[2] != 3 {
            return Err(dim_err("row_norms", format!("shape {:?}", v.shape)));
        }
        let (rows, k) = (v.shape[0], v.shape[1]);
        let out: Vec<f64> = v
            .data
            .chunks_exact(3)
            .map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt())
            .collect();
        drop(v);
        Tensor::from_op(vec![rows, k], out, Op::RowNorms(self.clone()))
    }

    /// Concatenates `[rows, d_i]` blocks along the feature axis.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(dim_err("concat_cols", "no parts"));
        }
        let rows = parts[0].inner.borrow().shape[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.inner.borrow();
            if s.shape.len() != 2 || s.shape[0] != rows {
                return Err(dim_err(
                    "concat_cols",
                    format!("incompatible part shape {:?}", s.shape),
                ));
            }
            widths.push(s.shape[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let s = p.inner.borrow();
            for row in 0..rows {
                out[row * total + offset..row * total + offset + w]
                    .copy_from_slice(&s.data[row * w..(row + 1) * w]);
            }
            offset += w;
        }
        Tensor::from_op(vec![rows, total], out, Op::ConcatCols(parts.to_vec()))
    }

    /// Concatenates `[rows, r_i, 3]` blocks along the channel axis.
    pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(dim_err("concat_channels", "no parts"));
        }
        let rows = parts[0].inner.borrow().shape[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.inner.borrow();
            if s.shape.len() != 3 || s.shape[0] != rows || s.shape[2] != 3 {
                return Err(dim_err(
                    "concat_channels",
                    format!("incompatible part shape {:?}", s.shape),
                ));
            }
            widths.push(s.shape[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total * 3];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let s = p.inner.borrow();
            for row in 0..rows {
                out[(row * total + offset) * 3..(row * total + offset + w) * 3]
                    .copy_from_slice(&s.data[row * w * 3..(row + 1) * w * 3]);
            }
            offset += w;
        }
        Tensor::from_op(
            vec![rows, total, 3],
            out,
            Op::ConcatChannels(parts.to_vec()),
        )
    }

    /// Selects rows along axis 0: `out[e] = self[idx[e]]`.
    pub fn gather_rows(&self, idx: &Rc<Vec<usize>>) -> Result<Tensor> {
        let s = self.inner.borrow();
        if s.shape.is_empty() {
            return Err(dim_err("gather_rows", "scalar input"));
        }
        let n = s.shape[0];
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(dim_err(
                "gather_rows",
                format!("index {} out of range for {} rows", bad, n),
            ));
        }
        let row = if n == 0 { 0 } else { s.data.len() / n };
        let mut out = vec![0.0; idx.len() * row];
        for (e, &i) in idx.iter().enumerate() {
            out[e * row..(e + 1) * row].copy_from_slice(&s.data[i * row..(i + 1) * row]);
        }
        let mut shape = s.shape.clone();
        shape[0] = idx.len();
        drop(s);
        Tensor::from_op(shape, out, Op::GatherRows(self.clone(), idx.clone()))
    }

    /// Averages rows that share an index: `out[i] = mean over {e : idx[e] = i}`.
    /// Output rows with no contributors are zero.
    pub fn scatter_mean(&self, idx: &Rc<Vec<usize>>, n_out: usize) -> Result<Tensor> {
        let s = self.inner.borrow();
        if s.shape.is_empty() || s.shape[0] != idx.len() {
            return Err(dim_err(
                "scatter_mean",
                format!("{} indices against shape {:?}", idx.len(), s.shape),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(dim_err(
                "scatter_mean",
                format!("index {} out of range for {} outputs", bad, n_out),
            ));
        }
        let row = if idx.is_empty() { 0 } else { s.data.len() / idx.len() };
        let mut counts = vec![0.0; n_out];
        let mut out = vec![0.0; n_out * row];
        for (e, &i) in idx.iter().enumerate() {
            counts[i] += 1.0;
            let src = &s.data[e * row..(e + 1) * row];
            let dst = &mut out[i * row..(i + 1) * row];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            if c > 0.0 {
                for v in &mut out[i * row..(i + 1) * row] {
                    *v /= c;
                }
            }
        }
        let mut shape = s.shape.clone();
        shape[0] = n_out;
        drop(s);
        Tensor::from_op(
            shape,
            out,
            Op::ScatterMean(self.clone(), idx.clone(), counts),
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let s = self.inner.borrow();
        let data: Vec<f64> = s.data.iter().map(|&x| sigmoid_scalar(x)).collect();
        let shape = s.shape.clone();
        drop(s);
        Tensor::from_op(shape, data, Op::Sigmoid(self.clone()))
    }

    pub fn relu(&self) -> Result<Tensor> {
        let s = self.inner.borrow();
        let data: Vec<f64> = s.data.iter().map(|&x| x.max(0.0)).collect();
        let shape = s.shape.clone();
        drop(s);
        Tensor::from_op(shape, data, Op::Relu(self.clone()))
    }

    /// `x * sigmoid(x)` applied element-wise.
    pub fn smooth_gate(&self) -> Result<Tensor> {
        let s = self.inner.borrow();
        let data: Vec<f64> = s.data.iter().map(|&x| x * sigmoid_scalar(x)).collect();
        let shape = s.shape.clone();
        drop(s);
        Tensor::from_op(shape, data, Op::SmoothGate(self.clone()))
    }

    /// Row-wise layer normalization of a `[rows, d]` tensor (no affine
    /// parameters).
    pub fn layer_norm(&self) -> Result<Tensor> {
        let s = self.inner.borrow();
        if s.shape.len() != 2 {
            return Err(dim_err("layer_norm", format!("shape {:?}", s.shape)));
        }
        let (rows, d) = (s.shape[0], s.shape[1]);
        if d == 0 {
            return Err(dim_err("layer_norm", "zero-width rows"));
        }
        let mut out = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        for row in 0..rows {
            let x = &s.data[row * d..(row + 1) * d];
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[row] = is;
            for (o, &v) in out[row * d..(row + 1) * d].iter_mut().zip(x) {
                *o = (v - mean) * is;
            }
        }
        let shape = s.shape.clone();
        drop(s);
        Tensor::from_op(shape, out, Op::LayerNorm(self.clone(), inv_std))
    }

    /// Scales each row of vector channels by the reciprocal of the
    /// root-mean-square of the channel norms. Directions are untouched, so
    /// the operation commutes with rotations.
    pub fn vector_rms_norm(&self) -> Result<Tensor> {
        let s = self.inner.borrow();
        if s.shape.len() != 3 || s.shape[2] != 3 {
            return Err(dim_err("vector_rms_norm", format!("shape {:?}", s.shape)));
        }
        let (rows, r) = (s.shape[0], s.shape[1]);
        if r == 0 {
            return Err(dim_err("vector_rms_norm", "zero channels"));
        }
        let width = r * 3;
        let mut out = vec![0.0; rows * width];
        let mut rms = vec![0.0; rows];
        for b in 0..rows {
            let x = &s.data[b * width..(b + 1) * width];
            let sq: f64 = x.iter().map(|v| v * v).sum();
            let rm = (sq / r as f64).sqrt();
            rms[b] = rm;
            let denom = rm + VEC_NORM_EPS;
            for (o, &v) in out[b * width..(b + 1) * width].iter_mut().zip(x) {
                *o = v / denom;
            }
        }
        let shape = s.shape.clone();
        drop(s);
        Tensor::from_op(shape, out, Op::VectorRmsNorm(self.clone(), rms))
    }

    /// Multiplies each 3-vector channel by one gate value:
    /// `[rows, r, 3] * [rows, r]`.
    pub fn vector_gate(&self, gate: &Tensor) -> Result<Tensor> {
        let v = self.inner.borrow();
        let gd = gate.inner.borrow();
        if v.shape.len() != 3
            || v.shape[2] != 3
            || gd.shape.len() != 2
            || gd.shape[0] != v.shape[0]
            || gd.shape[1] != v.shape[1]
        {
            return Err(dim_err(
                "vector_gate",
                format!("shapes {:?} and {:?}", v.shape, gd.shape),
            ));
        }
        let (rows, r) = (v.shape[0], v.shape[1]);
        let mut out = vec![0.0; rows * r * 3];
        for b in 0..rows {
            for i in 0..r {
                let gateval = gd.data[b * r + i];
                for c in 0..3 {
                    out[(b * r + i) * 3 + c] = v.data[(b * r + i) * 3 + c] * gateval;
                }
            }
        }
        let shape = v.shape.clone();
        drop((v, gd));
        Tensor::from_op(shape, out, Op::VectorGate(self.clone(), gate.clone()))
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let s = self.inner.borrow();
        if shape.iter().product::<usize>() != s.data.len() {
            return Err(dim_err(
                "reshape",
                format!("{:?} -> {:?}", s.shape, shape),
            ));
        }
        let data = s.data.clone();
        drop(s);
        Tensor::from_op(shape.to_vec(), data, Op::Reshape(self.clone()))
    }

    /// Column means: `[n, d] -> [1, d]`.
    pub fn mean_rows(&self) -> Result<Tensor> {
        let s = self.inner.borrow();
        if s.shape.len() != 2 || s.shape[0] == 0 {
            return Err(dim_err("mean_rows", format!("shape {:?}", s.shape)));
        }
        let (n, d) = (s.shape[0], s.shape[1]);
        let mut out = vec![0.0; d];
        for row in s.data.chunks_exact(d) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        drop(s);
        Tensor::from_op(vec![1, d], out, Op::MeanRows(self.clone()))
    }

    /// Mean squared error against a constant target, averaged over every
    /// element (so a 3-vector off by one unit in one coordinate scores 1/3).
    pub fn mse_loss(&self, target: &[f64]) -> Result<Tensor> {
        let s = self.inner.borrow();
        if s.data.len() != target.len() || s.data.is_empty() {
            return Err(dim_err(
                "mse_loss",
                format!("{} predictions vs {} targets", s.data.len(), target.len()),
            ));
        }
        let n = s.data.len() as f64;
        let loss = s
            .data
            .iter()
            .zip(target)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        drop(s);
        Tensor::from_op(
            vec![1],
            vec![loss],
            Op::MseLoss(self.clone(), Rc::new(target.to_vec())),
        )
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits against
    /// integer labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let s = self.inner.borrow();
        if s.shape.len() != 2 || s.shape[0] != labels.len() || s.shape[0] == 0 {
            return Err(dim_err(
                "cross_entropy",
                format!("shape {:?} with {} labels", s.shape, labels.len()),
            ));
        }
        let (b, c) = (s.shape[0], s.shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(dim_err(
                "cross_entropy",
                format!("label {} out of range for {} classes", bad, c),
            ));
        }
        let mut softmax = vec![0.0; b * c];
        let mut loss = 0.0;
        for (row, &label) in labels.iter().enumerate() {
            let x = &s.data[row * c..(row + 1) * c];
            let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in x {
                denom += (v - max).exp();
            }
            for (col, &v) in x.iter().enumerate() {
                softmax[row * c + col] = (v - max).exp() / denom;
            }
            loss += max + denom.ln() - x[label];
        }
        loss /= b as f64;
        drop(s);
        Tensor::from_op(
            vec![1],
            vec![loss],
            Op::CrossEntropy(self.clone(), Rc::new(labels.to_vec()), softmax),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_leaves_matrix_unchanged() {
        let i2 = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::from_vec(&[2, 2], vec![1.5, -2.0, 0.25, 7.0]).unwrap();
        let y = i2.matmul(&x).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        let y = a.matmul(&b).unwrap();
        assert_eq!(y.shape(), vec![2, 1]);
        assert_eq!(y.value(), vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_annihilates_zeros() {
        let zeros = Tensor::zeros(&[3, 4]);
        let ones = Tensor::from_vec(&[4, 2], vec![1.0; 8]).unwrap();
        let y = zeros.matmul(&ones).unwrap();
        assert_eq!(y.shape(), vec![3, 2]);
        assert!(y.value().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn activation_fixed_points() {
        let x = Tensor::from_vec(&[3], vec![0.0, 0.0, -1.0]).unwrap();
        assert_eq!(x.sigmoid().unwrap().value()[0], 0.5);
        assert_eq!(x.smooth_gate().unwrap().value()[1], 0.0);
        assert_eq!(x.relu().unwrap().value()[2], 0.0);
    }

    #[test]
    fn scalarize_canonical_basis_recovers_components() {
        let v = Tensor::from_vec(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let f = Tensor::from_vec(
            &[1, 3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        assert_eq!(v.scalarize(&f).unwrap().value(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn scatter_mean_empty_rows_are_zero() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let idx = Rc::new(vec![0usize, 0]);
        let y = x.scatter_mean(&idx, 3).unwrap();
        assert_eq!(y.value(), vec![2.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_classes() {
        let logits = Tensor::from_vec(&[1, 2], vec![0.3, 0.3]).unwrap();
        let loss = logits.cross_entropy(&[0]).unwrap();
        assert!((loss.item() - (2.0_f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn mse_examples() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let zero_target = vec![0.0; 6];
        // unit offset in one of three coordinates per node
        assert!((x.mse_loss(&zero_target).unwrap().item() - 1.0 / 3.0).abs() < 1e-15);
        let same = x.mse_loss(&x.value()).unwrap();
        assert_eq!(same.item(), 0.0);
    }
}
