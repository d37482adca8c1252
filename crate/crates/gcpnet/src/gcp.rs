//! The geometry-complete perceptron: a joint update of scalar and vector
//! channels that injects frame-scalarized geometry into the scalar path.
//!
//! One forward pass, for input `(s, V)` with `r` vector channels:
//!
//! 1. `z = V . w_dz` downscales the channels by `lambda`.
//! 2. `V_s = V . w_ds` maps to three channels reserved for scalarization.
//! 3. `q = scalarize(V_s, F)`, nine invariant scalars per edge; node-mode
//!    rows average `q` over their incoming edges.
//! 4. `s_cat = s | q | row_norms(z)`.
//! 5. `s' = act(s_cat . w_s + b_s)`.
//! 6. `V' = (z . w_uz) * gate(s_cat . w_s + b_s)`, one gate scalar per
//!    vector channel so rotations commute with the update.
//!
//! Ablation switches drop the frame scalars, the incoming scalar block, or
//! the whole vector path; the residual wrapper adds its input back on both
//! channels.

use diffcore::{DetRng, ParamStore, Tensor};

use crate::error::{ModelError, Result};
use crate::scalar_vector::ScalarVector;
use crate::topo::GraphTopo;

/// Whether rows of this module are graph nodes or directed edges. Node-mode
/// scalarization averages over each node's incoming edges; edge mode has
/// exactly one frame per row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcpMode {
    Node,
    Edge,
}

#[derive(Clone, Debug)]
pub struct GcpConfig {
    pub t_in: usize,
    pub t_out: usize,
    pub r_in: usize,
    pub r_out: usize,
    /// Downscale divisor for the vector bottleneck.
    pub lambda: usize,
    pub mode: GcpMode,
    pub ablate_frames: bool,
    pub ablate_scalars: bool,
    pub ablate_vectors: bool,
    pub has_gate: bool,
    pub has_scalar_act: bool,
}

impl GcpConfig {
    pub fn new(mode: GcpMode, t_in: usize, r_in: usize, t_out: usize, r_out: usize, lambda: usize) -> GcpConfig {
        GcpConfig {
            t_in,
            t_out,
            r_in,
            r_out,
            lambda,
            mode,
            ablate_frames: false,
            ablate_scalars: false,
            ablate_vectors: false,
            has_gate: true,
            has_scalar_act: true,
        }
    }

    /// No scalar activation and no vector gate: a projection head.
    pub fn linear(mut self) -> GcpConfig {
        self.has_gate = false;
        self.has_scalar_act = false;
        self
    }

    pub fn ablate(mut self, frames: bool, scalars: bool, vectors: bool) -> GcpConfig {
        self.ablate_frames = frames;
        self.ablate_scalars = scalars;
        self.ablate_vectors = vectors;
        self
    }

    pub fn effective_r_in(&self) -> usize {
        if self.ablate_vectors {
            0
        } else {
            self.r_in
        }
    }

    pub fn effective_t_in(&self) -> usize {
        if self.ablate_scalars {
            0
        } else {
            self.t_in
        }
    }

    pub fn effective_r_out(&self) -> usize {
        if self.ablate_vectors {
            0
        } else {
            self.r_out
        }
    }

    /// Width of the vector bottleneck: floor(r/lambda) clamped to at least
    /// one channel, so non-divisor widths stay legal.
    pub fn down_width(&self) -> usize {
        let r = self.effective_r_in();
        if r == 0 {
            0
        } else {
            (r / self.lambda).max(1)
        }
    }

    pub fn uses_frames(&self) -> bool {
        !self.ablate_frames && self.effective_r_in() > 0
    }

    /// Width of the concatenated invariant block fed to `w_s`.
    pub fn concat_width(&self) -> usize {
        self.effective_t_in()
            + if self.uses_frames() { 9 } else { 0 }
            + self.down_width()
    }

    fn validate(&self) -> Result<()> {
        if self.lambda == 0 {
            return Err(ModelError::Config("lambda must be at least 1".into()));
        }
        if self.t_out == 0 {
            return Err(ModelError::Config("t_out must be at least 1".into()));
        }
        if self.effective_r_out() > 0 && self.effective_r_in() == 0 {
            return Err(ModelError::Config(
                "cannot produce vector channels without vector inputs".into(),
            ));
        }
        if self.concat_width() == 0 {
            return Err(ModelError::Config(
                "scalar and vector inputs cannot both have width zero".into(),
            ));
        }
        Ok(())
    }
}

pub struct Gcp {
    pub cfg: GcpConfig,
    w_dz: Option<Tensor>,
    w_ds: Option<Tensor>,
    w_s: Tensor,
    b_s: Tensor,
    w_uz: Option<Tensor>,
    w_g: Option<Tensor>,
    b_g: Option<Tensor>,
}

impl Gcp {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: GcpConfig, rng: &mut DetRng) -> Result<Gcp> {
        cfg.validate()?;
        let r_in = cfg.effective_r_in();
        let r_out = cfg.effective_r_out();
        let rd = cfg.down_width();
        let w_dz = if r_in > 0 {
            Some(store.weight(&format!("{prefix}.w_dz"), &[r_in, rd], rng)?)
        } else {
            None
        };
        let w_ds = if cfg.uses_frames() {
            Some(store.weight(&format!("{prefix}.w_ds"), &[r_in, 3], rng)?)
        } else {
            None
        };
        let w_s = store.weight(&format!("{prefix}.w_s"), &[cfg.concat_width(), cfg.t_out], rng)?;
        let b_s = store.bias(&format!("{prefix}.b_s"), cfg.t_out)?;
        let (w_uz, w_g, b_g) = if r_out > 0 {
            let w_uz = store.weight(&format!("{prefix}.w_uz"), &[rd, r_out], rng)?;
            if cfg.has_gate {
                (
                    Some(w_uz),
                    Some(store.weight(&format!("{prefix}.w_g"), &[cfg.t_out, r_out], rng)?),
                    Some(store.bias(&format!("{prefix}.b_g"), r_out)?),
                )
            } else {
                (Some(w_uz), None, None)
            }
        } else {
            (None, None, None)
        };
        Ok(Gcp {
            cfg,
            w_dz,
            w_ds,
            w_s,
            b_s,
            w_uz,
            w_g,
            b_g,
        })
    }

    fn check_rows(&self, x: &ScalarVector, frames: &Tensor, topo: &GraphTopo) -> Result<()> {
        let rows = x.rows();
        let expected = match self.cfg.mode {
            GcpMode::Node => topo.n_nodes,
            GcpMode::Edge => topo.n_edges(),
        };
        if rows != expected {
            return Err(ModelError::Config(format!(
                "{:?}-mode input has {rows} rows, topology expects {expected}",
                self.cfg.mode
            )));
        }
        if frames.shape()[0] != topo.n_edges() {
            return Err(ModelError::Config(format!(
                "{} frames for {} edges",
                frames.shape()[0],
                topo.n_edges()
            )));
        }
        if x.scalar_width() != self.cfg.t_in {
            return Err(ModelError::Config(format!(
                "scalar width {} != configured {}",
                x.scalar_width(),
                self.cfg.t_in
            )));
        }
        if self.cfg.effective_r_in() > 0 && x.vector_width() != self.cfg.r_in {
            return Err(ModelError::Config(format!(
                "vector width {} != configured {}",
                x.vector_width(),
                self.cfg.r_in
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &ScalarVector, frames: &Tensor, topo: &GraphTopo) -> Result<ScalarVector> {
        self.check_rows(x, frames, topo)?;
        let cfg = &self.cfg;

        let mut invariant_parts: Vec<Tensor> = Vec::with_capacity(3);
        if cfg.effective_t_in() > 0 {
            invariant_parts.push(x.s.clone().expect("scalar width checked"));
        }

        let mut z = None;
        if cfg.effective_r_in() > 0 {
            let v = x.v.as_ref().expect("vector width checked");
            let zt = v.channel_linear(self.w_dz.as_ref().unwrap())?;
            if cfg.uses_frames() {
                let vs = v.channel_linear(self.w_ds.as_ref().unwrap())?;
                let q = match cfg.mode {
                    GcpMode::Edge => vs.scalarize(frames)?,
                    GcpMode::Node => {
                        // project each destination node's channels onto its
                        // incoming edge frames, then average per node
                        let per_edge = vs.gather_rows(&topo.dst)?.scalarize(frames)?;
                        per_edge.scatter_mean(&topo.dst, topo.n_nodes)?
                    }
                };
                invariant_parts.push(q);
            }
            invariant_parts.push(zt.row_norms()?);
            z = Some(zt);
        }

        let s_cat = Tensor::concat_cols(&invariant_parts)?;
        let s_v = s_cat.matmul(&self.w_s)?.add_bias(&self.b_s)?;
        let s_out = if cfg.has_scalar_act {
            s_v.smooth_gate()?
        } else {
            s_v.clone()
        };

        let v_out = if cfg.effective_r_out() > 0 {
            let v_u = z.as_ref().unwrap().channel_linear(self.w_uz.as_ref().unwrap())?;
            if cfg.has_gate {
                let gate = s_v
                    .relu()?
                    .matmul(self.w_g.as_ref().unwrap())?
                    .add_bias(self.b_g.as_ref().unwrap())?
                    .sigmoid()?;
                Some(v_u.vector_gate(&gate)?)
            } else {
                Some(v_u)
            }
        } else {
            None
        };

        ScalarVector::new(Some(s_out), v_out)
    }
}

/// Residual wrapper: `x + GCP(x)` on both channels. With `residual` off it
/// degrades to the bare module, which is the "w/o ResGCP" ablation.
pub struct ResGcp {
    pub inner: Gcp,
    pub residual: bool,
}

impl ResGcp {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: GcpConfig,
        residual: bool,
        rng: &mut DetRng,
    ) -> Result<ResGcp> {
        if residual && (cfg.t_in != cfg.t_out || cfg.effective_r_in() != cfg.effective_r_out()) {
            return Err(ModelError::Config(format!(
                "residual shape mismatch: ({}, {}) -> ({}, {})",
                cfg.t_in,
                cfg.effective_r_in(),
                cfg.t_out,
                cfg.effective_r_out()
            )));
        }
        Ok(ResGcp {
            inner: Gcp::new(store, prefix, cfg, rng)?,
            residual,
        })
    }

    pub fn forward(&self, x: &ScalarVector, frames: &Tensor, topo: &GraphTopo) -> Result<ScalarVector> {
        let y = self.inner.forward(x, frames, topo)?;
        if self.residual {
            x.add(&y)
        } else {
            Ok(y)
        }
    }
}
