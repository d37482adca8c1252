//! One geometry-complete graph convolution layer: message construction from
//! endpoint and edge features, a chain of residual message updates,
//! permutation-invariant aggregation into the node residual, equivariant
//! dropout and normalization, a node feed-forward stack, and an optional
//! position update driven by a dedicated single-channel vector head.

use diffcore::{DetRng, ParamStore, Tensor};

use crate::error::{ModelError, Result};
use crate::gcp::{Gcp, GcpConfig, GcpMode, ResGcp};
use crate::scalar_vector::ScalarVector;
use crate::topo::GraphTopo;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    Mean,
    Sum,
}

#[derive(Clone, Debug)]
pub struct ConvConfig {
    /// Message-passing depth: number of residual updates applied to each
    /// message after construction.
    pub omega: usize,
    /// Number of residual modules in the node feed-forward stack.
    pub ffn_depth: usize,
    pub aggregation: Aggregation,
    pub dropout: f64,
    pub update_positions: bool,
}

impl ConvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.omega == 0 {
            return Err(ModelError::Config("omega must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Standard layer norm on the scalar channels; vector channels are divided
/// by the root-mean-square of their norms so only the overall scale, never
/// a direction, is touched.
pub fn equivariant_norm(x: &ScalarVector) -> Result<ScalarVector> {
    let s = x.s.as_ref().map(Tensor::layer_norm).transpose()?;
    let v = x.v.as_ref().map(Tensor::vector_rms_norm).transpose()?;
    ScalarVector::new(s, v)
}

/// Element dropout on scalars, whole-channel dropout on vectors, both with
/// the usual 1/(1-rate) rescale. Identity when evaluating or rate is zero.
pub fn equivariant_dropout(
    x: &ScalarVector,
    rate: f64,
    rng: &mut DetRng,
    training: bool,
) -> Result<ScalarVector> {
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let s = match &x.s {
        Some(s) => {
            let shape = s.shape();
            let mask: Vec<f64> = (0..s.numel())
                .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            Some(s.mul(&Tensor::from_vec(&shape, mask)?)?)
        }
        None => None,
    };
    let v = match &x.v {
        Some(v) => {
            let shape = v.shape();
            let mask: Vec<f64> = (0..shape[0] * shape[1])
                .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            Some(v.vector_gate(&Tensor::from_vec(&[shape[0], shape[1]], mask)?)?)
        }
        None => None,
    };
    ScalarVector::new(s, v)
}

pub struct GcpConv {
    pub cfg: ConvConfig,
    message: Gcp,
    updates: Vec<ResGcp>,
    ffn_linear: Gcp,
    ffn: Vec<ResGcp>,
    position: Option<Gcp>,
}

impl GcpConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        node_t: usize,
        node_r: usize,
        edge_t: usize,
        edge_r: usize,
        lambda: usize,
        cfg: ConvConfig,
        ablations: (bool, bool, bool, bool),
        rng: &mut DetRng,
    ) -> Result<GcpConv> {
        cfg.validate()?;
        let (ab_frames, ab_scalars, ab_vectors, ab_resgcp) = ablations;
        let msg_cfg = GcpConfig::new(
            GcpMode::Edge,
            2 * node_t + edge_t,
            2 * node_r + edge_r,
            node_t,
            node_r,
            lambda,
        )
        .ablate(ab_frames, ab_scalars, ab_vectors);
        let message = Gcp::new(store, &format!("{prefix}.msg"), msg_cfg, rng)?;

        let mut updates = Vec::with_capacity(cfg.omega);
        for w in 0..cfg.omega {
            let upd_cfg = GcpConfig::new(GcpMode::Edge, node_t, node_r, node_t, node_r, lambda)
                .ablate(ab_frames, ab_scalars, ab_vectors);
            updates.push(ResGcp::new(
                store,
                &format!("{prefix}.upd{w}"),
                upd_cfg,
                !ab_resgcp,
                rng,
            )?);
        }

        let ffn_linear = Gcp::new(
            store,
            &format!("{prefix}.ffn_lin"),
            GcpConfig::new(GcpMode::Node, node_t, node_r, node_t, node_r, lambda)
                .ablate(ab_frames, ab_scalars, ab_vectors)
                .linear(),
            rng,
        )?;
        let mut ffn = Vec::with_capacity(cfg.ffn_depth);
        for w in 0..cfg.ffn_depth {
            let ffn_cfg = GcpConfig::new(GcpMode::Node, node_t, node_r, node_t, node_r, lambda)
                .ablate(ab_frames, ab_scalars, ab_vectors);
            ffn.push(ResGcp::new(
                store,
                &format!("{prefix}.ffn{w}"),
                ffn_cfg,
                !ab_resgcp,
                rng,
            )?);
        }

        let position = if cfg.update_positions {
            if ab_vectors {
                return Err(ModelError::Config(
                    "position updates require vector channels".into(),
                ));
            }
            let mut pos_cfg =
                GcpConfig::new(GcpMode::Node, node_t, node_r, node_t, 1, lambda)
                    .ablate(ab_frames, ab_scalars, false);
            pos_cfg.has_scalar_act = false; // scalar output of the head is unused
            Some(Gcp::new(store, &format!("{prefix}.pos"), pos_cfg, rng)?)
        } else {
            None
        };

        Ok(GcpConv {
            cfg,
            message,
            updates,
            ffn_linear,
            ffn,
            position,
        })
    }

    /// Scalar and vector widths the message module consumes.
    pub fn message_input_widths(&self) -> (usize, usize) {
        (self.message.cfg.t_in, self.message.cfg.r_in)
    }

    /// Concatenates destination-node, source-node, and edge features per
    /// directed edge, then runs the message module.
    pub fn build_messages(
        &self,
        nodes: &ScalarVector,
        edges: &ScalarVector,
        frames: &Tensor,
        topo: &GraphTopo,
    ) -> Result<ScalarVector> {
        let mut s_parts = Vec::new();
        if let Some(s) = &nodes.s {
            s_parts.push(s.gather_rows(&topo.dst)?);
            s_parts.push(s.gather_rows(&topo.src)?);
        }
        if let Some(s) = &edges.s {
            s_parts.push(s.clone());
        }
        let s_cat = if s_parts.is_empty() {
            None
        } else {
            Some(Tensor::concat_cols(&s_parts)?)
        };

        let mut v_parts = Vec::new();
        if let Some(v) = &nodes.v {
            v_parts.push(v.gather_rows(&topo.dst)?);
            v_parts.push(v.gather_rows(&topo.src)?);
        }
        if let Some(v) = &edges.v {
            v_parts.push(v.clone());
        }
        let v_cat = if v_parts.is_empty() {
            None
        } else {
            Some(Tensor::concat_channels(&v_parts)?)
        };

        let input = ScalarVector::new(s_cat, v_cat)?;
        self.message.forward(&input, frames, topo)
    }

    fn aggregate(&self, messages: &ScalarVector, topo: &GraphTopo) -> Result<ScalarVector> {
        let scale_for_sum = |t: &Tensor, counts: &[f64]| -> Result<Tensor> {
            // scatter_mean times the per-destination count recovers the sum
            let shape = t.shape();
            match shape.len() {
                2 => {
                    let d = shape[1];
                    let mut w = Vec::with_capacity(shape[0] * d);
                    for &c in counts {
                        w.extend(std::iter::repeat(c).take(d));
                    }
                    Ok(t.mul(&Tensor::from_vec(&shape, w)?)?)
                }
                _ => {
                    let r = shape[1];
                    let mut w = Vec::with_capacity(shape[0] * r);
                    for &c in counts {
                        w.extend(std::iter::repeat(c).take(r));
                    }
                    Ok(t.vector_gate(&Tensor::from_vec(&[shape[0], r], w)?)?)
                }
            }
        };
        let mut counts = vec![0.0; topo.n_nodes];
        for &i in topo.dst.iter() {
            counts[i] += 1.0;
        }
        let s = match &messages.s {
            Some(s) => {
                let mean = s.scatter_mean(&topo.dst, topo.n_nodes)?;
                Some(match self.cfg.aggregation {
                    Aggregation::Mean => mean,
                    Aggregation::Sum => scale_for_sum(&mean, &counts)?,
                })
            }
            None => None,
        };
        let v = match &messages.v {
            Some(v) => {
                let mean = v.scatter_mean(&topo.dst, topo.n_nodes)?;
                Some(match self.cfg.aggregation {
                    Aggregation::Mean => mean,
                    Aggregation::Sum => scale_for_sum(&mean, &counts)?,
                })
            }
            None => None,
        };
        ScalarVector::new(s, v)
    }

    /// Full layer. Returns updated node features and positions; positions
    /// pass through untouched unless the layer updates them.
    pub fn forward(
        &self,
        nodes: &ScalarVector,
        edges: &ScalarVector,
        positions: &Tensor,
        frames: &Tensor,
        topo: &GraphTopo,
        training: bool,
        rng: &mut DetRng,
    ) -> Result<(ScalarVector, Tensor)> {
        let mut msg = self.build_messages(nodes, edges, frames, topo)?;
        for update in &self.updates {
            msg = update.forward(&msg, frames, topo)?;
        }

        let aggregated = self.aggregate(&msg, topo)?;
        let n_hat = nodes.add(&aggregated)?;
        let n_hat = equivariant_dropout(&n_hat, self.cfg.dropout, rng, training)?;
        let n_hat = equivariant_norm(&n_hat)?;

        let mut n = self.ffn_linear.forward(&n_hat, frames, topo)?;
        for block in &self.ffn {
            n = block.forward(&n, frames, topo)?;
        }

        let new_positions = match &self.position {
            Some(pos) => {
                let out = pos.forward(&n, frames, topo)?;
                let delta = out
                    .v
                    .expect("position head always produces one vector channel")
                    .reshape(&[topo.n_nodes, 3])?;
                positions.add(&delta)?
            }
            None => positions.clone(),
        };
        Ok((n, new_positions))
    }
}
