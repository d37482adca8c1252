//! The full network: center, build frames, embed node and edge features,
//! run the convolution stack, then finish with a task head. Scalar heads
//! pool a final linear projection of the node scalars; the position head
//! returns the accumulated coordinate updates shifted back by the stored
//! centroid, which is what makes them translation-equivariant.

use diffcore::{DetRng, ParamStore, Tensor};
use geomkit::{centralize, localize, GeoGraph};

use crate::conv::{Aggregation, ConvConfig, GcpConv};
use crate::error::{ModelError, Result};
use crate::gcp::{Gcp, GcpConfig, GcpMode};
use crate::scalar_vector::ScalarVector;
use crate::topo::{edge_features, frames_tensor, node_features, positions_tensor, GraphTopo};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskHead {
    GraphScalar,
    GraphClass { classes: usize },
    NodePositions,
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub layers: usize,
    pub node_scalar_in: usize,
    pub node_vector_in: usize,
    pub edge_scalar_in: usize,
    pub edge_vector_in: usize,
    pub hidden_scalar: usize,
    pub hidden_vector: usize,
    pub lambda: usize,
    pub omega: usize,
    pub ffn_depth: usize,
    pub dropout: f64,
    pub aggregation: Aggregation,
    pub head: TaskHead,
    pub update_positions: bool,
    pub ablate_frames: bool,
    pub ablate_scalars: bool,
    pub ablate_vectors: bool,
    pub ablate_resgcp: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(ModelError::Config("at least one layer required".into()));
        }
        if self.hidden_scalar == 0 {
            return Err(ModelError::Config("hidden scalar width must be positive".into()));
        }
        if !self.ablate_vectors && (self.hidden_vector == 0 || self.node_vector_in == 0) {
            return Err(ModelError::Config(
                "vector widths must be positive unless vectors are ablated".into(),
            ));
        }
        if self.head == TaskHead::NodePositions && !self.update_positions {
            return Err(ModelError::Config(
                "the position head needs update_positions".into(),
            ));
        }
        if self.update_positions && self.ablate_vectors {
            return Err(ModelError::Config(
                "position updates require vector channels".into(),
            ));
        }
        if let TaskHead::GraphClass { classes } = self.head {
            if classes < 2 {
                return Err(ModelError::Config("need at least two classes".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn hidden_v(&self) -> usize {
        if self.ablate_vectors {
            0
        } else {
            self.hidden_vector
        }
    }

    fn ablations(&self) -> (bool, bool, bool, bool) {
        (
            self.ablate_frames,
            self.ablate_scalars,
            self.ablate_vectors,
            self.ablate_resgcp,
        )
    }
}

/// Model output for the configured task head.
#[derive(Clone, Debug)]
pub enum TaskOutput {
    GraphScalar(Tensor),
    ClassLogits(Tensor),
    NodePositions(Tensor),
}

impl TaskOutput {
    pub fn values(&self) -> Vec<f64> {
        match self {
            TaskOutput::GraphScalar(t) | TaskOutput::ClassLogits(t) | TaskOutput::NodePositions(t) => {
                t.value()
            }
        }
    }
}

/// Supervision target paired with a task output by [`loss`].
#[derive(Clone, Debug)]
pub enum Target {
    Scalar(f64),
    Class(usize),
    Positions(Vec<[f64; 3]>),
}

/// Mean-squared error for regression targets (averaged over every
/// coordinate) and softmax cross-entropy for classes.
pub fn loss(out: &TaskOutput, target: &Target) -> Result<Tensor> {
    match (out, target) {
        (TaskOutput::GraphScalar(t), Target::Scalar(y)) => Ok(t.mse_loss(&[*y])?),
        (TaskOutput::ClassLogits(t), Target::Class(c)) => Ok(t.cross_entropy(&[*c])?),
        (TaskOutput::NodePositions(t), Target::Positions(p)) => {
            let flat: Vec<f64> = p.iter().flat_map(|v| v.iter().copied()).collect();
            Ok(t.mse_loss(&flat)?)
        }
        _ => Err(ModelError::Config(
            "task output and target kinds do not match".into(),
        )),
    }
}

struct DenseHead {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    dropout: f64,
}

impl DenseHead {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        out: usize,
        dropout: f64,
        rng: &mut DetRng,
    ) -> Result<DenseHead> {
        Ok(DenseHead {
            w1: store.weight(&format!("{prefix}.w1"), &[width, width], rng)?,
            b1: store.bias(&format!("{prefix}.b1"), width)?,
            w2: store.weight(&format!("{prefix}.w2"), &[width, out], rng)?,
            b2: store.bias(&format!("{prefix}.b2"), out)?,
            dropout,
        })
    }

    fn forward(&self, pooled: &Tensor, training: bool, rng: &mut DetRng) -> Result<Tensor> {
        let mut h = pooled.matmul(&self.w1)?.add_bias(&self.b1)?.relu()?;
        if training && self.dropout > 0.0 {
            let keep = 1.0 - self.dropout;
            let shape = h.shape();
            let mask: Vec<f64> = (0..h.numel())
                .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            h = h.mul(&Tensor::from_vec(&shape, mask)?)?;
        }
        Ok(h.matmul(&self.w2)?.add_bias(&self.b2)?)
    }
}

pub struct GcpNet {
    pub cfg: ModelConfig,
    embed_node: Gcp,
    embed_edge: Gcp,
    layers: Vec<GcpConv>,
    projection: Option<Gcp>,
    head: Option<DenseHead>,
}

impl GcpNet {
    pub fn new(cfg: ModelConfig, store: &mut ParamStore, rng: &mut DetRng) -> Result<GcpNet> {
        cfg.validate()?;
        let hv = cfg.hidden_v();
        let embed_node = Gcp::new(
            store,
            "embed.node",
            GcpConfig::new(
                GcpMode::Node,
                cfg.node_scalar_in,
                cfg.node_vector_in,
                cfg.hidden_scalar,
                hv,
                cfg.lambda,
            )
            .ablate(cfg.ablate_frames, cfg.ablate_scalars, cfg.ablate_vectors),
            rng,
        )?;
        let embed_edge = Gcp::new(
            store,
            "embed.edge",
            GcpConfig::new(
                GcpMode::Edge,
                cfg.edge_scalar_in,
                cfg.edge_vector_in,
                cfg.hidden_scalar,
                hv,
                cfg.lambda,
            )
            .ablate(cfg.ablate_frames, cfg.ablate_scalars, cfg.ablate_vectors),
            rng,
        )?;

        let conv_cfg = ConvConfig {
            omega: cfg.omega,
            ffn_depth: cfg.ffn_depth,
            aggregation: cfg.aggregation,
            dropout: cfg.dropout,
            update_positions: cfg.update_positions,
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            layers.push(GcpConv::new(
                store,
                &format!("conv{l}"),
                cfg.hidden_scalar,
                hv,
                cfg.hidden_scalar,
                hv,
                cfg.lambda,
                conv_cfg.clone(),
                cfg.ablations(),
                rng,
            )?);
        }

        // final projection and dense stack exist only for pooled heads; the
        // position head reads the updated coordinates directly
        let (projection, head) = match cfg.head {
            TaskHead::GraphScalar | TaskHead::GraphClass { .. } => {
                let proj = Gcp::new(
                    store,
                    "proj.node",
                    GcpConfig::new(GcpMode::Node, cfg.hidden_scalar, hv, cfg.hidden_scalar, 0, cfg.lambda)
                        .ablate(cfg.ablate_frames, cfg.ablate_scalars, cfg.ablate_vectors)
                        .linear(),
                    rng,
                )?;
                let out = match cfg.head {
                    TaskHead::GraphClass { classes } => classes,
                    _ => 1,
                };
                let head = DenseHead::new(store, "head", cfg.hidden_scalar, out, cfg.dropout, rng)?;
                (Some(proj), Some(head))
            }
            TaskHead::NodePositions => (None, None),
        };

        Ok(GcpNet {
            cfg,
            embed_node,
            embed_edge,
            layers,
            projection,
            head,
        })
    }

    fn check_widths(&self, graph: &GeoGraph) -> Result<()> {
        let cfg = &self.cfg;
        let pairs = [
            (graph.node_scalar_width, cfg.node_scalar_in, "node scalar"),
            (graph.node_vector_width, cfg.node_vector_in, "node vector"),
            (graph.edge_scalar_width, cfg.edge_scalar_in, "edge scalar"),
            (graph.edge_vector_width, cfg.edge_vector_in, "edge vector"),
        ];
        for (got, want, what) in pairs {
            if got != want {
                return Err(ModelError::Config(format!(
                    "{what} width {got} does not match model width {want}"
                )));
            }
        }
        if graph.n_edges() == 0 {
            return Err(ModelError::Config("graph has no edges".into()));
        }
        Ok(())
    }

    fn ensure_finite(x: &ScalarVector, context: &str) -> Result<()> {
        if !x.is_finite() {
            return Err(ModelError::Numeric {
                context: context.to_string(),
            });
        }
        Ok(())
    }

    /// Forward pass returning both the final node features and the task
    /// output; the property harness checks invariance on the former.
    pub fn forward_full(
        &self,
        graph: &GeoGraph,
        training: bool,
        rng: &mut DetRng,
    ) -> Result<(ScalarVector, TaskOutput)> {
        graph.validate()?;
        self.check_widths(graph)?;

        let (x0, centroid) = centralize(&graph.positions);
        let frames = frames_tensor(&localize(&x0, &graph.edges))?;
        let topo = GraphTopo::from_edges(graph.n_nodes(), &graph.edges);

        let (h, chi) = node_features(graph)?;
        let (e, xi) = edge_features(graph)?;
        let node_in = ScalarVector::new(h, chi)?;
        let edge_in = ScalarVector::new(e, xi)?;

        let mut nodes = self.embed_node.forward(&node_in, &frames, &topo)?;
        Self::ensure_finite(&nodes, "node embedding")?;
        let edges = self.embed_edge.forward(&edge_in, &frames, &topo)?;
        Self::ensure_finite(&edges, "edge embedding")?;

        let mut positions = positions_tensor(&x0)?;
        for (l, layer) in self.layers.iter().enumerate() {
            let (n, p) = layer.forward(&nodes, &edges, &positions, &frames, &topo, training, rng)?;
            Self::ensure_finite(&n, &format!("layer {l}"))?;
            nodes = n;
            positions = p;
        }

        let output = match &self.cfg.head {
            TaskHead::NodePositions => {
                let centroid_t = Tensor::from_vec(&[3], centroid.to_vec())?;
                TaskOutput::NodePositions(positions.add_bias(&centroid_t)?)
            }
            TaskHead::GraphScalar | TaskHead::GraphClass { .. } => {
                let projected = self
                    .projection
                    .as_ref()
                    .expect("pooled heads always have a projection")
                    .forward(&nodes, &frames, &topo)?;
                Self::ensure_finite(&projected, "final projection")?;
                let pooled = projected
                    .s
                    .as_ref()
                    .expect("projection always emits scalars")
                    .mean_rows()?;
                let out = self
                    .head
                    .as_ref()
                    .expect("pooled heads always have a dense stack")
                    .forward(&pooled, training, rng)?;
                match self.cfg.head {
                    TaskHead::GraphScalar => TaskOutput::GraphScalar(out),
                    _ => TaskOutput::ClassLogits(out),
                }
            }
        };
        Ok((nodes, output))
    }

    pub fn forward(
        &self,
        graph: &GeoGraph,
        training: bool,
        rng: &mut DetRng,
    ) -> Result<TaskOutput> {
        Ok(self.forward_full(graph, training, rng)?.1)
    }
}
