use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::Flow;
use crate::error::{structure_err, Result};
use crate::meshgraph::{EdgeSet, HeteroGraph};
use crate::pooling::PoolingPlan;
use crate::tensor::{RowMap, RunningNormalizer, Tensor};

/// Online statistics for every raw input feature family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNormalizers {
    pub node_m: RunningNormalizer,
    pub node_e: RunningNormalizer,
    pub edge_mm: RunningNormalizer,
    pub edge_ee: RunningNormalizer,
    pub edge_em: RunningNormalizer,
    pub edge_me: RunningNormalizer,
}

impl InputNormalizers {
    pub fn new(dim: usize) -> Self {
        let ew = HeteroGraph::edge_width(dim);
        Self {
            node_m: RunningNormalizer::new(HeteroGraph::mesh_width(dim)),
            node_e: RunningNormalizer::new(HeteroGraph::elem_width(dim)),
            edge_mm: RunningNormalizer::new(ew),
            edge_ee: RunningNormalizer::new(ew),
            edge_em: RunningNormalizer::new(ew),
            edge_me: RunningNormalizer::new(ew),
        }
    }

    pub fn update(&mut self, g: &HeteroGraph) -> Result<()> {
        self.node_m.update(&g.xm)?;
        self.node_e.update(&g.xe)?;
        self.edge_mm.update(&g.mesh_mesh.features)?;
        self.edge_ee.update(&g.elem_elem.features)?;
        self.edge_em.update(&g.elem_mesh.features)?;
        self.edge_me.update(&g.mesh_elem.features)?;
        Ok(())
    }
}

/// Output-space statistics of the per-step position deltas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputNormalizers {
    pub mesh: RunningNormalizer,
    pub elem: RunningNormalizer,
}

impl OutputNormalizers {
    pub fn new(dim: usize) -> Self {
        Self {
            mesh: RunningNormalizer::new(dim),
            elem: RunningNormalizer::new(dim),
        }
    }
}

/// All normalization state carried by a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub input: InputNormalizers,
    pub output: OutputNormalizers,
}

impl Normalizers {
    pub fn new(dim: usize) -> Self {
        Self {
            input: InputNormalizers::new(dim),
            output: OutputNormalizers::new(dim),
        }
    }
}

/// One pooled level: maps from the finer level and the coarse edge flow.
#[derive(Clone, Debug)]
pub struct PooledLevel {
    pub node_pool: Arc<RowMap>,
    pub edge_pool: Arc<RowMap>,
    pub unpool: Arc<RowMap>,
    pub flow: Flow,
}

/// Normalized features and index structure consumed by the network.
#[derive(Clone, Debug)]
pub struct ModelInput {
    pub dim: usize,
    pub num_mesh: usize,
    pub num_elem: usize,
    pub node_m: Tensor<f64>,
    pub node_e: Tensor<f64>,
    pub edge_mm: Tensor<f64>,
    pub edge_ee: Tensor<f64>,
    pub edge_em: Tensor<f64>,
    pub edge_me: Tensor<f64>,
    pub mm: Flow,
    pub ee: Flow,
    pub em: Flow,
    pub me: Flow,
    pub levels: Vec<PooledLevel>,
}

fn normalized(rows: &[f64], width: usize, norm: &RunningNormalizer) -> Result<Tensor<f64>> {
    let n = rows.len() / width;
    let data = if rows.is_empty() {
        Vec::new()
    } else {
        norm.apply(rows)?
    };
    Tensor::new(vec![n, width], data)
}

fn flow_of(set: &EdgeSet, num_src: usize, num_tgt: usize) -> Result<Flow> {
    Flow::new(num_src, num_tgt, &set.src, &set.tgt)
}

impl ModelInput {
    pub fn new(g: &HeteroGraph, plan: &PoolingPlan, norms: &InputNormalizers) -> Result<Self> {
        if plan
            .stages
            .first()
            .is_some_and(|s| s.num_fine() != g.num_elem)
        {
            return structure_err("pooling plan was built for a different element count");
        }
        let (nm, ne, d) = (g.num_mesh, g.num_elem, g.dim);
        let ew = HeteroGraph::edge_width(d);
        let mut levels = Vec::with_capacity(plan.depth());
        let hierarchy = plan.hierarchy(&g.elem_elem.pairs())?;
        let mut fine_edges = g.elem_elem.len();
        for (stage, pooled) in plan.stages.iter().zip(&hierarchy) {
            levels.push(PooledLevel {
                node_pool: Arc::clone(stage.node_pool_map()),
                edge_pool: Arc::new(pooled.edge_pool_map(fine_edges)?),
                unpool: Arc::clone(stage.unpool_map()),
                flow: Flow::from_pairs(pooled.num_nodes, pooled.num_nodes, &pooled.edges)?,
            });
            fine_edges = pooled.edges.len();
        }
        Ok(Self {
            dim: d,
            num_mesh: nm,
            num_elem: ne,
            node_m: normalized(&g.xm, HeteroGraph::mesh_width(d), &norms.node_m)?,
            node_e: normalized(&g.xe, HeteroGraph::elem_width(d), &norms.node_e)?,
            edge_mm: normalized(&g.mesh_mesh.features, ew, &norms.edge_mm)?,
            edge_ee: normalized(&g.elem_elem.features, ew, &norms.edge_ee)?,
            edge_em: normalized(&g.elem_mesh.features, ew, &norms.edge_em)?,
            edge_me: normalized(&g.mesh_elem.features, ew, &norms.edge_me)?,
            mm: flow_of(&g.mesh_mesh, nm, nm)?,
            ee: flow_of(&g.elem_elem, ne, ne)?,
            em: flow_of(&g.elem_mesh, ne, nm)?,
            me: flow_of(&g.mesh_elem, nm, ne)?,
            levels,
        })
    }
}
