use std::sync::Arc;

use super::config::ModelConfig;
use crate::error::Result;
use crate::meshgraph::HeteroGraph;
use crate::tensor::{Mlp, MlpSpec, ParamSpec, ParamStore, RowMap, Scalar, Tape, Var};

/// Index maps for one directed edge family.
#[derive(Clone, Debug)]
pub struct Flow {
    pub num_src: usize,
    pub num_tgt: usize,
    gather_src: Arc<RowMap>,
    gather_tgt: Arc<RowMap>,
    scatter_tgt: Arc<RowMap>,
}

impl Flow {
    pub fn new(num_src: usize, num_tgt: usize, src: &[usize], tgt: &[usize]) -> Result<Self> {
        Ok(Self {
            num_src,
            num_tgt,
            gather_src: Arc::new(RowMap::gather(num_src, src)?),
            gather_tgt: Arc::new(RowMap::gather(num_tgt, tgt)?),
            scatter_tgt: Arc::new(RowMap::scatter_sum(num_tgt, tgt)?),
        })
    }

    pub fn from_pairs(num_src: usize, num_tgt: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let (src, tgt): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        Self::new(num_src, num_tgt, &src, &tgt)
    }

    pub fn num_edges(&self) -> usize {
        self.gather_src.n_out()
    }
}

/// Graph-Net block: edge update from both endpoints, then target update
/// from the summed incoming edges. Both updates are residual.
#[derive(Clone, Debug)]
pub struct Gnb {
    pub prefix: String,
    pub edge_mlp: Mlp,
    pub node_mlp: Mlp,
}

impl Gnb {
    fn declare(cfg: &ModelConfig, prefix: String, specs: &mut Vec<ParamSpec>) -> Result<Self> {
        let l = cfg.latent;
        let edge_mlp = Mlp::declare(
            MlpSpec::new(3 * l, cfg.hidden, cfg.hidden_layers, l),
            &format!("{prefix}.edge_mlp"),
            specs,
        )?;
        let node_mlp = Mlp::declare(
            MlpSpec::new(2 * l, cfg.hidden, cfg.hidden_layers, l),
            &format!("{prefix}.node_mlp"),
            specs,
        )?;
        Ok(Self {
            prefix,
            edge_mlp,
            node_mlp,
        })
    }

    /// Returns the updated target features and edge features.
    #[allow(clippy::too_many_arguments)]
    pub fn apply<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        src: Var,
        tgt: Var,
        edges: Var,
        flow: &Flow,
    ) -> Result<(Var, Var)> {
        let xs = tape.row_mix(src, &flow.gather_src)?;
        let xt = tape.row_mix(tgt, &flow.gather_tgt)?;
        let cat = tape.concat(&[xs, xt, edges])?;
        let de = self.edge_mlp.forward(tape, store, cat)?;
        let edges = tape.add(edges, de)?;
        let agg = tape.row_mix(edges, &flow.scatter_tgt)?;
        let cat = tape.concat(&[tgt, agg])?;
        let dn = self.node_mlp.forward(tape, store, cat)?;
        let tgt = tape.add(tgt, dn)?;
        Ok((tgt, edges))
    }
}

/// A sequence of independent GNBs.
#[derive(Clone, Debug)]
pub struct Processor {
    pub prefix: String,
    pub blocks: Vec<Gnb>,
}

impl Processor {
    fn declare(
        cfg: &ModelConfig,
        prefix: &str,
        depth: usize,
        specs: &mut Vec<ParamSpec>,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|k| Gnb::declare(cfg, format!("{prefix}.gnb{k}"), specs))
            .collect::<Result<_>>()?;
        Ok(Self {
            prefix: prefix.to_string(),
            blocks,
        })
    }

    /// Runs every block on a single node family.
    pub fn run_homogeneous<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        mut x: Var,
        mut e: Var,
        flow: &Flow,
    ) -> Result<(Var, Var)> {
        for gnb in &self.blocks {
            (x, e) = gnb.apply(tape, store, x, x, e, flow)?;
        }
        Ok((x, e))
    }
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub down: Processor,
    pub up: Processor,
}

/// Per-family lifting MLPs of the Encoder.
#[derive(Clone, Debug)]
pub struct Lift {
    pub node_m: Mlp,
    pub node_e: Mlp,
    pub edge_mm: Mlp,
    pub edge_ee: Mlp,
    pub edge_em: Mlp,
    pub edge_me: Mlp,
}

/// Every parameter of a network, in declaration order, with the handles
/// used by the forward pass.
#[derive(Clone, Debug)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    pub lift: Lift,
    pub proc_mm: Processor,
    pub proc_ee: Processor,
    pub proc_me: Processor,
    pub stages: Vec<Stage>,
    pub bottom: Processor,
    pub flat: Processor,
    pub elem_out: Mlp,
    pub interp: Gnb,
    pub mesh_out: Mlp,
}

pub fn stage_prefix(i: usize) -> String {
    format!("gunet.stage{i}")
}

pub const BOTTOM_PREFIX: &str = "gunet.bottom";
pub const FLAT_PREFIX: &str = "processor";

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, l) = (cfg.dim, cfg.latent);
        let mut specs = Vec::new();
        let lift_mlp = |input: usize, name: &str, specs: &mut Vec<ParamSpec>| {
            Mlp::declare(
                MlpSpec::new(input, cfg.hidden, cfg.hidden_layers, l),
                name,
                specs,
            )
        };
        let ew = HeteroGraph::edge_width(d);
        let lift = Lift {
            node_m: lift_mlp(HeteroGraph::mesh_width(d), "encoder.node_m", &mut specs)?,
            node_e: lift_mlp(HeteroGraph::elem_width(d), "encoder.node_e", &mut specs)?,
            edge_mm: lift_mlp(ew, "encoder.edge_mm", &mut specs)?,
            edge_ee: lift_mlp(ew, "encoder.edge_ee", &mut specs)?,
            edge_em: lift_mlp(ew, "encoder.edge_em", &mut specs)?,
            edge_me: lift_mlp(ew, "encoder.edge_me", &mut specs)?,
        };
        let proc_mm = Processor::declare(cfg, "encoder.proc_mm", cfg.m_enc, &mut specs)?;
        let proc_ee = Processor::declare(cfg, "encoder.proc_ee", cfg.m_enc, &mut specs)?;
        let proc_me = Processor::declare(cfg, "encoder.proc_me", cfg.m_enc, &mut specs)?;
        let mut stages = Vec::new();
        for i in 0..cfg.num_stages() {
            let p = stage_prefix(i);
            let down = Processor::declare(cfg, &format!("{p}.prE"), cfg.m_gu, &mut specs)?;
            let up = Processor::declare(cfg, &format!("{p}.prD"), cfg.m_gu, &mut specs)?;
            stages.push(Stage { down, up });
        }
        let bottom_depth = if cfg.is_baseline() { 0 } else { cfg.m_gu };
        let bottom = Processor::declare(cfg, BOTTOM_PREFIX, bottom_depth, &mut specs)?;
        let flat_depth = if cfg.is_baseline() { cfg.m_proc } else { 0 };
        let flat = Processor::declare(cfg, FLAT_PREFIX, flat_depth, &mut specs)?;
        let elem_out = Mlp::declare(
            MlpSpec::new(l, cfg.hidden, cfg.hidden_layers, d).without_norm(),
            "decoder.elem_out",
            &mut specs,
        )?;
        let interp = Gnb::declare(cfg, "decoder.interp".to_string(), &mut specs)?;
        let mesh_out = Mlp::declare(
            MlpSpec::new(l, cfg.hidden, cfg.hidden_layers, d).without_norm(),
            "decoder.mesh_out",
            &mut specs,
        )?;
        Ok(Self {
            specs,
            lift,
            proc_mm,
            proc_ee,
            proc_me,
            stages,
            bottom,
            flat,
            elem_out,
            interp,
            mesh_out,
        })
    }

    pub fn num_params(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    /// Every GNB prefix belonging to the GUnet (or the flat processor).
    pub fn gunet_block_prefixes(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.extend(s.down.blocks.iter().map(|b| b.prefix.clone()));
            out.extend(s.up.blocks.iter().map(|b| b.prefix.clone()));
        }
        out.extend(self.bottom.blocks.iter().map(|b| b.prefix.clone()));
        out.extend(self.flat.blocks.iter().map(|b| b.prefix.clone()));
        out
    }
}

/// Tensor name suffixes shared by every GNB of a config, e.g. `edge_mlp.w0`.
pub fn gnb_suffixes(cfg: &ModelConfig) -> Result<Vec<String>> {
    let mut specs = Vec::new();
    Gnb::declare(cfg, "x".to_string(), &mut specs)?;
    Ok(specs.into_iter().map(|s| s.name[2..].to_string()).collect())
}
