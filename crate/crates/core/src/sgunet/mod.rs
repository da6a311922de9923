//! The Encoder / GUnet / Decoder network. Forward passes are generic over
//! the scalar type so the same code runs in `f32` for training and in `f64`
//! for gradient checks.

mod config;
mod input;
mod layout;

pub use config::ModelConfig;
pub use input::{InputNormalizers, ModelInput, Normalizers, OutputNormalizers, PooledLevel};
pub use layout::{
    gnb_suffixes, stage_prefix, Flow, Gnb, Layout, Lift, Processor, Stage, BOTTOM_PREFIX,
    FLAT_PREFIX,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{structure_err, Result};
use crate::meshgraph::{build_hetero_graph, HeteroGraph, MeshState};
use crate::pooling::PoolingPlan;
use crate::tensor::{ParamSpec, ParamStore, Scalar, Tape, Var};

/// Latent state after the Encoder.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub mesh: Var,
    pub elem: Var,
    pub elem_edges: Var,
    /// Lifted element-to-mesh edges, consumed by the Decoder.
    pub em_edges: Var,
}

/// Normalized per-family outputs, each `rows x dim`.
#[derive(Clone, Copy, Debug)]
pub struct Prediction {
    pub mesh: Var,
    pub elem: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let layout = Layout::new(&config)?;
        Ok(Self { config, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    /// Fresh parameters: every tensor sampled in layout order from `seed`.
    pub fn init_params(&self, seed: u64) -> ParamStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for spec in &self.layout.specs {
            let t = spec.sample(&mut rng);
            store
                .insert(spec.clone(), t)
                .expect("layout names are unique");
        }
        store
    }

    /// Checks that `store` has exactly this layout's names and shapes.
    pub fn check_params<T: Scalar>(&self, store: &ParamStore<T>) -> Result<()> {
        if store.len() != self.layout.specs.len() {
            return structure_err(format!(
                "parameter count {} does not match layout {}",
                store.len(),
                self.layout.specs.len()
            ));
        }
        for (id, spec) in self.layout.specs.iter().enumerate() {
            let have = store.spec(id);
            if have.name != spec.name || have.shape != spec.shape {
                return structure_err(format!(
                    "parameter {id}: expected {} {:?}, found {} {:?}",
                    spec.name, spec.shape, have.name, have.shape
                ));
            }
        }
        Ok(())
    }

    /// Pooling plan for a graph's topology; reusable across time steps.
    pub fn plan(&self, g: &HeteroGraph) -> Result<PoolingPlan> {
        PoolingPlan::build(&g.elem_adjacency, &g.material, &self.config.pooling_ratios)
    }

    pub fn graph(&self, state: &MeshState) -> Result<HeteroGraph> {
        build_hetero_graph(state, self.config.world_radius)
    }

    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: &ModelInput,
    ) -> Result<Encoded> {
        let lift = &self.layout.lift;
        let c = |t: &mut Tape<T>, x: &crate::tensor::Tensor<f64>| t.constant(x.cast());
        let raw = [
            c(tape, &input.node_m),
            c(tape, &input.node_e),
            c(tape, &input.edge_mm),
            c(tape, &input.edge_ee),
            c(tape, &input.edge_em),
            c(tape, &input.edge_me),
        ];
        let xm = lift.node_m.forward(tape, store, raw[0])?;
        let xe = lift.node_e.forward(tape, store, raw[1])?;
        let e_mm = lift.edge_mm.forward(tape, store, raw[2])?;
        let e_ee = lift.edge_ee.forward(tape, store, raw[3])?;
        let e_em = lift.edge_em.forward(tape, store, raw[4])?;
        let mut e_me = lift.edge_me.forward(tape, store, raw[5])?;

        let (xm, _) = self
            .layout
            .proc_mm
            .run_homogeneous(tape, store, xm, e_mm, &input.mm)?;
        let (mut xe, e_ee) = self
            .layout
            .proc_ee
            .run_homogeneous(tape, store, xe, e_ee, &input.ee)?;
        for gnb in &self.layout.proc_me.blocks {
            (xe, e_me) = gnb.apply(tape, store, xm, xe, e_me, &input.me)?;
        }
        Ok(Encoded {
            mesh: xm,
            elem: xe,
            elem_edges: e_ee,
            em_edges: e_em,
        })
    }

    /// Runs the U-net (or the flat processor) on latent element features.
    pub fn gunet_apply<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        e: Var,
        input: &ModelInput,
    ) -> Result<Var> {
        if self.config.is_baseline() {
            return Ok(self
                .layout
                .flat
                .run_homogeneous(tape, store, x, e, &input.ee)?
                .0);
        }
        if input.levels.len() != self.layout.stages.len() {
            return structure_err(format!(
                "input has {} pooled levels, model has {} stages",
                input.levels.len(),
                self.layout.stages.len()
            ));
        }
        let (mut x, mut e) = (x, e);
        let mut skips = Vec::with_capacity(self.layout.stages.len());
        let mut flow = &input.ee;
        for (stage, level) in self.layout.stages.iter().zip(&input.levels) {
            (x, e) = stage.down.run_homogeneous(tape, store, x, e, flow)?;
            skips.push((x, e));
            x = tape.row_mix(x, &level.node_pool)?;
            e = tape.row_mix(e, &level.edge_pool)?;
            flow = &level.flow;
        }
        (x, _) = self
            .layout
            .bottom
            .run_homogeneous(tape, store, x, e, flow)?;
        for i in (0..self.layout.stages.len()).rev() {
            let up = tape.row_mix(x, &input.levels[i].unpool)?;
            let (skip_x, skip_e) = skips[i];
            let merged = tape.add(up, skip_x)?;
            x = tape.scale(merged, 0.5);
            let flow = if i == 0 {
                &input.ee
            } else {
                &input.levels[i - 1].flow
            };
            (x, _) = self.layout.stages[i]
                .up
                .run_homogeneous(tape, store, x, skip_e, flow)?;
        }
        Ok(x)
    }

    pub fn decode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        elem: Var,
        enc: &Encoded,
        input: &ModelInput,
    ) -> Result<Prediction> {
        let elem_out = self.layout.elem_out.forward(tape, store, elem)?;
        let (mesh, _) =
            self.layout
                .interp
                .apply(tape, store, elem, enc.mesh, enc.em_edges, &input.em)?;
        let mesh_out = self.layout.mesh_out.forward(tape, store, mesh)?;
        Ok(Prediction {
            mesh: mesh_out,
            elem: elem_out,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: &ModelInput,
    ) -> Result<Prediction> {
        let enc = self.encode(tape, store, input)?;
        let x = self.gunet_apply(tape, store, enc.elem, enc.elem_edges, input)?;
        self.decode(tape, store, x, &enc, input)
    }

    /// Forward pass without gradients; returns normalized mesh and element
    /// outputs as row-major `f64`.
    pub fn predict(
        &self,
        store: &ParamStore<f32>,
        input: &ModelInput,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::<f32>::new();
        let p = self.forward(&mut tape, store, input)?;
        Ok((
            tape.value(p.mesh).to_f64_vec(),
            tape.value(p.elem).to_f64_vec(),
        ))
    }
}

#[cfg(test)]
mod tests;
