use crate::error::{structure_err, Result};
use crate::meshgraph::{MeshState, Trajectory};
use crate::pooling::PoolingPlan;
use crate::sgunet::{Model, ModelInput, Normalizers};
use crate::tensor::ParamStore;

/// Source of per-vertex position deltas for one rollout step.
pub trait Predictor {
    /// Physical delta `x^{t+1} - x^t` for every vertex, vertex-major.
    fn predict_delta(&mut self, state: &MeshState, t: usize) -> Result<Vec<f64>>;
}

/// Learned predictor: builds the graph of the current state, runs the model
/// and denormalizes the mesh output. The pooling plan is computed once.
pub struct ModelPredictor<'a> {
    model: &'a Model,
    params: &'a ParamStore<f32>,
    norms: &'a Normalizers,
    plan: Option<PoolingPlan>,
}

impl<'a> ModelPredictor<'a> {
    pub fn new(
        model: &'a Model,
        params: &'a ParamStore<f32>,
        norms: &'a Normalizers,
    ) -> Result<Self> {
        model.check_params(params)?;
        Ok(Self {
            model,
            params,
            norms,
            plan: None,
        })
    }
}

impl Predictor for ModelPredictor<'_> {
    fn predict_delta(&mut self, state: &MeshState, _t: usize) -> Result<Vec<f64>> {
        let graph = self.model.graph(state)?;
        if self.plan.is_none() {
            self.plan = Some(self.model.plan(&graph)?);
        }
        let plan = self.plan.as_ref().expect("plan set above");
        let input = ModelInput::new(&graph, plan, &self.norms.input)?;
        let (mesh, _) = self.model.predict(self.params, &input)?;
        self.norms.output.mesh.invert(&mesh)
    }
}

/// Replays ground-truth deltas relative to the state it is given.
pub struct OraclePredictor<'a> {
    pub truth: &'a Trajectory,
}

impl Predictor for OraclePredictor<'_> {
    fn predict_delta(&mut self, state: &MeshState, t: usize) -> Result<Vec<f64>> {
        Ok(self.truth.positions[t + 1]
            .iter()
            .zip(&state.positions)
            .map(|(a, b)| a - b)
            .collect())
    }
}

/// Rolls out from the true initial state. Vertices flagged at `t + 1` are
/// overwritten with their ground-truth positions. Returns the predicted
/// positions of steps `1..T`.
pub fn rollout<P: Predictor + ?Sized>(
    predictor: &mut P,
    truth: &Trajectory,
) -> Result<Vec<Vec<f64>>> {
    let mut state = truth.state(0);
    let mut out = Vec::with_capacity(truth.num_steps().saturating_sub(1));
    for t in 0..truth.num_steps().saturating_sub(1) {
        let delta = predictor.predict_delta(&state, t)?;
        if delta.len() != state.positions.len() {
            return structure_err(format!(
                "predictor returned {} values for {} coordinates",
                delta.len(),
                state.positions.len()
            ));
        }
        let d = state.dim();
        let mut next: Vec<f64> = state
            .positions
            .iter()
            .zip(&delta)
            .map(|(x, dx)| x + dx)
            .collect();
        let flags = &truth.boundary_flags[t + 1];
        for v in 0..state.num_vertices() {
            if flags[v] != 0 {
                next[v * d..(v + 1) * d]
                    .copy_from_slice(&truth.positions[t + 1][v * d..(v + 1) * d]);
            }
        }
        state.positions = next.clone();
        state.boundary_flag = flags.clone();
        out.push(next);
    }
    Ok(out)
}

/// Running sums for a position RMSE pooled over several rollouts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RmseAccumulator {
    pub sum_sq: f64,
    pub count: usize,
}

impl RmseAccumulator {
    /// Adds the scalar coordinate errors of `pred` (steps `1..T`) against
    /// `truth`, skipping vertices prescribed at the compared step.
    pub fn add(&mut self, pred: &[Vec<f64>], truth: &Trajectory) -> Result<()> {
        if pred.len() + 1 != truth.num_steps() {
            return structure_err(format!(
                "{} predicted steps for a trajectory of {}",
                pred.len(),
                truth.num_steps()
            ));
        }
        let d = truth.topology.dim;
        for (k, frame) in pred.iter().enumerate() {
            let gt = &truth.positions[k + 1];
            if frame.len() != gt.len() {
                return structure_err("predicted frame has the wrong size");
            }
            for (v, &flag) in truth.boundary_flags[k + 1].iter().enumerate() {
                if flag == 0 {
                    for c in v * d..(v + 1) * d {
                        let e = frame[c] - gt[c];
                        self.sum_sq += e * e;
                        self.count += 1;
                    }
                }
            }
        }
        Ok(())
    }

    /// Zero when no entries were added.
    pub fn rmse(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.sum_sq / self.count as f64).sqrt()
        }
    }
}

/// Root mean square over scalar coordinate entries of non-prescribed
/// vertices and all rollout steps.
pub fn position_rmse(pred: &[Vec<f64>], truth: &Trajectory) -> Result<f64> {
    let mut acc = RmseAccumulator::default();
    acc.add(pred, truth)?;
    Ok(acc.rmse())
}

/// Pooled rollout RMSE of a model over a set of trajectories.
pub fn evaluate(
    model: &Model,
    params: &ParamStore<f32>,
    norms: &Normalizers,
    trajectories: &[Trajectory],
) -> Result<f64> {
    let mut acc = RmseAccumulator::default();
    for traj in trajectories {
        let mut p = ModelPredictor::new(model, params, norms)?;
        let pred = rollout(&mut p, traj)?;
        acc.add(&pred, traj)?;
    }
    Ok(acc.rmse())
}
