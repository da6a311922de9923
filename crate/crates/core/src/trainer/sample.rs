use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{structure_err, Error, Result};
use crate::meshgraph::MeshState;
use crate::pooling::PoolingPlan;
use crate::sgunet::{Model, ModelInput, Normalizers, OutputNormalizers, Prediction};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Noised input state and the physical deltas that lead to the next state.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisySample {
    pub input: MeshState,
    /// `x^{t+1} - x~^t` per vertex.
    pub mesh_delta: Vec<f64>,
    /// Centroid deltas, with input centroids taken from the noised vertices.
    pub elem_delta: Vec<f64>,
    pub next_flags: Vec<u8>,
}

/// Adds i.i.d. Gaussian noise to every coordinate of vertices that are not
/// prescribed at time `t`, and corrects the targets accordingly.
pub fn noisy_sample<R: Rng + ?Sized>(
    current: &MeshState,
    next: &MeshState,
    noise_std: f64,
    rng: &mut R,
) -> Result<NoisySample> {
    if current.topology != next.topology {
        return structure_err("sample states must share one topology");
    }
    let mut input = current.clone();
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let d = current.dim();
        for v in 0..current.num_vertices() {
            if current.boundary_flag[v] == 0 {
                for k in 0..d {
                    input.positions[v * d + k] += normal.sample(rng);
                }
            }
        }
    }
    let mesh_delta = next
        .positions
        .iter()
        .zip(&input.positions)
        .map(|(a, b)| a - b)
        .collect();
    let elem_delta = next
        .centroids()
        .iter()
        .zip(input.centroids())
        .map(|(a, b)| a - b)
        .collect();
    Ok(NoisySample {
        input,
        mesh_delta,
        elem_delta,
        next_flags: next.boundary_flag.clone(),
    })
}

/// Normalized regression targets with the rows that enter the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub mesh: Tensor<f64>,
    pub elem: Tensor<f64>,
    pub mesh_mask: Vec<bool>,
    pub elem_mask: Vec<bool>,
    /// `1 / (|V^M| + |V^E|)`.
    pub scale: f64,
}

impl Targets {
    /// Mesh nodes prescribed at `t + 1` are excluded, as are element nodes
    /// whose vertices are all prescribed.
    pub fn new(sample: &NoisySample, norms: &OutputNormalizers) -> Result<Self> {
        let topo = &sample.input.topology;
        let d = topo.dim;
        let nm = topo.num_vertices;
        let ne = topo.num_elements();
        let mesh_mask: Vec<bool> = sample.next_flags.iter().map(|&f| f == 0).collect();
        let elem_mask: Vec<bool> = (0..ne)
            .map(|e| topo.element(e).iter().any(|&v| sample.next_flags[v] == 0))
            .collect();
        Ok(Self {
            mesh: Tensor::new(vec![nm, d], norms.mesh.apply(&sample.mesh_delta)?)?,
            elem: Tensor::new(vec![ne, d], norms.elem.apply(&sample.elem_delta)?)?,
            mesh_mask,
            elem_mask,
            scale: 1.0 / (nm + ne) as f64,
        })
    }
}

/// Mean squared error of normalized deltas over unmasked rows, divided by
/// the total node count.
pub fn task_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Prediction,
    targets: &Targets,
) -> Result<Var> {
    let lm = tape.masked_sse(
        pred.mesh,
        &targets.mesh.cast(),
        &targets.mesh_mask,
        targets.scale,
    )?;
    let le = tape.masked_sse(
        pred.elem,
        &targets.elem.cast(),
        &targets.elem_mask,
        targets.scale,
    )?;
    tape.add(lm, le)
}

/// Model input and targets for one training pair.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub input: ModelInput,
    pub targets: Targets,
}

/// Builds the graph of the noised state, optionally folds its features and
/// targets into the running statistics, then normalizes both.
pub fn prepare<R: Rng + ?Sized>(
    model: &Model,
    plan: &PoolingPlan,
    current: &MeshState,
    next: &MeshState,
    norms: &mut Normalizers,
    update_stats: bool,
    rng: &mut R,
) -> Result<Prepared> {
    let sample = noisy_sample(current, next, model.config().noise_std, rng)?;
    let graph = model.graph(&sample.input)?;
    if update_stats {
        norms.input.update(&graph)?;
        norms.output.mesh.update(&sample.mesh_delta)?;
        norms.output.elem.update(&sample.elem_delta)?;
    }
    let input = ModelInput::new(&graph, plan, &norms.input)?;
    let targets = Targets::new(&sample, &norms.output)?;
    Ok(Prepared { input, targets })
}
