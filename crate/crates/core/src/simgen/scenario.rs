use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fem::{assemble_stiffness, solve_dirichlet};
use crate::error::{config_err, Error, Result};
use crate::meshgraph::{MeshState, Topology, Trajectory};

/// A plate (body 0) with a fixed bottom edge, pressed by a rigid disc
/// (body 1) moving along a straight line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub nx: usize,
    pub ny: usize,
    pub width: f64,
    pub height: f64,
    pub lambda: f64,
    pub mu: f64,
    pub radius: f64,
    /// Vertices on the disc rim.
    pub ring: usize,
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub steps: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return config_err("a scenario needs at least 2 steps");
        }
        if self.nx < 2 || self.ny < 2 {
            return config_err("plate resolution must be at least 2x2");
        }
        if !(self.radius > 0.0) || self.ring < 3 {
            return config_err("indenter needs a positive radius and at least 3 rim vertices");
        }
        if !(self.width > 0.0 && self.height > 0.0 && self.mu > 0.0 && self.lambda >= 0.0) {
            return config_err("plate size and Lame parameters must be positive");
        }
        Ok(())
    }

    /// Disc centre at step `t`.
    pub fn centre(&self, t: usize) -> [f64; 2] {
        let s = t as f64 / (self.steps - 1) as f64;
        [0, 1].map(|k| self.start[k] + s * (self.end[k] - self.start[k]))
    }
}

fn round32(x: f64) -> f64 {
    x as f32 as f64
}

/// Topology and bookkeeping shared by every step of one scenario.
#[derive(Clone, Debug)]
pub struct Scene {
    pub topology: Arc<Topology>,
    pub plate_vertices: usize,
    pub radius: f64,
    /// Indenter vertex offsets from the disc centre; vertex `plate_vertices`
    /// is the centre itself.
    offsets: Vec<[f64; 2]>,
    fixed: Vec<usize>,
}

impl Scene {
    /// Builds the meshes and the rest state with the disc at `spec.start`.
    pub fn new(spec: &ScenarioSpec) -> Result<(Self, MeshState)> {
        spec.validate()?;
        let (nx, ny) = (spec.nx, spec.ny);
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut positions = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                positions.push(round32(spec.width * i as f64 / nx as f64));
                positions.push(round32(spec.height * j as f64 / ny as f64));
            }
        }
        let plate_vertices = (nx + 1) * (ny + 1);
        let mut elements = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                // alternate diagonals to avoid a directional bias
                if (i + j) % 2 == 0 {
                    elements.extend([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                    elements.extend([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
                } else {
                    elements.extend([id(i, j), id(i + 1, j), id(i, j + 1)]);
                    elements.extend([id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
                }
            }
        }
        let plate_elements = elements.len() / 3;
        let mut offsets = vec![[0.0, 0.0]];
        for k in 0..spec.ring {
            let a = std::f64::consts::TAU * k as f64 / spec.ring as f64;
            offsets.push([spec.radius * a.cos(), spec.radius * a.sin()]);
        }
        let c = plate_vertices;
        for k in 0..spec.ring {
            elements.extend([c, c + 1 + k, c + 1 + (k + 1) % spec.ring]);
        }
        let indenter_elements = spec.ring;
        for o in &offsets {
            positions.push(round32(spec.start[0] + o[0]));
            positions.push(round32(spec.start[1] + o[1]));
        }
        let num_vertices = plate_vertices + offsets.len();
        let topology = Arc::new(Topology {
            dim: 2,
            num_vertices,
            elements,
            lambda: [
                vec![spec.lambda; plate_elements],
                vec![0.0; indenter_elements],
            ]
            .concat(),
            mu: [vec![spec.mu; plate_elements], vec![0.0; indenter_elements]].concat(),
            vertex_body: [vec![0; plate_vertices], vec![1; offsets.len()]].concat(),
            element_body: [vec![0; plate_elements], vec![1; indenter_elements]].concat(),
        });
        let fixed: Vec<usize> = (0..=nx).map(|i| id(i, 0)).collect();
        let mut boundary_flag = vec![0u8; num_vertices];
        fixed.iter().for_each(|&v| boundary_flag[v] = 1);
        boundary_flag[plate_vertices..]
            .iter_mut()
            .for_each(|f| *f = 1);
        let state = MeshState {
            topology: Arc::clone(&topology),
            rest_positions: positions.clone(),
            positions,
            boundary_flag,
        };
        state.validate()?;
        state.check_elements()?;
        let scene = Self {
            topology,
            plate_vertices,
            radius: spec.radius,
            offsets,
            fixed,
        };
        Ok((scene, state))
    }

    /// Moves the disc to `centre`, projects penetrating plate vertices onto
    /// its rim, and solves for the remaining plate displacements.
    pub fn solve_step(&self, prev: &MeshState, centre: [f64; 2]) -> Result<MeshState> {
        let n = self.topology.num_vertices;
        let mut next = prev.clone();
        let mut prescribed = Vec::new();
        let mut flags = vec![0u8; n];
        for &v in &self.fixed {
            prescribed.push((2 * v, 0.0));
            prescribed.push((2 * v + 1, 0.0));
            flags[v] = 1;
        }
        for (k, o) in self.offsets.iter().enumerate() {
            let v = self.plate_vertices + k;
            for d in 0..2 {
                let target = round32(centre[d] + o[d]);
                prescribed.push((2 * v + d, target - prev.positions[2 * v + d]));
            }
            flags[v] = 1;
        }
        for v in 0..self.plate_vertices {
            if flags[v] == 1 {
                continue;
            }
            let p = prev.position(v);
            let (dx, dy) = (p[0] - centre[0], p[1] - centre[1]);
            let dist = dx.hypot(dy);
            if dist < self.radius && dist > 0.0 {
                let s = self.radius / dist;
                let target = [round32(centre[0] + dx * s), round32(centre[1] + dy * s)];
                prescribed.push((2 * v, target[0] - p[0]));
                prescribed.push((2 * v + 1, target[1] - p[1]));
                flags[v] = 1;
            }
        }
        let topo = &self.topology;
        let k = assemble_stiffness(&prev.positions, &topo.elements, &topo.lambda, &topo.mu, n)?;
        let u = solve_dirichlet(&k, &vec![0.0; 2 * n], &prescribed)?;
        for (x, du) in next.positions.iter_mut().zip(&u) {
            *x = round32(*x + du);
        }
        next.boundary_flag = flags;
        for e in 0..topo.num_elements() {
            let m = next.signed_measure(e);
            if !(m > 0.0) {
                return Err(Error::InvertedElement {
                    element: e,
                    jacobian: 2.0 * m,
                });
            }
        }
        Ok(next)
    }
}

/// Runs a full scenario; step 0 is the rest state.
pub fn simulate(spec: &ScenarioSpec) -> Result<Trajectory> {
    let (scene, mut state) = Scene::new(spec)?;
    let mut states = vec![state.clone()];
    for t in 1..spec.steps {
        state = scene.solve_step(&state, spec.centre(t))?;
        states.push(state.clone());
    }
    Trajectory::from_states(&states)
}

/// Scenario distributions: `Broad` for pre-training, `Shifted` (fixed
/// aspect ratio, larger discs) for fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Broad,
    Shifted,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "broad" => Ok(Self::Broad),
            "shifted" => Ok(Self::Shifted),
            other => config_err(format!("unknown scenario family {other:?}")),
        }
    }
}

/// Draws one scenario of `family` from `seed`.
pub fn sample_spec(family: Family, steps: usize, seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let height = 1.0;
    let ny = 4;
    let (aspect, radius, lateral) = match family {
        Family::Broad => (rng.random_range(1.5..3.0), rng.random_range(0.2..0.4), 0.3),
        Family::Shifted => (2.0, rng.random_range(0.45..0.6), 0.1),
    };
    let nu: f64 = rng.random_range(0.2..0.45);
    let mu = 1.0;
    let lambda = 2.0 * mu * nu / (1.0 - 2.0 * nu);
    let width = aspect * height;
    let nx = (aspect * ny as f64).round() as usize;
    let x0 = rng.random_range(0.3 * width..0.7 * width);
    let depth = rng.random_range(0.1..0.25);
    let dx = rng.random_range(-lateral..lateral);
    let y0 = height + radius + 0.02;
    ScenarioSpec {
        nx,
        ny,
        width,
        height,
        lambda,
        mu,
        radius,
        ring: 12,
        start: [x0, y0],
        end: [x0 + dx, height + radius - depth],
        steps,
        seed,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Relative split sizes; the default mirrors 1000/100/100.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 10.0,
            valid: 1.0,
            test: 1.0,
        }
    }
}

impl SplitRatios {
    /// Split label per item, assigned through a seeded permutation.
    pub fn assign(&self, n: usize, seed: u64) -> Result<Vec<Split>> {
        let total = self.train + self.valid + self.test;
        if !(self.train >= 0.0 && self.valid >= 0.0 && self.test >= 0.0 && total > 0.0) {
            return config_err("split ratios must be non-negative with a positive sum");
        }
        let n_valid = (n as f64 * self.valid / total).round() as usize;
        let n_test = ((n as f64 * self.test / total).round() as usize).min(n - n_valid.min(n));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut out = vec![Split::Train; n];
        for (rank, &i) in order.iter().enumerate() {
            if rank < n_valid {
                out[i] = Split::Valid;
            } else if rank < n_valid + n_test {
                out[i] = Split::Test;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
    pub split: Split,
    pub spec: ScenarioSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub ratios: SplitRatios,
    pub split_seed: u64,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    root: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let mut m: Self = serde_json::from_slice(&fs::read(&file)?)?;
        if m.format != "sgunet-dataset" {
            return Err(Error::Format(format!(
                "{} is not a dataset manifest",
                file.display()
            )));
        }
        m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn path_of(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.file)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Trajectory>> {
        self.entries(split)
            .map(|e| Trajectory::load(self.path_of(e)))
            .collect()
    }
}

/// Simulates every spec and writes `traj_NNNN.sgt` files plus the manifest
/// into `out_dir`.
pub fn generate_dataset(
    specs: &[ScenarioSpec],
    out_dir: impl AsRef<Path>,
    ratios: SplitRatios,
    split_seed: u64,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let splits = ratios.assign(specs.len(), split_seed)?;
    let mut entries = Vec::with_capacity(specs.len());
    for (i, (spec, split)) in specs.iter().zip(splits).enumerate() {
        let traj = simulate(spec)?;
        let file = format!("traj_{i:04}.sgt");
        traj.save(out_dir.join(&file))?;
        entries.push(ManifestEntry {
            file,
            seed: spec.seed,
            split,
            spec: spec.clone(),
        });
    }
    let manifest = DatasetManifest {
        format: "sgunet-dataset".to_string(),
        version: 1,
        ratios,
        split_seed,
        entries,
        root: out_dir.to_path_buf(),
    };
    fs::write(
        out_dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Draws `count` valid scenarios of `family`. A draw whose simulation
/// inverts an element is replaced by the next sub-seed.
pub fn sample_family(
    family: Family,
    count: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<ScenarioSpec>> {
    let mut out = Vec::with_capacity(count);
    let mut sub = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rejected = 0;
    while out.len() < count {
        let spec = sample_spec(family, steps, sub);
        sub = sub.wrapping_add(1);
        match simulate(&spec) {
            Ok(_) => out.push(spec),
            Err(Error::InvertedElement { .. } | Error::Numerical(_)) => {
                rejected += 1;
                if rejected > 10 * count + 10 {
                    return Err(Error::Numerical("too many rejected scenario draws".into()));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
