//! Two-body quasi-static contact trajectories from a linear-elastic,
//! plane-strain FEM oracle.

mod fem;
mod scenario;

pub use fem::{assemble_stiffness, element_stiffness, solve_dirichlet, SparseMatrix};
pub use scenario::{
    generate_dataset, sample_family, sample_spec, simulate, DatasetManifest, Family, ManifestEntry,
    ScenarioSpec, Scene, Split, SplitRatios, MANIFEST_FILE,
};
