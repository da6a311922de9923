use std::collections::{BTreeMap, BTreeSet};

use super::mesh::MeshState;
use crate::error::{config_err, Result};

/// Directed edges of one family with row-major per-edge features.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSet {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    pub features: Vec<f64>,
    pub width: usize,
}

impl EdgeSet {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.src
            .iter()
            .copied()
            .zip(self.tgt.iter().copied())
            .collect()
    }

    pub fn feature(&self, e: usize) -> &[f64] {
        &self.features[e * self.width..(e + 1) * self.width]
    }
}

/// Mesh-node / element-node graph with fully populated feature matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    pub dim: usize,
    pub num_mesh: usize,
    pub num_elem: usize,
    /// `num_mesh x (1 + dim)`: boundary flag, displacement from rest.
    pub xm: Vec<f64>,
    /// `num_elem x (2 + dim)`: lambda, mu, centroid displacement from rest.
    pub xe: Vec<f64>,
    pub mesh_mesh: EdgeSet,
    /// Face-adjacency edges first, then `num_world_edges` contact edges.
    pub elem_elem: EdgeSet,
    pub elem_mesh: EdgeSet,
    pub mesh_elem: EdgeSet,
    pub num_world_edges: usize,
    /// Sorted face-sharing neighbours of each element (no world edges).
    pub elem_adjacency: Vec<Vec<usize>>,
    pub material: Vec<usize>,
}

impl HeteroGraph {
    pub fn mesh_width(dim: usize) -> usize {
        1 + dim
    }

    pub fn elem_width(dim: usize) -> usize {
        2 + dim
    }

    pub fn edge_width(dim: usize) -> usize {
        2 * dim + 2
    }
}

/// Converts one mesh state into a heterogeneous graph, adding bidirectional
/// contact edges between element nodes of different bodies whose centroids
/// are closer than `world_radius`.
pub fn build_hetero_graph(state: &MeshState, world_radius: f64) -> Result<HeteroGraph> {
    if !(world_radius >= 0.0) {
        return config_err(format!(
            "world radius must be non-negative, got {world_radius}"
        ));
    }
    state.validate()?;
    state.check_elements()?;

    let topo = &state.topology;
    let dim = topo.dim;
    let nv = topo.num_vertices;
    let ne = topo.num_elements();

    let mut xm = Vec::with_capacity(nv * (1 + dim));
    for v in 0..nv {
        xm.push(state.boundary_flag[v] as f64);
        for k in 0..dim {
            xm.push(state.position(v)[k] - state.rest_position(v)[k]);
        }
    }

    let cur_c = state.centroids();
    let rest_c = state.rest_centroids();
    let mut xe = Vec::with_capacity(ne * (2 + dim));
    for e in 0..ne {
        xe.push(topo.lambda[e]);
        xe.push(topo.mu[e]);
        for k in 0..dim {
            xe.push(cur_c[e * dim + k] - rest_c[e * dim + k]);
        }
    }

    // undirected vertex pairs along element edges
    let mut vpairs = BTreeSet::new();
    for e in 0..ne {
        let verts = topo.element(e);
        for a in 0..verts.len() {
            for b in a + 1..verts.len() {
                let (i, j) = (verts[a].min(verts[b]), verts[a].max(verts[b]));
                vpairs.insert((i, j));
                vpairs.insert((j, i));
            }
        }
    }
    let mesh_pairs: Vec<(usize, usize)> = vpairs.into_iter().collect();
    let mesh_mesh = edge_set(
        &mesh_pairs,
        dim,
        (&state.rest_positions, &state.positions),
        (&state.rest_positions, &state.positions),
    );

    let elem_adjacency = face_adjacency(state);
    let mut epairs: Vec<(usize, usize)> = Vec::new();
    for (i, nbrs) in elem_adjacency.iter().enumerate() {
        epairs.extend(nbrs.iter().map(|&j| (i, j)));
    }
    let world = world_pairs(state, &cur_c, world_radius);
    let num_world_edges = world.len();
    epairs.extend(world);
    let elem_elem = edge_set(&epairs, dim, (&rest_c, &cur_c), (&rest_c, &cur_c));

    let mut em_pairs = Vec::with_capacity(ne * (dim + 1));
    for e in 0..ne {
        em_pairs.extend(topo.element(e).iter().map(|&v| (e, v)));
    }
    let me_pairs: Vec<(usize, usize)> = em_pairs.iter().map(|&(e, v)| (v, e)).collect();
    let elem_mesh = edge_set(
        &em_pairs,
        dim,
        (&rest_c, &cur_c),
        (&state.rest_positions, &state.positions),
    );
    let mesh_elem = edge_set(
        &me_pairs,
        dim,
        (&state.rest_positions, &state.positions),
        (&rest_c, &cur_c),
    );

    Ok(HeteroGraph {
        dim,
        num_mesh: nv,
        num_elem: ne,
        xm,
        xe,
        mesh_mesh,
        elem_elem,
        elem_mesh,
        mesh_elem,
        num_world_edges,
        elem_adjacency,
        material: topo.material_index(),
    })
}

/// Edge features `x0_ij | |x0_ij| | xt_ij | |xt_ij|` with `x_ij = x_src - x_tgt`.
fn edge_set(
    pairs: &[(usize, usize)],
    dim: usize,
    src_coords: (&[f64], &[f64]),
    tgt_coords: (&[f64], &[f64]),
) -> EdgeSet {
    let width = 2 * dim + 2;
    let mut features = Vec::with_capacity(pairs.len() * width);
    for &(s, t) in pairs {
        for (src, tgt) in [(src_coords.0, tgt_coords.0), (src_coords.1, tgt_coords.1)] {
            let mut norm = 0.0;
            for k in 0..dim {
                let d = src[s * dim + k] - tgt[t * dim + k];
                norm += d * d;
                features.push(d);
            }
            features.push(norm.sqrt());
        }
    }
    EdgeSet {
        src: pairs.iter().map(|p| p.0).collect(),
        tgt: pairs.iter().map(|p| p.1).collect(),
        features,
        width,
    }
}

/// Elements sharing an edge (2-D) or a face (3-D).
fn face_adjacency(state: &MeshState) -> Vec<Vec<usize>> {
    let topo = &state.topology;
    let ne = topo.num_elements();
    let mut faces: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for e in 0..ne {
        let verts = topo.element(e);
        for skip in 0..verts.len() {
            let mut face: Vec<usize> = verts
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, &v)| v)
                .collect();
            face.sort_unstable();
            faces.entry(face).or_default().push(e);
        }
    }
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ne];
    for owners in faces.values() {
        for &a in owners {
            for &b in owners {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
    }
    adj.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Ordered `(i, j)` pairs of element nodes on different bodies with centroid
/// distance below `radius`, both directions, sorted.
fn world_pairs(state: &MeshState, centroids: &[f64], radius: f64) -> Vec<(usize, usize)> {
    if radius <= 0.0 {
        return Vec::new();
    }
    let topo = &state.topology;
    let dim = topo.dim;
    let ne = topo.num_elements();
    let mut order: Vec<usize> = (0..ne).collect();
    order.sort_by(|&a, &b| centroids[a * dim].total_cmp(&centroids[b * dim]));
    let r2 = radius * radius;
    let mut pairs = Vec::new();
    for (oi, &a) in order.iter().enumerate() {
        for &b in &order[oi + 1..] {
            if centroids[b * dim] - centroids[a * dim] >= radius {
                break;
            }
            if topo.element_body[a] == topo.element_body[b] {
                continue;
            }
            let d2: f64 = (0..dim)
                .map(|k| (centroids[a * dim + k] - centroids[b * dim + k]).powi(2))
                .sum();
            if d2 < r2 {
                pairs.push((a, b));
                pairs.push((b, a));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}
