use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{structure_err, Error, Result};

/// Time-invariant part of a mesh: connectivity, materials and body labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub dim: usize,
    pub num_vertices: usize,
    /// Flattened vertex indices, `dim + 1` per element.
    pub elements: Vec<usize>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub vertex_body: Vec<u32>,
    pub element_body: Vec<u32>,
}

impl Topology {
    pub fn vertices_per_element(&self) -> usize {
        self.dim + 1
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len() / self.vertices_per_element()
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let k = self.vertices_per_element();
        &self.elements[e * k..(e + 1) * k]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return structure_err(format!("dimension must be 2 or 3, got {}", self.dim));
        }
        let k = self.vertices_per_element();
        if !self.elements.len().is_multiple_of(k) {
            return structure_err("element list length is not a multiple of vertices per element");
        }
        let ne = self.num_elements();
        if let Some(&bad) = self.elements.iter().find(|&&v| v >= self.num_vertices) {
            return structure_err(format!(
                "element references vertex {bad} of {}",
                self.num_vertices
            ));
        }
        if self.lambda.len() != ne || self.mu.len() != ne || self.element_body.len() != ne {
            return structure_err("per-element fields must have one entry per element");
        }
        if self.vertex_body.len() != self.num_vertices {
            return structure_err("vertex_body must have one entry per vertex");
        }
        for e in 0..ne {
            let (l, m) = (self.lambda[e], self.mu[e]);
            let unknown = l == 0.0 && m == 0.0;
            if !unknown && !(l >= 0.0 && m > 0.0) {
                return structure_err(format!("element {e}: invalid Lame parameters ({l}, {m})"));
            }
        }
        Ok(())
    }

    /// Dense material index per element, assigned to distinct `(lambda, mu)`
    /// pairs in order of first appearance.
    pub fn material_index(&self) -> Vec<usize> {
        let mut seen: Vec<(u64, u64)> = Vec::new();
        (0..self.num_elements())
            .map(|e| {
                let key = (self.lambda[e].to_bits(), self.mu[e].to_bits());
                match seen.iter().position(|&k| k == key) {
                    Some(i) => i,
                    None => {
                        seen.push(key);
                        seen.len() - 1
                    }
                }
            })
            .collect()
    }
}

/// One time step of a discretized (possibly multi-body) system.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshState {
    pub topology: Arc<Topology>,
    /// Vertex-major world coordinates at time `t`.
    pub positions: Vec<f64>,
    /// Vertex-major coordinates at `t = 0`.
    pub rest_positions: Vec<f64>,
    pub boundary_flag: Vec<u8>,
}

impl MeshState {
    pub fn dim(&self) -> usize {
        self.topology.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.topology.num_vertices
    }

    pub fn num_elements(&self) -> usize {
        self.topology.num_elements()
    }

    pub fn position(&self, v: usize) -> &[f64] {
        let d = self.dim();
        &self.positions[v * d..(v + 1) * d]
    }

    pub fn rest_position(&self, v: usize) -> &[f64] {
        let d = self.dim();
        &self.rest_positions[v * d..(v + 1) * d]
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        let n = self.num_vertices() * self.dim();
        if self.positions.len() != n || self.rest_positions.len() != n {
            return structure_err(format!(
                "positions/rest_positions need {n} coordinates, got {}/{}",
                self.positions.len(),
                self.rest_positions.len()
            ));
        }
        if self.boundary_flag.len() != self.num_vertices() {
            return structure_err("boundary_flag must have one entry per vertex");
        }
        if self.boundary_flag.iter().any(|&f| f > 1) {
            return structure_err("boundary_flag entries must be 0 or 1");
        }
        Ok(())
    }

    /// Mean of an element's vertex coordinates, taken from `coords`.
    pub fn centroid_of(&self, coords: &[f64], e: usize) -> Vec<f64> {
        let d = self.dim();
        let verts = self.topology.element(e);
        let mut c = vec![0.0; d];
        for &v in verts {
            for k in 0..d {
                c[k] += coords[v * d + k];
            }
        }
        let inv = 1.0 / verts.len() as f64;
        c.iter_mut().for_each(|x| *x *= inv);
        c
    }

    pub fn centroids(&self) -> Vec<f64> {
        (0..self.num_elements())
            .flat_map(|e| self.centroid_of(&self.positions, e))
            .collect()
    }

    pub fn rest_centroids(&self) -> Vec<f64> {
        (0..self.num_elements())
            .flat_map(|e| self.centroid_of(&self.rest_positions, e))
            .collect()
    }

    /// Signed area (2-D) or volume (3-D) of element `e` at time `t`.
    pub fn signed_measure(&self, e: usize) -> f64 {
        signed_measure(self.dim(), &self.positions, self.topology.element(e))
    }

    /// Rejects elements with vanishing measure in the current configuration.
    pub fn check_elements(&self) -> Result<()> {
        for e in 0..self.num_elements() {
            let m = self.signed_measure(e);
            let scale = element_scale(self.dim(), &self.positions, self.topology.element(e));
            if !(m.abs() > 1e-12 * scale.powi(self.dim() as i32)) {
                return Err(Error::DegenerateElement {
                    element: e,
                    measure: m,
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn signed_measure(dim: usize, coords: &[f64], verts: &[usize]) -> f64 {
    let p = |v: usize, k: usize| coords[verts[v] * dim + k];
    if dim == 2 {
        let (ax, ay) = (p(1, 0) - p(0, 0), p(1, 1) - p(0, 1));
        let (bx, by) = (p(2, 0) - p(0, 0), p(2, 1) - p(0, 1));
        0.5 * (ax * by - ay * bx)
    } else {
        let a = [p(1, 0) - p(0, 0), p(1, 1) - p(0, 1), p(1, 2) - p(0, 2)];
        let b = [p(2, 0) - p(0, 0), p(2, 1) - p(0, 1), p(2, 2) - p(0, 2)];
        let c = [p(3, 0) - p(0, 0), p(3, 1) - p(0, 1), p(3, 2) - p(0, 2)];
        let det = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0]);
        det / 6.0
    }
}

/// Largest vertex offset from the first vertex; used to scale tolerances.
fn element_scale(dim: usize, coords: &[f64], verts: &[usize]) -> f64 {
    let o = verts[0];
    verts[1..]
        .iter()
        .map(|&v| {
            (0..dim)
                .map(|k| (coords[v * dim + k] - coords[o * dim + k]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}
