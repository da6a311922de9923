//! Trajectory files: a little-endian `u64` header length, a JSON header with
//! topology, materials, per-step boundary flags and sizes, then `num_steps`
//! frames of little-endian `f32` vertex-major positions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mesh::{MeshState, Topology};
use crate::error::{Error, Result};

const FORMAT_NAME: &str = "sgunet-trajectory";
const FORMAT_VERSION: u32 = 1;

/// Ordered mesh states sharing one topology. Step 0 is the rest state.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub topology: Arc<Topology>,
    pub positions: Vec<Vec<f64>>,
    pub boundary_flags: Vec<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dim: usize,
    num_vertices: usize,
    num_steps: usize,
    elements: Vec<usize>,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    vertex_body: Vec<u32>,
    element_body: Vec<u32>,
    boundary_flags: Vec<Vec<u8>>,
}

impl Trajectory {
    pub fn from_states(states: &[MeshState]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::Structure("empty trajectory".into()))?;
        for s in states {
            s.validate()?;
            if s.topology != first.topology {
                return Err(Error::Structure(
                    "trajectory steps must share one topology".into(),
                ));
            }
        }
        Ok(Self {
            topology: Arc::clone(&first.topology),
            positions: states.iter().map(|s| s.positions.clone()).collect(),
            boundary_flags: states.iter().map(|s| s.boundary_flag.clone()).collect(),
        })
    }

    pub fn num_steps(&self) -> usize {
        self.positions.len()
    }

    pub fn state(&self, t: usize) -> MeshState {
        MeshState {
            topology: Arc::clone(&self.topology),
            positions: self.positions[t].clone(),
            rest_positions: self.positions[0].clone(),
            boundary_flag: self.boundary_flags[t].clone(),
        }
    }

    pub fn states(&self) -> Vec<MeshState> {
        (0..self.num_steps()).map(|t| self.state(t)).collect()
    }

    /// Serializes the trajectory; positions are stored as `f32`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let topo = &self.topology;
        let header = Header {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            dim: topo.dim,
            num_vertices: topo.num_vertices,
            num_steps: self.num_steps(),
            elements: topo.elements.clone(),
            lambda: topo.lambda.clone(),
            mu: topo.mu.clone(),
            vertex_body: topo.vertex_body.clone(),
            element_body: topo.element_body.clone(),
            boundary_flags: self.boundary_flags.clone(),
        };
        let bytes = serde_json::to_vec(&header)?;
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(&bytes)?;
        for frame in &self.positions {
            for &x in frame {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        let h: Header = serde_json::from_slice(&bytes)?;
        if h.format != FORMAT_NAME || h.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported trajectory format {} v{}",
                h.format, h.version
            )));
        }
        if h.boundary_flags.len() != h.num_steps {
            return Err(Error::Format(
                "boundary flag frames do not match step count".into(),
            ));
        }
        let topology = Arc::new(Topology {
            dim: h.dim,
            num_vertices: h.num_vertices,
            elements: h.elements,
            lambda: h.lambda,
            mu: h.mu,
            vertex_body: h.vertex_body,
            element_body: h.element_body,
        });
        topology.validate()?;
        let frame_len = h.num_vertices * h.dim;
        let mut buf = vec![0u8; frame_len * 4];
        let mut positions = Vec::with_capacity(h.num_steps);
        for _ in 0..h.num_steps {
            r.read_exact(&mut buf)?;
            positions.push(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect(),
            );
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after last frame".into()));
        }
        Ok(Self {
            topology,
            positions,
            boundary_flags: h.boundary_flags,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgraph::mesh::fixtures::grid;

    #[test]
    fn round_trip_of_f32_representable_positions_is_exact() {
        let mut s0 = grid(3, 2);
        s0.positions
            .iter_mut()
            .for_each(|p| *p = (*p as f32) as f64);
        s0.rest_positions = s0.positions.clone();
        let mut s1 = s0.clone();
        s1.positions
            .iter_mut()
            .for_each(|p| *p = ((*p + 0.013) as f32) as f64);
        s1.boundary_flag[0] = 1;
        let traj = Trajectory::from_states(&[s0, s1]).unwrap();
        let mut bytes = Vec::new();
        traj.write_to(&mut bytes).unwrap();
        let back = Trajectory::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, traj);
        // header is readable text
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        assert!(std::str::from_utf8(&bytes[8..8 + hlen])
            .unwrap()
            .contains("sgunet-trajectory"));
        assert_eq!(bytes.len(), 8 + hlen + 2 * 12 * 2 * 4);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let traj = Trajectory::from_states(&[grid(2, 1)]).unwrap();
        let mut bytes = Vec::new();
        traj.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(Trajectory::read_from(bytes.as_slice()).is_err());
    }
}
