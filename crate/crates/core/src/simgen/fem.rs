//! Plane-strain linear triangles, sparse assembly and a skyline Cholesky
//! solver for Dirichlet-constrained systems.

use std::collections::BTreeMap;

use crate::error::{structure_err, Error, Result};

/// Square sparse matrix in compressed-row form with sorted columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Sums duplicate `(row, col, value)` entries.
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return structure_err(format!("entry ({i}, {j}) outside {n}x{n} matrix"));
            }
            *rows[i].entry(j).or_insert(0.0) += v;
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            for (j, v) in row {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `max |K_ij - K_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Element stiffness of a linear plane-strain triangle, dofs ordered
/// `(u0, v0, u1, v1, u2, v2)`. Clockwise or degenerate triangles are
/// rejected.
pub fn element_stiffness(
    p: [[f64; 2]; 3],
    lambda: f64,
    mu: f64,
    element: usize,
) -> Result<[[f64; 6]; 6]> {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    if !(det > 0.0) {
        return Err(Error::InvertedElement {
            element,
            jacobian: det,
        });
    }
    let area = 0.5 * det;
    let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]].map(|v| v / det);
    let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]].map(|v| v / det);
    let mut bm = [[0.0; 6]; 3];
    for a in 0..3 {
        bm[0][2 * a] = b[a];
        bm[1][2 * a + 1] = c[a];
        bm[2][2 * a] = c[a];
        bm[2][2 * a + 1] = b[a];
    }
    let d = [
        [lambda + 2.0 * mu, lambda, 0.0],
        [lambda, lambda + 2.0 * mu, 0.0],
        [0.0, 0.0, mu],
    ];
    let mut k = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in i..6 {
            let mut s = 0.0;
            for r in 0..3 {
                for q in 0..3 {
                    s += bm[r][i] * d[r][q] * bm[q][j];
                }
            }
            k[i][j] = area * s;
            k[j][i] = k[i][j];
        }
    }
    Ok(k)
}

/// Global stiffness over `2 * num_vertices` dofs. Elements whose Lamé
/// parameters are both zero (rigid bodies) contribute nothing.
pub fn assemble_stiffness(
    positions: &[f64],
    elements: &[usize],
    lambda: &[f64],
    mu: &[f64],
    num_vertices: usize,
) -> Result<SparseMatrix> {
    let mut triplets = Vec::with_capacity(elements.len() / 3 * 36);
    for (e, tri) in elements.chunks_exact(3).enumerate() {
        if lambda[e] == 0.0 && mu[e] == 0.0 {
            continue;
        }
        let p = [0, 1, 2].map(|a| [positions[2 * tri[a]], positions[2 * tri[a] + 1]]);
        let k = element_stiffness(p, lambda[e], mu[e], e)?;
        for a in 0..6 {
            for b in 0..6 {
                triplets.push((2 * tri[a / 2] + a % 2, 2 * tri[b / 2] + b % 2, k[a][b]));
            }
        }
    }
    SparseMatrix::from_triplets(2 * num_vertices, triplets)
}

/// Lower-triangular profile storage; row `i` keeps columns `first[i]..=i`.
struct Skyline {
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl Skyline {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.start[i] + j - self.first[i]]
    }

    fn from_rows(n: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let first: Vec<usize> = (0..n)
            .map(|i| {
                rows[i]
                    .iter()
                    .map(|&(j, _)| j)
                    .filter(|&j| j <= i)
                    .min()
                    .unwrap_or(i)
            })
            .collect();
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for i in 0..n {
            start.push(total);
            total += i - first[i] + 1;
        }
        start.push(total);
        let mut values = vec![0.0; total];
        for i in 0..n {
            for &(j, v) in &rows[i] {
                if j <= i {
                    values[start[i] + j - first[i]] += v;
                }
            }
        }
        Self {
            first,
            start,
            values,
        }
    }

    /// In-place `L L^T` factorization.
    fn factor(&mut self) -> Result<()> {
        let n = self.first.len();
        for i in 0..n {
            for j in self.first[i]..=i {
                let lo = self.first[i].max(self.first[j]);
                let mut s = self.at(i, j);
                for k in lo..j {
                    s -= self.at(i, k) * self.at(j, k);
                }
                let idx = self.start[i] + j - self.first[i];
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::Numerical(format!(
                            "stiffness not positive definite at dof {i}"
                        )));
                    }
                    self.values[idx] = s.sqrt();
                } else {
                    self.values[idx] = s / self.at(j, j);
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.first.len();
        for i in 0..n {
            let mut s = b[i];
            for k in self.first[i]..i {
                s -= self.at(i, k) * b[k];
            }
            b[i] = s / self.at(i, i);
        }
        for i in (0..n).rev() {
            b[i] /= self.at(i, i);
            let xi = b[i];
            for k in self.first[i]..i {
                b[k] -= self.at(i, k) * xi;
            }
        }
    }
}

/// Solves `K u = f` with `u[d] = value` for every prescribed dof. Dofs that
/// have no stiffness at all (rows of zeros) must be prescribed.
pub fn solve_dirichlet(
    k: &SparseMatrix,
    f: &[f64],
    prescribed: &[(usize, f64)],
) -> Result<Vec<f64>> {
    let n = k.size();
    let mut u = vec![0.0; n];
    let mut fixed = vec![false; n];
    for &(d, v) in prescribed {
        if d >= n {
            return structure_err(format!("prescribed dof {d} outside {n}"));
        }
        fixed[d] = true;
        u[d] = v;
    }
    let free: Vec<usize> = (0..n).filter(|&d| !fixed[d]).collect();
    let mut local = vec![usize::MAX; n];
    for (i, &d) in free.iter().enumerate() {
        local[d] = i;
    }
    let mut rhs: Vec<f64> = free.iter().map(|&d| f[d]).collect();
    let mut rows = vec![Vec::new(); free.len()];
    for (i, &d) in free.iter().enumerate() {
        for (j, v) in k.row(d) {
            if fixed[j] {
                rhs[i] -= v * u[j];
            } else {
                rows[i].push((local[j], v));
            }
        }
    }
    let mut sky = Skyline::from_rows(free.len(), &rows);
    sky.factor()?;
    sky.solve(&mut rhs);
    for (i, &d) in free.iter().enumerate() {
        u[d] = rhs[i];
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_triangle_matches_hand_derivation() {
        // lambda = 0, mu = 1: D = diag(2, 2, 1), area 1/2
        let expect = [
            [1.5, 0.5, -1.0, -0.5, -0.5, 0.0],
            [0.5, 1.5, 0.0, -0.5, -0.5, -1.0],
            [-1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [-0.5, -0.5, 0.0, 0.5, 0.5, 0.0],
            [-0.5, -0.5, 0.0, 0.5, 0.5, 0.0],
            [0.0, -1.0, 0.0, 0.0, 0.0, 1.0],
        ];
        let k = element_stiffness([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 0.0, 1.0, 0).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!(
                    (k[i][j] - expect[i][j]).abs() < 1e-15,
                    "K[{i}][{j}] = {}",
                    k[i][j]
                );
            }
        }
    }

    #[test]
    fn clockwise_triangle_is_inverted() {
        let r = element_stiffness([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]], 1.0, 1.0, 4);
        assert!(matches!(r, Err(Error::InvertedElement { element: 4, .. })));
    }

    #[test]
    fn skyline_solves_small_spd_system() {
        // [[4,1,0],[1,3,1],[0,1,2]] x = [1,2,3]
        let k = SparseMatrix::from_triplets(
            3,
            [
                (0, 0, 4.0),
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 1, 3.0),
                (1, 2, 1.0),
                (2, 1, 1.0),
                (2, 2, 2.0),
            ],
        )
        .unwrap();
        let x = solve_dirichlet(&k, &[1.0, 2.0, 3.0], &[]).unwrap();
        let r = k.mul_vec(&x);
        for (a, b) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_system_is_reported() {
        let k =
            SparseMatrix::from_triplets(2, [(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)])
                .unwrap();
        assert!(matches!(
            solve_dirichlet(&k, &[0.0, 0.0], &[]),
            Err(Error::Numerical(_))
        ));
    }
}
