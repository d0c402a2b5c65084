//! Discrete divergence-form operators on a triangle mesh.
//!
//! For a nodal P1 coefficient field mu, the stiffness matrix has entries
//! `K(mu)_ij = int_Omega mu_h grad(phi_i) . grad(phi_j) dx`, computed exactly:
//! the hat-function gradients are constant per element and mu_h is linear, so
//! the element integral equals the element average of mu times the area. No
//! sign assumption is made on mu; the crossdiffusion coefficient takes both
//! signs. The mass matrix is the standard consistent P1 block
//! `(area/12) [[2,1,1],[1,2,1],[1,1,2]]` or its lumped (row-sum) diagonal.
//!
//! Systems `M + tau k K` are symmetric positive definite and are solved by
//! conjugate gradients with diagonal preconditioning; everything runs in a
//! fixed sequential order, so identical inputs give bit-identical results.

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// Default relative-residual tolerance for [`solve_spd`].
pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;

/// One nodal unknown (or coefficient trace) on a mesh.
#[derive(Clone, Debug)]
pub struct ScalarField {
    values: Vec<f64>,
    mesh_id: u64,
}

impl ScalarField {
    pub fn constant(mesh: &TriMesh, c: f64) -> Self {
        ScalarField {
            values: vec![c; mesh.node_count()],
            mesh_id: mesh.id(),
        }
    }

    /// Nodal interpolant of a function of (x, y).
    pub fn from_fn(mesh: &TriMesh, f: impl Fn(f64, f64) -> f64) -> Self {
        ScalarField {
            values: mesh.nodes().iter().map(|p| f(p.x, p.y)).collect(),
            mesh_id: mesh.id(),
        }
    }

    pub fn from_values(mesh: &TriMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return Err(Error::Dimension {
                expected: mesh.node_count(),
                got: values.len(),
            });
        }
        Ok(ScalarField {
            values,
            mesh_id: mesh.id(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sup norm, max |v_i|.
    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max |self_i - other_i|.
    pub fn linf_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Sparse symmetric operator in CSR form.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    fn from_rows(rows: Vec<std::collections::BTreeMap<usize, f64>>) -> Self {
        let dim = rows.len();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                col_idx.push(j);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseOperator {
            dim,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Sparse matrix-vector product.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.dim];
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
        Ok(y)
    }

    /// self + alpha * other, merging sparsity patterns.
    pub fn add_scaled(&self, other: &SparseOperator, alpha: f64) -> Result<SparseOperator> {
        if other.dim != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut row_ptr = Vec::with_capacity(self.dim + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..self.dim {
            let (mut a, enda) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let (mut b, endb) = (other.row_ptr[i], other.row_ptr[i + 1]);
            while a < enda || b < endb {
                let ca = if a < enda {
                    self.col_idx[a]
                } else {
                    usize::MAX
                };
                let cb = if b < endb {
                    other.col_idx[b]
                } else {
                    usize::MAX
                };
                if ca < cb {
                    col_idx.push(ca);
                    vals.push(self.vals[a]);
                    a += 1;
                } else if cb < ca {
                    col_idx.push(cb);
                    vals.push(alpha * other.vals[b]);
                    b += 1;
                } else {
                    col_idx.push(ca);
                    vals.push(self.vals[a] + alpha * other.vals[b]);
                    a += 1;
                    b += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseOperator {
            dim: self.dim,
            row_ptr,
            col_idx,
            vals,
        })
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|i| self.vals[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max |A_ij - A_ji| over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                worst = worst.max((self.vals[k] - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Constant P1 hat-function gradients on a triangle, from its vertex coords.
fn hat_gradients(p: [(f64, f64); 3]) -> ([(f64, f64); 3], f64) {
    let area2 = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[1].1 - p[0].1) * (p[2].0 - p[0].0);
    let mut g = [(0.0, 0.0); 3];
    for k in 0..3 {
        // grad phi_k = rot90(p[k+2] - p[k+1]) / (2 area)
        let e = (
            p[(k + 2) % 3].0 - p[(k + 1) % 3].0,
            p[(k + 2) % 3].1 - p[(k + 1) % 3].1,
        );
        g[k] = (-e.1 / area2, e.0 / area2);
    }
    (g, 0.5 * area2)
}

/// Assemble the stiffness matrix for the coefficient field `mu` (no sign
/// assumption). Entries are exact: per element the integrand is the constant
/// `avg(mu) grad(phi_i) . grad(phi_j)`.
pub fn assemble_stiffness(mesh: &TriMesh, mu: &ScalarField) -> Result<SparseOperator> {
    if mu.mesh_id() != mesh.id() || mu.len() != mesh.node_count() {
        return Err(Error::Dimension {
            expected: mesh.node_count(),
            got: mu.len(),
        });
    }
    let n = mesh.node_count();
    let mut rows = vec![std::collections::BTreeMap::new(); n];
    for tri in mesh.triangles() {
        let p = [
            (mesh.nodes()[tri[0]].x, mesh.nodes()[tri[0]].y),
            (mesh.nodes()[tri[1]].x, mesh.nodes()[tri[1]].y),
            (mesh.nodes()[tri[2]].x, mesh.nodes()[tri[2]].y),
        ];
        let (g, area) = hat_gradients(p);
        let mu_avg = (mu.values()[tri[0]] + mu.values()[tri[1]] + mu.values()[tri[2]]) / 3.0;
        let w = mu_avg * area;
        for i in 0..3 {
            for j in i..3 {
                let v = w * (g[i].0 * g[j].0 + g[i].1 * g[j].1);
                *rows[tri[i]].entry(tri[j]).or_insert(0.0) += v;
                if i != j {
                    *rows[tri[j]].entry(tri[i]).or_insert(0.0) += v;
                }
            }
        }
    }
    Ok(SparseOperator::from_rows(rows))
}

/// Assemble the P1 mass matrix; `lumped` replaces each row by its sum on the
/// diagonal (area/3 per vertex per element).
pub fn assemble_mass(mesh: &TriMesh, lumped: bool) -> SparseOperator {
    let n = mesh.node_count();
    let mut rows = vec![std::collections::BTreeMap::new(); n];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        if lumped {
            for &i in tri {
                *rows[i].entry(i).or_insert(0.0) += area / 3.0;
            }
        } else {
            for i in 0..3 {
                for j in 0..3 {
                    let v = if i == j { area / 6.0 } else { area / 12.0 };
                    *rows[tri[i]].entry(tri[j]).or_insert(0.0) += v;
                }
            }
        }
    }
    SparseOperator::from_rows(rows)
}

/// Solve `A x = b` for symmetric positive definite `A` by conjugate gradients
/// with Jacobi preconditioning, to relative residual `tol`. Deterministic;
/// `b = 0` returns exactly zero.
pub fn solve_spd(a: &SparseOperator, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right-hand side".into()));
    }
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }

    let diag = a.diagonal();
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);

    for iter in 0..max_iter {
        let ap = a.apply(&p)?;
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::SolverDiverged {
                iters: iter,
                residual: norm(&r) / b_norm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= tol * b_norm {
            // Guard against recurrence drift with one true-residual check.
            let ax = a.apply(&x)?;
            let true_res: f64 = norm(
                &ax.iter()
                    .zip(b)
                    .map(|(axi, bi)| bi - axi)
                    .collect::<Vec<_>>(),
            );
            if true_res <= tol * b_norm * 1.5 {
                return Ok(x);
            }
            r = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }
    Err(Error::SolverDiverged {
        iters: max_iter,
        residual: norm(&r) / b_norm,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
