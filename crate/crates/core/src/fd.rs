//! Second-order finite differences for `−Δu = f` on 2D grid-aligned domains.
//!
//! Five-point stencil on a uniform grid. Dirichlet nodes are substituted into
//! the right-hand side; Neumann nodes use a mirrored ghost value
//! `u_ghost = u_opposite + 2h g`. Rows touching a ghost are halved once per
//! missing axis, which makes the assembled matrix symmetric positive definite
//! as soon as one Dirichlet node exists. The system is solved by Jacobi
//! preconditioned conjugate gradients.

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::problems::{BcKind, BoundaryCondition, Field};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Dirichlet,
    Neumann,
    Excluded,
}

/// Compressed sparse rows.
#[derive(Debug, Clone, Default)]
pub struct Csr {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            *out = self.cols[span.clone()].iter().zip(&self.vals[span]).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().zip(&self.vals[span]).filter(|(&cc, _)| cc == c).map(|(_, &v)| v).sum()
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.rows()).map(|r| self.get(r, r)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct FdGrid {
    pub origin: [f64; 2],
    pub h: f64,
    /// Nodes per axis.
    pub shape: [usize; 2],
    pub kinds: Vec<NodeKind>,
    /// Unknown index of each Interior or Neumann node.
    pub unknown: Vec<Option<usize>>,
    pub matrix: Csr,
    pub rhs: Vec<f64>,
}

impl FdGrid {
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.shape[0] + i
    }

    pub fn coord(&self, i: usize, j: usize) -> [f64; 2] {
        [self.origin[0] + i as f64 * self.h, self.origin[1] + j as f64 * self.h]
    }
}

#[derive(Debug, Clone)]
pub struct FdSolution {
    pub grid: FdGrid,
    /// Nodal values; `NaN` on excluded nodes.
    pub values: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

const CG_TOLERANCE: f64 = 1e-12;

fn steps(extent: f64, h: f64) -> Result<usize> {
    let r = extent / h;
    let n = r.round();
    if n < 2.0 || (r - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::Config(format!("grid spacing {h} does not divide extent {extent}")));
    }
    Ok(n as usize)
}

fn bc_for<'a>(bcs: &'a [BoundaryCondition], label: crate::geometry::BoundaryLabel) -> Result<&'a BoundaryCondition> {
    bcs.iter()
        .find(|bc| bc.label == label)
        .ok_or_else(|| Error::Config(format!("no condition for segment '{}'", label.name())))
}

/// Assembles and solves the five-point system; the returned solution
/// interpolates bilinearly between nodes.
pub fn solve_poisson_fd(domain: &Domain, source: &Field, bcs: &[BoundaryCondition], h: f64) -> Result<FdSolution> {
    if domain.dim() != 2 {
        return Err(Error::Unsupported(format!("finite differences need a 2D domain, got {}D", domain.dim())));
    }
    if !(h > 0.0) {
        return Err(Error::Config(format!("grid spacing {h} must be positive")));
    }
    let (lo, hi) = domain.bounds();
    let (sx, sy) = (steps(hi[0] - lo[0], h)?, steps(hi[1] - lo[1], h)?);
    let shape = [sx + 1, sy + 1];
    let n_nodes = shape[0] * shape[1];
    let coord = |i: usize, j: usize| {
        [lo[0] + (hi[0] - lo[0]) * i as f64 / sx as f64, lo[1] + (hi[1] - lo[1]) * j as f64 / sy as f64]
    };
    let tol = 1e-9 * h;

    let mut kinds = vec![NodeKind::Excluded; n_nodes];
    let mut dirichlet_values = vec![0.0; n_nodes];
    for j in 0..shape[1] {
        for i in 0..shape[0] {
            let p = coord(i, j);
            let idx = j * shape[0] + i;
            if !domain.contains(&p) {
                continue;
            }
            let mut kind = NodeKind::Interior;
            for face in domain.faces().iter().filter(|f| f.contains(&p, tol)) {
                let bc = bc_for(bcs, face.label)?;
                match bc.kind {
                    BcKind::Dirichlet => {
                        kind = NodeKind::Dirichlet;
                        dirichlet_values[idx] = (bc.data)(&p);
                    }
                    BcKind::Neumann if kind != NodeKind::Dirichlet => kind = NodeKind::Neumann,
                    BcKind::Neumann => {}
                    BcKind::Robin { .. } => {
                        return Err(Error::Unsupported("Robin conditions in the finite-difference reference".into()))
                    }
                }
            }
            kinds[idx] = kind;
        }
    }
    if !kinds.contains(&NodeKind::Dirichlet) {
        return Err(Error::Config("no Dirichlet node: the pure Neumann system is singular".into()));
    }

    let mut unknown = vec![None; n_nodes];
    let mut n_unknowns = 0;
    for (u, k) in unknown.iter_mut().zip(&kinds) {
        if matches!(k, NodeKind::Interior | NodeKind::Neumann) {
            *u = Some(n_unknowns);
            n_unknowns += 1;
        }
    }

    let usable = |i: isize, j: isize| -> Option<usize> {
        if i < 0 || j < 0 || i >= shape[0] as isize || j >= shape[1] as isize {
            return None;
        }
        let idx = j as usize * shape[0] + i as usize;
        (kinds[idx] != NodeKind::Excluded).then_some(idx)
    };

    let mut matrix = Csr { row_ptr: vec![0], ..Default::default() };
    let mut rhs = vec![0.0; n_unknowns];
    let dirs: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    for j in 0..shape[1] {
        for i in 0..shape[0] {
            let idx = j * shape[0] + i;
            let Some(row) = unknown[idx] else { continue };
            let p = coord(i, j);
            let mut entries: Vec<(usize, f64)> = vec![(row, 4.0)];
            let mut b = h * h * source(&p);
            let mut missing_axes = [false; 2];
            for (di, dj) in dirs {
                let (ni, nj) = (i as isize + di, j as isize + dj);
                let target = match usable(ni, nj) {
                    Some(nb) => nb,
                    None => {
                        // Mirror across a Neumann face: the ghost value is
                        // u_opposite + 2h ∂u/∂n.
                        let axis = if di != 0 { 0 } else { 1 };
                        let outward = (di + dj) as f64;
                        let face = domain
                            .faces()
                            .iter()
                            .find(|f| f.axis == axis && f.outward == outward && f.contains(&p, tol))
                            .ok_or_else(|| Error::Config(format!("node {p:?} lacks a neighbour and a boundary face")))?;
                        let bc = bc_for(bcs, face.label)?;
                        if bc.kind != BcKind::Neumann {
                            return Err(Error::Config(format!("ghost node at {p:?} across a non-Neumann face")));
                        }
                        missing_axes[axis] = true;
                        b += 2.0 * h * (bc.data)(&p);
                        usable(i as isize - di, j as isize - dj)
                            .ok_or_else(|| Error::Config(format!("node {p:?} has no neighbour on either side")))?
                    }
                };
                match unknown[target] {
                    Some(col) => entries.push((col, -1.0)),
                    None => b += dirichlet_values[target],
                }
            }
            let scale = missing_axes.iter().filter(|&&m| m).fold(1.0, |s, _| s * 0.5);
            entries.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for (c, v) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                matrix.cols.push(c);
                matrix.vals.push(scale * v);
            }
            matrix.row_ptr.push(matrix.cols.len());
            rhs[row] = scale * b;
        }
    }

    let (x, iterations, relative_residual) = conjugate_gradient(&matrix, &rhs, CG_TOLERANCE, 20 * n_unknowns + 100)?;
    let values = (0..n_nodes)
        .map(|idx| match (kinds[idx], unknown[idx]) {
            (NodeKind::Excluded, _) => f64::NAN,
            (_, Some(u)) => x[u],
            (_, None) => dirichlet_values[idx],
        })
        .collect();
    let grid = FdGrid { origin: [lo[0], lo[1]], h, shape, kinds, unknown, matrix, rhs };
    Ok(FdSolution { grid, values, iterations, relative_residual })
}

/// Jacobi-preconditioned CG; returns the solution, the iteration count and
/// the final relative residual.
pub fn conjugate_gradient(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize, f64)> {
    let n = b.len();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 1..=max_iter {
        a.mul(&p, &mut ap);
        let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
        if res <= tol {
            return Ok((x, it, res));
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::Config(format!("conjugate gradients did not reach {tol:e} in {max_iter} iterations")))
}

impl FdSolution {
    pub fn node_value(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// `(x, y, u)` for every node that belongs to the closed domain.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let g = &self.grid;
        (0..g.shape[1]).flat_map(move |j| {
            (0..g.shape[0]).filter_map(move |i| {
                let idx = g.index(i, j);
                (g.kinds[idx] != NodeKind::Excluded).then(|| {
                    let [x, y] = g.coord(i, j);
                    (x, y, self.values[idx])
                })
            })
        })
    }

    /// Bilinear interpolation; exact at nodes. Excluded corners are skipped
    /// and the remaining weights renormalised.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let locate = |v: f64, origin: f64, n: usize| -> (usize, f64) {
            let mut r = (v - origin) / g.h;
            if (r - r.round()).abs() < 1e-9 {
                r = r.round();
            }
            let r = r.clamp(0.0, (n - 1) as f64);
            let i = (r.floor() as usize).min(n - 2);
            (i, r - i as f64)
        };
        let (i, t) = locate(x, g.origin[0], g.shape[0]);
        let (j, s) = locate(y, g.origin[1], g.shape[1]);
        let corners = [
            ((1.0 - t) * (1.0 - s), self.node_value(i, j)),
            (t * (1.0 - s), self.node_value(i + 1, j)),
            ((1.0 - t) * s, self.node_value(i, j + 1)),
            (t * s, self.node_value(i + 1, j + 1)),
        ];
        let (mut acc, mut wsum) = (0.0, 0.0);
        for (w, v) in corners {
            if w != 0.0 && !v.is_nan() {
                acc += w * v;
                wsum += w;
            }
        }
        if wsum == 0.0 {
            corners.iter().find(|(_, v)| !v.is_nan()).map_or(f64::NAN, |c| c.1)
        } else {
            acc / wsum
        }
    }
}
