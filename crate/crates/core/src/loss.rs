//! Monte Carlo Lagrangian
//!
//! ```text
//! L(u, v) = Σ_s |Γ_s| / (2 N_s) Σ_{x ∈ Γ_s} (B u − g)²  +  |Ω| / N Σ_i (A u − f)(x_i) v(x_i)
//! ```
//!
//! with one boundary sum per labelled segment (a single segment gives the
//! plain `|∂Ω| / (2 N_b)` weighting), its parameter gradients, and the
//! two-point duality-gap estimate.
//!
//! Points are processed in fixed-size chunks, each with its own tape; chunk
//! results are reduced in chunk order so the outcome does not depend on
//! scheduling.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BoundaryLabel, BoundarySample};
use crate::jet::Jet;
use crate::network::MlpNet;
use crate::problems::{Field, PdeProblem, PointCoeffs};
use crate::scalar::Scalar;
use crate::tape::{forward_matrix, AdjointTape, JetMatrix, Order};

/// Points per tape.
pub const CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub boundary: T,
    pub interior: T,
    /// Boundary sub-totals per segment, in the order of the problem's conditions.
    pub segments: Vec<(BoundaryLabel, T)>,
}

/// Interior and boundary samples for one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub interior: Array2<f64>,
    pub boundary: Vec<BoundarySample>,
}

impl Batch {
    pub fn draw(
        problem: &PdeProblem,
        n_interior: usize,
        n_boundary: usize,
        interior_rng: &mut impl Rng,
        boundary_rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            interior: problem.domain.sample_interior(n_interior, interior_rng)?,
            boundary: problem.domain.sample_boundary(n_boundary, boundary_rng)?,
        })
    }
}

/// Problem data evaluated on a batch and converted to the working precision.
#[derive(Debug, Clone)]
pub struct PreparedBatch<'p, T> {
    problem: &'p PdeProblem,
    interior: Array2<T>,
    interior_raw: Array2<f64>,
    source: Vec<T>,
    coeffs: Vec<PointCoeffs>,
    interior_weight: T,
    boundary_points: Array2<T>,
    normals: Vec<Vec<f64>>,
    bc_index: Vec<usize>,
    data: Vec<T>,
    boundary_weight: Vec<T>,
}

fn to_scalar<T: Scalar>(a: &Array2<f64>) -> Array2<T> {
    a.mapv(T::of)
}

impl<'p, T: Scalar> PreparedBatch<'p, T> {
    pub fn new(problem: &'p PdeProblem, batch: &Batch) -> Result<Self> {
        let n = batch.interior.nrows();
        let nb = batch.boundary.len();
        if n == 0 || nb == 0 {
            return Err(Error::Count(format!("empty batch ({n} interior, {nb} boundary samples)")));
        }
        let d = problem.dim();
        if batch.interior.ncols() != d || batch.boundary.iter().any(|b| b.point.len() != d) {
            return Err(Error::Dimension(format!("batch points do not live in R^{d}")));
        }
        let rows: Vec<&[f64]> = batch.interior.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
        let source = rows.iter().map(|x| T::of((problem.source)(x))).collect();
        let coeffs = rows.iter().map(|x| problem.operator.coeffs_at(x)).collect();

        let mut bc_index = Vec::with_capacity(nb);
        for b in &batch.boundary {
            let idx = problem.bcs.iter().position(|bc| bc.label == b.label).ok_or_else(|| {
                Error::Config(format!("boundary sample labelled '{}' has no condition", b.label.name()))
            })?;
            bc_index.push(idx);
        }
        let mut counts = vec![0usize; problem.bcs.len()];
        bc_index.iter().for_each(|&i| counts[i] += 1);
        let seg_weight: Vec<f64> = problem
            .bcs
            .iter()
            .zip(&counts)
            .map(|(bc, &c)| if c == 0 { 0.0 } else { problem.domain.segment_measure(bc.label) / (2.0 * c as f64) })
            .collect();
        let boundary_weight = bc_index.iter().map(|&i| T::of(seg_weight[i])).collect();
        let data = batch.boundary.iter().zip(&bc_index).map(|(b, &i)| T::of((problem.bcs[i].data)(&b.point))).collect();
        let mut boundary_points = Array2::zeros((nb, d));
        for (mut row, b) in boundary_points.rows_mut().into_iter().zip(&batch.boundary) {
            row.iter_mut().zip(&b.point).for_each(|(dst, &v)| *dst = T::of(v));
        }
        Ok(Self {
            problem,
            interior: to_scalar(&batch.interior),
            interior_raw: batch.interior.clone(),
            source,
            coeffs,
            interior_weight: T::of(problem.domain.volume() / n as f64),
            boundary_points,
            normals: batch.boundary.iter().map(|b| b.normal.clone()).collect(),
            bc_index,
            data,
            boundary_weight,
        })
    }

    pub fn problem(&self) -> &PdeProblem {
        self.problem
    }

    pub fn interior_points(&self) -> ArrayView2<'_, T> {
        self.interior.view()
    }

    pub fn interior_points_f64(&self) -> &Array2<f64> {
        &self.interior_raw
    }

    pub fn n_interior(&self) -> usize {
        self.interior.nrows()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary_points.nrows()
    }

    fn chunks(n: usize) -> Vec<(usize, usize)> {
        (0..n).step_by(CHUNK).map(|start| (start, (start + CHUNK).min(n))).collect()
    }

    fn interior_residual_at(&self, out: &JetMatrix<T>, p: usize, global: usize) -> (T, Jet<T>) {
        self.problem.operator.residual_with_partials(&out.jet(0, p), &self.coeffs[global], self.source[global])
    }

    fn boundary_residual_at(&self, out: &JetMatrix<T>, p: usize, global: usize) -> (T, Jet<T>) {
        let bc = &self.problem.bcs[self.bc_index[global]];
        bc.residual_with_partials(&out.jet(0, p), &self.normals[global], self.data[global])
    }

    /// `A u − f` at every interior point.
    pub fn interior_residuals(&self, u: &MlpNet<T>) -> Result<Vec<T>> {
        let parts: Vec<Result<Vec<T>>> = Self::chunks(self.n_interior())
            .into_par_iter()
            .map(|(a, b)| {
                let out = forward_matrix(u, self.interior.slice(s![a..b, ..]), Order::Laplacian)?;
                Ok((a..b).map(|g| self.interior_residual_at(&out, g - a, g).0).collect())
            })
            .collect();
        flatten(parts)
    }

    /// `B u − g` at every boundary point.
    pub fn boundary_residuals(&self, u: &MlpNet<T>) -> Result<Vec<T>> {
        let parts: Vec<Result<Vec<T>>> = Self::chunks(self.n_boundary())
            .into_par_iter()
            .map(|(a, b)| {
                let out = forward_matrix(u, self.boundary_points.slice(s![a..b, ..]), Order::Laplacian)?;
                Ok((a..b).map(|g| self.boundary_residual_at(&out, g - a, g).0).collect())
            })
            .collect();
        flatten(parts)
    }

    pub fn multiplier_values(&self, v: &MlpNet<T>) -> Result<Vec<T>> {
        let parts: Vec<Result<Vec<T>>> = Self::chunks(self.n_interior())
            .into_par_iter()
            .map(|(a, b)| Ok(forward_matrix(v, self.interior.slice(s![a..b, ..]), Order::Value)?.values().to_vec()))
            .collect();
        flatten(parts)
    }

    /// Combines residuals and multiplier values into the Lagrangian.
    pub fn assemble(&self, interior_res: &[T], multiplier: &[T], boundary_res: &[T]) -> LossBreakdown<T> {
        let mut segments: Vec<(BoundaryLabel, T)> = self.problem.bcs.iter().map(|bc| (bc.label, T::zero())).collect();
        for ((&r, &w), &i) in boundary_res.iter().zip(&self.boundary_weight).zip(&self.bc_index) {
            segments[i].1 += w * r * r;
        }
        let boundary: T = segments.iter().map(|s| s.1).sum();
        let interior = self.interior_weight * interior_res.iter().zip(multiplier).map(|(&r, &v)| r * v).sum::<T>();
        LossBreakdown { total: boundary + interior, boundary, interior, segments }
    }

    /// `∇_τ L` at fixed interior residuals; also returns `v_τ` at the interior points.
    pub fn multiplier_gradient(&self, v: &MlpNet<T>, interior_res: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let w = self.interior_weight;
        let parts: Vec<Result<(Vec<T>, Vec<T>)>> = Self::chunks(self.n_interior())
            .into_par_iter()
            .map(|(a, b)| {
                let mut tape = AdjointTape::record(v, self.interior.slice(s![a..b, ..]), Order::Value)?;
                let values = tape.output().expect("recorded").values().to_vec();
                let res = &interior_res[a..b];
                let adj = Array2::from_shape_fn((1, b - a), |(_, p)| w * res[p]);
                let loss = w * res.iter().zip(&values).map(|(&r, &v)| r * v).sum::<T>();
                tape.record_loss(loss, adj)?;
                Ok((values, tape.backprop_params(T::one())?))
            })
            .collect();
        let mut values = Vec::with_capacity(self.n_interior());
        let mut grad = vec![T::zero(); v.num_params()];
        for part in parts {
            let (vals, g) = part?;
            values.extend(vals);
            grad.iter_mut().zip(g).for_each(|(acc, x)| *acc += x);
        }
        Ok((values, grad))
    }

    /// Records the trial network on every chunk of the batch.
    pub fn record_trial<'n>(&self, u: &'n MlpNet<T>) -> Result<TrialTapes<'n, T>> {
        let record = |pts: &Array2<T>, n: usize| -> Result<Vec<(usize, AdjointTape<'n, T>)>> {
            Self::chunks(n)
                .into_par_iter()
                .map(|(a, b)| Ok((a, AdjointTape::record(u, pts.slice(s![a..b, ..]), Order::Laplacian)?)))
                .collect()
        };
        let interior = record(&self.interior, self.n_interior())?;
        let boundary = record(&self.boundary_points, self.n_boundary())?;
        let interior_res = interior
            .iter()
            .flat_map(|(a, t)| {
                let out = t.output().expect("recorded");
                (0..out.points()).map(move |p| self.interior_residual_at(out, p, a + p).0)
            })
            .collect();
        let boundary_res = boundary
            .iter()
            .flat_map(|(a, t)| {
                let out = t.output().expect("recorded");
                (0..out.points()).map(move |p| self.boundary_residual_at(out, p, a + p).0)
            })
            .collect();
        Ok(TrialTapes { interior, boundary, interior_res, boundary_res, num_params: u.num_params() })
    }
}

fn flatten<T>(parts: Vec<Result<Vec<T>>>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Recorded trial-network jets for one batch, ready for a `∇_θ` sweep.
pub struct TrialTapes<'n, T> {
    interior: Vec<(usize, AdjointTape<'n, T>)>,
    boundary: Vec<(usize, AdjointTape<'n, T>)>,
    interior_res: Vec<T>,
    boundary_res: Vec<T>,
    num_params: usize,
}

impl<'n, T: Scalar> TrialTapes<'n, T> {
    pub fn interior_residuals(&self) -> &[T] {
        &self.interior_res
    }

    pub fn boundary_residuals(&self) -> &[T] {
        &self.boundary_res
    }

    /// `∇_θ L` for the given multiplier values at the interior points.
    pub fn trial_gradient(self, batch: &PreparedBatch<'_, T>, multiplier: &[T]) -> Result<Vec<T>> {
        let w = batch.interior_weight;
        let two = T::one() + T::one();
        let interior: Vec<Result<Vec<T>>> = self
            .interior
            .into_par_iter()
            .map(|(a, mut tape)| {
                let out = tape.output().expect("recorded");
                let (n, d) = (out.points(), out.dim());
                let mut adj = Array2::zeros((1, out.channels() * n));
                let mut loss = T::zero();
                for p in 0..n {
                    let (r, dr) = batch.interior_residual_at(out, p, a + p);
                    let scale = w * multiplier[a + p];
                    loss += scale * r;
                    write_adjoint(&mut adj, &dr, scale, p, n, d);
                }
                tape.record_loss(loss, adj)?;
                tape.backprop_params(T::one())
            })
            .collect();
        let boundary: Vec<Result<Vec<T>>> = self
            .boundary
            .into_par_iter()
            .map(|(a, mut tape)| {
                let out = tape.output().expect("recorded");
                let (n, d) = (out.points(), out.dim());
                let mut adj = Array2::zeros((1, out.channels() * n));
                let mut loss = T::zero();
                for p in 0..n {
                    let (r, dr) = batch.boundary_residual_at(out, p, a + p);
                    let wb = batch.boundary_weight[a + p];
                    loss += wb * r * r;
                    write_adjoint(&mut adj, &dr, two * wb * r, p, n, d);
                }
                tape.record_loss(loss, adj)?;
                tape.backprop_params(T::one())
            })
            .collect();
        let mut grad = vec![T::zero(); self.num_params];
        for part in interior.into_iter().chain(boundary) {
            grad.iter_mut().zip(part?).for_each(|(acc, x)| *acc += x);
        }
        Ok(grad)
    }
}

fn write_adjoint<T: Scalar>(adj: &mut Array2<T>, partial: &Jet<T>, scale: T, p: usize, n: usize, d: usize) {
    adj[[0, p]] = scale * partial.value;
    for k in 0..d {
        adj[[0, (1 + k) * n + p]] = scale * partial.grad[k];
    }
    adj[[0, (1 + d) * n + p]] = scale * partial.lap;
}

/// `L(u, v)` on a prepared batch.
pub fn empirical_lagrangian<T: Scalar>(
    u: &MlpNet<T>,
    v: &MlpNet<T>,
    batch: &PreparedBatch<'_, T>,
) -> Result<LossBreakdown<T>> {
    let r = batch.interior_residuals(u)?;
    let vals = batch.multiplier_values(v)?;
    let b = batch.boundary_residuals(u)?;
    Ok(batch.assemble(&r, &vals, &b))
}

/// `L(u, v)` and both parameter gradients `(∇_θ L, ∇_τ L)`.
pub fn lagrangian_with_gradients<T: Scalar>(
    u: &MlpNet<T>,
    v: &MlpNet<T>,
    batch: &PreparedBatch<'_, T>,
) -> Result<(LossBreakdown<T>, Vec<T>, Vec<T>)> {
    let tapes = batch.record_trial(u)?;
    let (vals, grad_v) = batch.multiplier_gradient(v, tapes.interior_residuals())?;
    let loss = batch.assemble(tapes.interior_residuals(), &vals, tapes.boundary_residuals());
    let grad_u = tapes.trial_gradient(batch, &vals)?;
    Ok((loss, grad_u, grad_v))
}

/// Two-point duality gap `L(u_next, v_curr) − L(u_curr, v_next)` for any
/// Lagrangian.
pub fn two_point_gap<U, V, T>(lagrangian: impl Fn(&U, &V) -> T, u_next: &U, v_curr: &V, u_curr: &U, v_next: &V) -> T
where
    T: std::ops::Sub<Output = T>,
{
    lagrangian(u_next, v_curr) - lagrangian(u_curr, v_next)
}

/// Duality-gap estimate of one training step, on one fixed batch.
pub fn duality_gap<T: Scalar>(
    u_next: &MlpNet<T>,
    v_curr: &MlpNet<T>,
    u_curr: &MlpNet<T>,
    v_next: &MlpNet<T>,
    batch: &PreparedBatch<'_, T>,
) -> Result<T> {
    let upper = empirical_lagrangian(u_next, v_curr, batch)?.total;
    let lower = empirical_lagrangian(u_curr, v_next, batch)?.total;
    Ok(upper - lower)
}

/// Pointwise Lagrangian for arbitrary fields: `u` supplies jets, `v` values.
/// Used with closed-form fields to check the Monte Carlo estimator itself.
pub fn lagrangian_of_fields(
    problem: &PdeProblem,
    batch: &Batch,
    u: impl Fn(&[f64]) -> Jet<f64>,
    v: impl Fn(&[f64]) -> f64,
) -> Result<LossBreakdown<f64>> {
    let prep = PreparedBatch::<f64>::new(problem, batch)?;
    let interior_res: Vec<f64> = batch
        .interior
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            let x = x.to_slice().unwrap();
            problem.operator.residual_with_partials(&u(x), &prep.coeffs[i], prep.source[i]).0
        })
        .collect();
    let multiplier: Vec<f64> = batch.interior.rows().into_iter().map(|x| v(x.to_slice().unwrap())).collect();
    let boundary_res: Vec<f64> = batch
        .boundary
        .iter()
        .enumerate()
        .map(|(j, b)| problem.bcs[prep.bc_index[j]].residual_with_partials(&u(&b.point), &b.normal, prep.data[j]).0)
        .collect();
    Ok(prep.assemble(&interior_res, &multiplier, &boundary_res))
}

/// Exact-solution values on a fixed test set.
pub fn exact_values(exact: &Field, points: &Array2<f64>) -> Vec<f64> {
    points.rows().into_iter().map(|x| exact(x.to_slice().unwrap())).collect()
}
