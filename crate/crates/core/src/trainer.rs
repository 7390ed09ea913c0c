//! Gradient descent-ascent training loop.
//!
//! Each outer iteration draws a fresh batch, takes `k` RMSprop ascent steps
//! on the multiplier and `ℓ` descent steps on the trial network, then logs
//! the loss, the two-point duality gap and the test error.

use std::time::Instant;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::geometry::{stream_rng, Stream};
use crate::loss::{exact_values, two_point_gap, Batch, LossBreakdown, PreparedBatch};
use crate::network::MlpNet;
use crate::problems::{Field, PdeProblem};
use crate::scalar::Scalar;

/// Loss magnitude beyond which a run is declared diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_interior: usize,
    pub n_boundary: usize,
    pub iters: usize,
    /// `k`: ascent steps on the multiplier per iteration.
    pub ascent_steps: usize,
    /// `ℓ`: descent steps on the trial network per iteration.
    pub descent_steps: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_step: usize,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub seed: u64,
    pub test_points: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_interior: 2500,
            n_boundary: 300,
            iters: 20_000,
            ascent_steps: 1,
            descent_steps: 1,
            lr: 1e-3,
            lr_decay: 0.5,
            lr_step: 5000,
            rms_decay: 0.99,
            rms_eps: 1e-8,
            seed: 0,
            test_points: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_interior", self.n_interior),
            ("n_boundary", self.n_boundary),
            ("ascent_steps", self.ascent_steps),
            ("descent_steps", self.descent_steps),
            ("lr_step", self.lr_step),
            ("test_points", self.test_points),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, c)| *c == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::Config(format!("lr_decay must be positive, got {}", self.lr_decay)));
        }
        if !(self.rms_decay > 0.0 && self.rms_decay < 1.0) {
            return Err(Error::Config(format!("rms_decay must lie in (0, 1), got {}", self.rms_decay)));
        }
        if !(self.rms_eps > 0.0 && self.rms_eps.is_finite()) {
            return Err(Error::Config(format!("rms_eps must be positive, got {}", self.rms_eps)));
        }
        Ok(())
    }
}

/// `lr · decay^⌊iter / step⌋`
pub fn lr_at(iter: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.lr_decay.powi((iter / cfg.lr_step.max(1)) as i32)
}

/// Running mean of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsState<T> {
    pub mean_sq: Vec<T>,
}

impl<T: Scalar> RmsState<T> {
    pub fn new(n: usize) -> Self {
        Self { mean_sq: vec![T::zero(); n] }
    }
}

/// One RMSprop descent step; pass the negated gradient to ascend.
pub fn rmsprop_step<T: Scalar>(
    params: &mut [T],
    grad: &[T],
    state: &mut RmsState<T>,
    lr: T,
    decay: T,
    eps: T,
) -> Result<()> {
    if params.len() != grad.len() || grad.len() != state.mean_sq.len() {
        return Err(Error::Dimension(format!(
            "rmsprop: {} params, {} gradients, {} state entries",
            params.len(),
            grad.len(),
            state.mean_sq.len()
        )));
    }
    let keep = T::one() - decay;
    for ((p, &g), s) in params.iter_mut().zip(grad).zip(state.mean_sq.iter_mut()) {
        *s = decay * *s + keep * g * g;
        *p -= lr * g / (s.sqrt() + eps);
    }
    Ok(())
}

fn step_net<T: Scalar>(net: &mut MlpNet<T>, grad: &[T], state: &mut RmsState<T>, lr: f64, cfg: &TrainConfig) -> Result<()> {
    let mut params = net.params();
    rmsprop_step(&mut params, grad, state, T::of(lr), T::of(cfg.rms_decay), T::of(cfg.rms_eps))?;
    net.set_params(&params)
}

/// `‖u − u*‖ / ‖u*‖` over the rows of `points`.
pub fn rel_l2_error<T: Scalar>(u: &MlpNet<T>, exact: &Field, points: &Array2<f64>) -> Result<f64> {
    TestSet { exact: exact_values(exact, points), points: points.clone() }.rel_l2(u)
}

/// Fixed evaluation points with reference values, drawn from their own stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub points: Array2<f64>,
    pub exact: Vec<f64>,
}

impl TestSet {
    /// `None` when the problem has no reference solution.
    pub fn for_problem(problem: &PdeProblem, n: usize, seed: u64) -> Result<Option<Self>> {
        let Some(exact) = &problem.exact else { return Ok(None) };
        let points = problem.domain.sample_interior(n, &mut stream_rng(seed, Stream::Test))?;
        Ok(Some(Self { exact: exact_values(exact, &points), points }))
    }

    pub fn predictions<T: Scalar>(&self, net: &MlpNet<T>) -> Result<Vec<f64>> {
        let pts = self.points.mapv(T::of);
        Ok(net.eval_many(pts.view())?.into_iter().map(T::as_f64).collect())
    }

    pub fn rel_l2<T: Scalar>(&self, u: &MlpNet<T>) -> Result<f64> {
        let norm: f64 = self.exact.iter().map(|e| e * e).sum();
        if norm == 0.0 {
            return Err(Error::ZeroReference);
        }
        let pred = self.predictions(u)?;
        let err: f64 = pred.iter().zip(&self.exact).map(|(p, e)| (p - e) * (p - e)).sum();
        Ok((err / norm).sqrt())
    }

    /// Root mean square of a network over the test points.
    pub fn rms<T: Scalar>(&self, net: &MlpNet<T>) -> Result<f64> {
        let pred = self.predictions(net)?;
        Ok((pred.iter().map(|p| p * p).sum::<f64>() / pred.len() as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iter: usize,
    /// `L(u_n, v_n)` on this iteration's batch, before any update.
    pub loss: LossBreakdown<f64>,
    pub duality_gap: f64,
    pub rel_l2_error: Option<f64>,
    pub lr: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainStatus {
    Completed,
    /// Non-finite loss or `|loss| > DIVERGENCE_LIMIT` at `iter`; the last record is the diagnostic.
    Diverged { iter: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub u: MlpNet<T>,
    pub v: MlpNet<T>,
    pub records: Vec<TrainRecord>,
    pub status: TrainStatus,
}

pub fn train<T: Scalar>(problem: &PdeProblem, u: MlpNet<T>, v: MlpNet<T>, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(problem, u, v, cfg, |_, _, _| Ok(()))
}

fn breakdown_f64<T: Scalar>(l: &LossBreakdown<T>) -> LossBreakdown<f64> {
    LossBreakdown {
        total: l.total.as_f64(),
        boundary: l.boundary.as_f64(),
        interior: l.interior.as_f64(),
        segments: l.segments.iter().map(|&(s, x)| (s, x.as_f64())).collect(),
    }
}

/// Like [`train`], calling `observer` after every record with the updated networks.
pub fn train_with<T, F>(
    problem: &PdeProblem,
    mut u: MlpNet<T>,
    mut v: MlpNet<T>,
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<TrainOutcome<T>>
where
    T: Scalar,
    F: FnMut(&TrainRecord, &MlpNet<T>, &MlpNet<T>) -> Result<()>,
{
    cfg.validate()?;
    let d = problem.dim();
    if u.input_dim() != d || v.input_dim() != d {
        return Err(Error::Dimension(format!(
            "networks take {} and {} inputs, problem is {d}-dimensional",
            u.input_dim(),
            v.input_dim()
        )));
    }
    let test = TestSet::for_problem(problem, cfg.test_points, cfg.seed)?;
    let mut interior_rng = stream_rng(cfg.seed, Stream::Interior);
    let mut boundary_rng = stream_rng(cfg.seed, Stream::Boundary);
    let mut rms_u = RmsState::new(u.num_params());
    let mut rms_v = RmsState::new(v.num_params());
    let start = Instant::now();
    let mut records = Vec::with_capacity(cfg.iters);

    for iter in 0..cfg.iters {
        let lr = lr_at(iter, cfg);
        let batch = Batch::draw(problem, cfg.n_interior, cfg.n_boundary, &mut interior_rng, &mut boundary_rng)?;
        let prep = PreparedBatch::<T>::new(problem, &batch)?;

        let tapes = prep.record_trial(&u)?;
        let res = tapes.interior_residuals().to_vec();
        let bres = tapes.boundary_residuals().to_vec();

        let mut v_before = Vec::new();
        for step in 0..cfg.ascent_steps {
            let (vals, mut g) = prep.multiplier_gradient(&v, &res)?;
            if step == 0 {
                v_before = vals;
            }
            g.iter_mut().for_each(|x| *x = -*x);
            step_net(&mut v, &g, &mut rms_v, lr, cfg)?;
        }
        let v_after = prep.multiplier_values(&v)?;

        let g = tapes.trial_gradient(&prep, &v_after)?;
        step_net(&mut u, &g, &mut rms_u, lr, cfg)?;
        for _ in 1..cfg.descent_steps {
            let g = prep.record_trial(&u)?.trial_gradient(&prep, &v_after)?;
            step_net(&mut u, &g, &mut rms_u, lr, cfg)?;
        }

        let loss = breakdown_f64(&prep.assemble(&res, &v_before, &bres));
        let res_next = prep.interior_residuals(&u)?;
        let bres_next = prep.boundary_residuals(&u)?;
        // (u_{n+1}, v_n) and (u_n, v_{n+1}) through cached residuals and multiplier values
        let lagrangian = |r: &(&[T], &[T]), m: &&[T]| prep.assemble(r.0, m, r.1).total;
        let gap = two_point_gap(lagrangian, &(&res_next[..], &bres_next[..]), &&v_before[..], &(&res[..], &bres[..]), &&v_after[..])
            .as_f64();

        let diverged = !loss.total.is_finite() || loss.total.abs() > DIVERGENCE_LIMIT;
        let rel_l2_error = match (&test, diverged) {
            (Some(t), false) => Some(t.rel_l2(&u)?),
            _ => None,
        };
        let record = TrainRecord { iter, loss, duality_gap: gap, rel_l2_error, lr, elapsed_s: start.elapsed().as_secs_f64() };
        observer(&record, &u, &v)?;
        records.push(record);
        if diverged {
            return Ok(TrainOutcome { u, v, records, status: TrainStatus::Diverged { iter } });
        }
    }
    Ok(TrainOutcome { u, v, records, status: TrainStatus::Completed })
}

/// `L(θ, τ) = ½θᵀAθ + θᵀBτ − ½τᵀCτ` with `A`, `C` positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSaddle {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub c: Array2<f64>,
}

impl QuadraticSaddle {
    pub fn value(&self, theta: &Array1<f64>, tau: &Array1<f64>) -> f64 {
        0.5 * theta.dot(&self.a.dot(theta)) + theta.dot(&self.b.dot(tau)) - 0.5 * tau.dot(&self.c.dot(tau))
    }

    pub fn grad_theta(&self, theta: &Array1<f64>, tau: &Array1<f64>) -> Array1<f64> {
        self.a.dot(theta) + self.b.dot(tau)
    }

    pub fn grad_tau(&self, theta: &Array1<f64>, tau: &Array1<f64>) -> Array1<f64> {
        self.b.t().dot(theta) - self.c.dot(tau)
    }

    /// Single-step GDA with plain gradient steps: ascent on `τ`, then descent
    /// on `θ` against the updated `τ`. Returns the duality gap of every step.
    pub fn gda(&self, theta0: Array1<f64>, tau0: Array1<f64>, lr: f64, iters: usize) -> Vec<f64> {
        let (mut theta, mut tau) = (theta0, tau0);
        let mut gaps = Vec::with_capacity(iters);
        for _ in 0..iters {
            let tau_next = &tau + &(lr * self.grad_tau(&theta, &tau));
            let theta_next = &theta - &(lr * self.grad_theta(&theta, &tau_next));
            gaps.push(two_point_gap(|t, s| self.value(t, s), &theta_next, &tau, &theta, &tau_next));
            theta = theta_next;
            tau = tau_next;
        }
        gaps
    }
}

/// The toy used by the GDA checks.
pub fn reference_saddle() -> QuadraticSaddle {
    QuadraticSaddle {
        a: ndarray::arr2(&[[1.0, 0.2], [0.2, 0.5]]),
        b: ndarray::arr2(&[[1.0, 0.3], [-0.2, 0.8]]),
        c: ndarray::arr2(&[[0.6, 0.0], [0.0, 0.3]]),
    }
}
