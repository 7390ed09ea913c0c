//! Finite-difference oracles for the derivative engine, plus the convergence
//! probes for Monte Carlo quadrature and the FD reference solver.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fd::solve_poisson_fd;
use crate::geometry::{derive_seed, stream_rng, BoundaryLabel, Domain, Stream};
use crate::loss::{empirical_lagrangian, lagrangian_with_gradients, Batch, PreparedBatch};
use crate::network::MlpNet;
use crate::problems::{field, BoundaryCondition, PdeProblem};

pub const GRAD_TOL: f64 = 1e-7;
pub const LAP_TOL: f64 = 1e-6;
pub const ADJOINT_TOL: f64 = 1e-5;
/// Step of the fourth-order central stencil for input gradients.
pub const GRAD_STEP: f64 = 1e-3;
/// Step of the sixth-order `6d + 1`-point Laplacian stencil. The large step
/// keeps cancellation error low when the output carries a large offset.
pub const LAP_STEP: f64 = 1e-2;
/// Central-difference step for parameter adjoints.
pub const ADJOINT_STEP: f64 = 1e-5;
/// Largest parameter magnitude of the random networks.
pub const PARAM_BOUND: f64 = 2.0;

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`, zero when both vanish.
pub fn relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub sizes: Vec<usize>,
    pub pairs: usize,
    pub seed: u64,
    /// Interior and boundary samples in the loss used for the adjoint check.
    pub batch: usize,
    /// Negative control: perturbs one adjoint entry by 1e-3 of the gradient scale.
    pub corrupt_adjoint: bool,
}

impl GradcheckOptions {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self { sizes, pairs: 50, seed: 0, batch: 10, corrupt_adjoint: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub pairs: usize,
    pub max_grad_dev: f64,
    pub max_lap_dev: f64,
    pub max_adjoint_dev: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_grad_dev <= GRAD_TOL && self.max_lap_dev <= LAP_TOL && self.max_adjoint_dev <= ADJOINT_TOL
    }
}

/// Network with every parameter drawn uniformly from `[−PARAM_BOUND, PARAM_BOUND]`
/// and hidden weights scaled by `1/√fan_in` so activations stay unsaturated.
pub fn random_net(sizes: &[usize], rng: &mut impl Rng) -> Result<MlpNet<f64>> {
    let mut net = MlpNet::zeros(sizes)?;
    for layer in 0..net.layers() {
        let fan_in = sizes[layer] as f64;
        let scale = if layer == 0 { 1.0 } else { 1.0 / fan_in.sqrt() };
        net.weight_mut(layer).mapv_inplace(|_| scale * rng.random_range(-PARAM_BOUND..=PARAM_BOUND));
        net.bias_mut(layer).mapv_inplace(|_| rng.random_range(-PARAM_BOUND..=PARAM_BOUND));
    }
    Ok(net)
}

/// `f(x + j·h·e_k)` for `j = −3..=3`.
fn axis_samples(net: &MlpNet<f64>, x: &[f64], k: usize, h: f64) -> Result<[f64; 7]> {
    let mut y = x.to_vec();
    let mut out = [0.0; 7];
    for (j, o) in out.iter_mut().enumerate() {
        y[k] = x[k] + (j as f64 - 3.0) * h;
        *o = net.eval(&y)?;
    }
    Ok(out)
}

fn fd_gradient(net: &MlpNet<f64>, x: &[f64]) -> Result<Vec<f64>> {
    let net = &without_output_bias(net);
    (0..x.len())
        .map(|k| {
            let f = axis_samples(net, x, k, GRAD_STEP)?;
            Ok((f[1] - 8.0 * f[2] + 8.0 * f[4] - f[5]) / (12.0 * GRAD_STEP))
        })
        .collect()
}

/// The output bias drops out of every input derivative; zeroing it keeps its
/// rounding error out of the stencils.
fn without_output_bias(net: &MlpNet<f64>) -> MlpNet<f64> {
    let mut n = net.clone();
    let last = n.layers() - 1;
    n.bias_mut(last).fill(0.0);
    n
}

fn fd_laplacian(net: &MlpNet<f64>, x: &[f64]) -> Result<f64> {
    let net = &without_output_bias(net);
    const W: [f64; 7] = [1.0 / 90.0, -3.0 / 20.0, 1.5, -49.0 / 18.0, 1.5, -3.0 / 20.0, 1.0 / 90.0];
    let mut acc = 0.0;
    for k in 0..x.len() {
        let f = axis_samples(net, x, k, LAP_STEP)?;
        acc += W.iter().zip(&f).map(|(w, v)| w * v).sum::<f64>();
    }
    Ok(acc / (LAP_STEP * LAP_STEP))
}

fn fd_params(net: &MlpNet<f64>, loss: impl Fn(&MlpNet<f64>) -> Result<f64>) -> Result<Vec<f64>> {
    let base = net.params();
    let mut probe = net.clone();
    let mut p = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        p[i] = base[i] + ADJOINT_STEP;
        probe.set_params(&p)?;
        let up = loss(&probe)?;
        p[i] = base[i] - ADJOINT_STEP;
        probe.set_params(&p)?;
        let down = loss(&probe)?;
        p[i] = base[i];
        out.push((up - down) / (2.0 * ADJOINT_STEP));
    }
    Ok(out)
}

/// Compares jets and tape adjoints against finite differences on
/// `opts.pairs` random (network, point) pairs. Pair `i` uses
/// `problems[i % problems.len()]` for its loss.
pub fn gradcheck(problems: &[PdeProblem], opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let Some(first) = problems.first() else {
        return Err(Error::Config("gradcheck needs at least one problem".into()));
    };
    let d = first.dim();
    if problems.iter().any(|p| p.dim() != d) || opts.sizes.first() != Some(&d) {
        return Err(Error::Dimension(format!("architecture {:?} does not match the problems", opts.sizes)));
    }
    if opts.pairs == 0 || opts.batch == 0 {
        return Err(Error::Count("gradcheck needs at least one pair and one sample".into()));
    }
    let mut rng = stream_rng(opts.seed, Stream::InitU);
    let mut report = GradcheckReport { pairs: opts.pairs, max_grad_dev: 0.0, max_lap_dev: 0.0, max_adjoint_dev: 0.0 };
    for i in 0..opts.pairs {
        let problem = &problems[i % problems.len()];
        let u = random_net(&opts.sizes, &mut rng)?;
        let v = random_net(&opts.sizes, &mut rng)?;
        let x = problem.domain.sample_interior(1, &mut rng)?.row(0).to_vec();

        let jet = u.eval_jet(&x)?;
        report.max_grad_dev = report.max_grad_dev.max(relative_deviation(&jet.grad, &fd_gradient(&u, &x)?));
        report.max_lap_dev = report.max_lap_dev.max(relative_deviation(&[jet.lap], &[fd_laplacian(&u, &x)?]));

        let pair_seed = derive_seed(opts.seed ^ i as u64, Stream::Test);
        let batch = Batch::draw(
            problem,
            opts.batch,
            opts.batch,
            &mut stream_rng(pair_seed, Stream::Interior),
            &mut stream_rng(pair_seed, Stream::Boundary),
        )?;
        let prep = PreparedBatch::<f64>::new(problem, &batch)?;
        let (_, mut gu, gv) = lagrangian_with_gradients(&u, &v, &prep)?;
        if opts.corrupt_adjoint {
            let scale = gu.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            gu[0] += 1e-3 * scale;
        }
        let fu = fd_params(&u, |n| Ok(empirical_lagrangian(n, &v, &prep)?.total))?;
        let fv = fd_params(&v, |n| Ok(empirical_lagrangian(&u, n, &prep)?.total))?;
        let dev = relative_deviation(&gu, &fu).max(relative_deviation(&gv, &fv));
        report.max_adjoint_dev = report.max_adjoint_dev.max(dev);
    }
    Ok(report)
}

/// Median over seeds of `|MC − exact|` for `∫ Π cos(πx_i/2)` on `[−1, 1]^d`,
/// one entry per sample count.
pub fn mc_median_errors(dim: usize, counts: &[usize], seeds: u64) -> Result<Vec<f64>> {
    let dom = Domain::cube(dim, -1.0, 1.0)?;
    let exact = (4.0 / PI).powi(dim as i32);
    let f = |x: &[f64]| x.iter().map(|&v| (0.5 * PI * v).cos()).product::<f64>();
    counts
        .iter()
        .map(|&n| {
            let mut errs = (0..seeds)
                .map(|s| Ok((dom.mc_integrate(f, n, &mut stream_rng(s, Stream::Interior))? - exact).abs()))
                .collect::<Result<Vec<f64>>>()?;
            errs.sort_by(f64::total_cmp);
            let m = errs.len();
            Ok(if m % 2 == 1 { errs[m / 2] } else { 0.5 * (errs[m / 2 - 1] + errs[m / 2]) })
        })
        .collect()
}

/// Max-norm error of the FD solver on `u = sin(πx) sin(πy)` over `[0, 1]²`
/// for each grid step.
pub fn fd_manufactured_errors(steps: &[f64]) -> Result<Vec<f64>> {
    let dom = Domain::cube(2, 0.0, 1.0)?;
    let f = field(|x| 2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin());
    let bcs = [BoundaryCondition::dirichlet(BoundaryLabel::Dirichlet, field(|_| 0.0))];
    steps
        .iter()
        .map(|&h| {
            let sol = solve_poisson_fd(&dom, &f, &bcs, h)?;
            Ok(sol.nodes().map(|(x, y, u)| (u - (PI * x).sin() * (PI * y).sin()).abs()).fold(0.0, f64::max))
        })
        .collect()
}

/// Ratios `e[i] / e[i + 1]` of consecutive errors.
pub fn ratios(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| w[0] / w[1]).collect()
}
