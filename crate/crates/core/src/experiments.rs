//! Named experiment presets: problem, network shapes and training settings.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::{derive_seed, Stream};
use crate::network::{architecture, Init, MlpNet};
use crate::problems::{builtin, PdeProblem};
use crate::scalar::Scalar;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub dim: usize,
    /// Exponent of the nonlinear conductivity; ignored elsewhere.
    pub m: i32,
}

impl ProblemSpec {
    pub fn new(name: &str, dim: usize, m: i32) -> Self {
        Self { name: name.to_string(), dim, m }
    }

    pub fn build(&self) -> Result<PdeProblem> {
        let problem = builtin(&self.name, self.dim, self.m)?;
        if problem.dim() != self.dim {
            return Err(Error::Config(format!(
                "problem '{}' is {}-dimensional, configured dim is {}",
                self.name,
                problem.dim(),
                self.dim
            )));
        }
        Ok(problem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub width: usize,
    pub depth: usize,
}

impl NetShape {
    pub const fn new(width: usize, depth: usize) -> Self {
        Self { width, depth }
    }

    pub fn sizes(&self, dim: usize) -> Vec<usize> {
        architecture(dim, self.width, self.depth)
    }
}

/// Planar slice for solution dumps: `axes` vary over the domain bounds on a
/// `points × points` grid, the other coordinates stay at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSpec {
    pub axes: [usize; 2],
    pub base: Vec<f64>,
    pub points: usize,
}

impl SliceSpec {
    pub fn centred(problem: &PdeProblem, axes: [usize; 2], points: usize) -> Self {
        let (lo, hi) = problem.domain.bounds();
        Self { axes, base: lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect(), points }
    }

    /// Grid points inside the domain, one per row.
    pub fn grid(&self, problem: &PdeProblem) -> Result<Array2<f64>> {
        let d = problem.dim();
        if self.base.len() != d || self.axes.iter().any(|&a| a >= d) || self.axes[0] == self.axes[1] {
            return Err(Error::Config(format!("slice axes {:?} / base of length {} do not fit a {d}D problem", self.axes, self.base.len())));
        }
        if self.points < 2 {
            return Err(Error::Config("slice needs at least 2 points per axis".into()));
        }
        let (lo, hi) = problem.domain.bounds();
        let coord = |axis: usize, i: usize| lo[axis] + (hi[axis] - lo[axis]) * i as f64 / (self.points - 1) as f64;
        let mut rows = Vec::new();
        for i in 0..self.points {
            for j in 0..self.points {
                let mut x = self.base.clone();
                x[self.axes[0]] = coord(self.axes[0], i);
                x[self.axes[1]] = coord(self.axes[1], j);
                if problem.domain.contains(&x) {
                    rows.extend(x);
                }
            }
        }
        let n = rows.len() / d;
        Ok(Array2::from_shape_vec((n, d), rows).expect("row-major grid"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub name: String,
    pub summary: String,
    pub problem: ProblemSpec,
    pub u_net: NetShape,
    pub v_net: NetShape,
    pub init: Init,
    pub train: TrainConfig,
    pub slice_axes: [usize; 2],
    pub slice_points: usize,
}

impl Experiment {
    /// Initial `(u, v)` networks, seeded from the training seed.
    pub fn networks<T: Scalar>(&self) -> Result<(MlpNet<T>, MlpNet<T>)> {
        let d = self.problem.dim;
        let seed = self.train.seed;
        Ok((
            MlpNet::init(&self.u_net.sizes(d), self.init, derive_seed(seed, Stream::InitU))?,
            MlpNet::init(&self.v_net.sizes(d), self.init, derive_seed(seed, Stream::InitV))?,
        ))
    }

    pub fn slice(&self, problem: &PdeProblem) -> SliceSpec {
        SliceSpec::centred(problem, self.slice_axes, self.slice_points)
    }
}

/// Training settings shared by the experiments: RMSprop at 1e-3, halved every 5000 iterations.
fn base_train(n_interior: usize, n_boundary: usize, iters: usize) -> TrainConfig {
    TrainConfig { n_interior, n_boundary, iters, ..TrainConfig::default() }
}

fn experiment(
    name: String,
    summary: String,
    problem: ProblemSpec,
    net: NetShape,
    train: TrainConfig,
    slice_axes: [usize; 2],
) -> Experiment {
    Experiment { name, summary, problem, u_net: net, v_net: net, init: Init::FanIn, train, slice_axes, slice_points: 41 }
}

/// Sample counts of the convergence table for the 3D Poisson problem.
pub const TABLE1_SAMPLES: [(usize, usize); 4] = [(2500, 300), (5000, 432), (7500, 516), (10000, 600)];
pub const TABLE2_WIDTHS: [usize; 3] = [10, 20, 40];
pub const TABLE2_DEPTHS: [usize; 3] = [1, 2, 3];

pub fn presets() -> Vec<Experiment> {
    let mut out = Vec::new();
    let p3 = ProblemSpec::new("dirichlet_poisson", 3, 0);

    let five = TrainConfig { lr: 5e-4, lr_step: 2000, ..base_train(2500, 300, 20_000) };
    out.push(experiment(
        "dirichlet-5d".into(),
        "Poisson on [-1,1]^5, 4x100 networks, lr 5e-4 halved every 2000 iterations".into(),
        ProblemSpec::new("dirichlet_poisson", 5, 0),
        NetShape::new(100, 4),
        five.clone(),
        [1, 3],
    ));
    out.push(experiment(
        "dirichlet-5d-reduced".into(),
        "Poisson on [-1,1]^5 with 4x60 networks".into(),
        ProblemSpec::new("dirichlet_poisson", 5, 0),
        NetShape::new(60, 4),
        five,
        [1, 3],
    ));

    for (n, nb) in TABLE1_SAMPLES {
        out.push(experiment(
            format!("table1-n{n}"),
            format!("Poisson on [-1,1]^3, 2x40 networks, N = {n}, N_b = {nb}"),
            p3.clone(),
            NetShape::new(40, 2),
            base_train(n, nb, 20_000),
            [0, 1],
        ));
    }
    for w in TABLE2_WIDTHS {
        for depth in TABLE2_DEPTHS {
            out.push(experiment(
                format!("table2-w{w}-d{depth}"),
                format!("Poisson on [-1,1]^3, {depth}x{w} networks, N = 10000, N_b = 600"),
                p3.clone(),
                NetShape::new(w, depth),
                base_train(10_000, 600, 20_000),
                [0, 1],
            ));
        }
    }
    out.push(experiment(
        "l-shape".into(),
        "Poisson on the L-shaped domain against a finite-difference reference, 4x40 networks".into(),
        ProblemSpec::new("l_shape", 2, 0),
        NetShape::new(40, 4),
        base_train(2500, 400, 20_000),
        [0, 1],
    ));
    out.push(experiment(
        "mixed".into(),
        "Poisson on the unit square with Dirichlet and Neumann segments, 4x40 networks".into(),
        ProblemSpec::new("mixed", 2, 0),
        NetShape::new(40, 4),
        base_train(2500, 400, 20_000),
        [0, 1],
    ));
    let fixed = TrainConfig { lr: 2e-4, lr_decay: 1.0, ..base_train(10_000, 400, 10_000) };
    out.push(experiment(
        "semilinear".into(),
        "Variable-coefficient problem on [0,1]^5, N = 10000, N_b = 400, fixed lr 2e-4".into(),
        ProblemSpec::new("semilinear", 5, 0),
        NetShape::new(40, 4),
        fixed.clone(),
        [0, 1],
    ));
    out.push(experiment(
        "nonlinear".into(),
        "Conductivity (1+u)^2 on [0,1]^5, N = 10000, N_b = 400, fixed lr 2e-4".into(),
        ProblemSpec::new("nonlinear", 5, 2),
        NetShape::new(40, 4),
        fixed,
        [0, 1],
    ));
    out
}

pub fn preset(name: &str) -> Result<Experiment> {
    presets().into_iter().find(|e| e.name == name).ok_or_else(|| {
        let names: Vec<String> = presets().into_iter().map(|e| e.name).collect();
        Error::Config(format!("unknown preset '{name}' (known: {})", names.join(", ")))
    })
}
