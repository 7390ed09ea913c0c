//! Elliptic problems `A u = f` in `Ω`, `B u = g` on `∂Ω`.
//!
//! Interior operators are isotropic divergence forms, expanded by the product
//! rule so they only need `(u, ∇u, Δu)`:
//!
//! ```text
//! −Δu                = −Δu
//! −∇·(a(x) ∇u)       = −(∇a·∇u + a Δu)
//! −∇·(q(u) ∇u)       = −(q'(u) |∇u|² + q(u) Δu)
//! ```
//!
//! Boundary operators are `α u + β ∂u/∂n`.

use std::fmt;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fd::solve_poisson_fd;
use crate::geometry::{BoundaryLabel, BoundarySample, Domain};
use crate::jet::Jet;
use crate::scalar::Scalar;

pub type Field = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub fn field(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Field {
    Arc::new(f)
}

#[derive(Clone)]
pub enum OperatorSpec {
    Laplace,
    /// `−∇·(a(x) ∇u)`; needs `a > 0` on `Ω`.
    DivCoeff { a: Field, grad_a: GradField },
    /// `−∇·(q(u) ∇u)` with `q`, `q'` and `q''` (the last one only enters
    /// parameter gradients).
    DivNonlinear { q: Profile, dq: Profile, d2q: Profile },
}

impl fmt::Debug for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorSpec::Laplace => write!(f, "Laplace"),
            OperatorSpec::DivCoeff { .. } => write!(f, "DivCoeff"),
            OperatorSpec::DivNonlinear { .. } => write!(f, "DivNonlinear"),
        }
    }
}

/// Per-point data an operator needs besides the trial jet.
#[derive(Debug, Clone, PartialEq)]
pub enum PointCoeffs {
    None,
    Coeff { a: f64, grad_a: Vec<f64> },
}

impl OperatorSpec {
    pub fn coeffs_at(&self, x: &[f64]) -> PointCoeffs {
        match self {
            OperatorSpec::DivCoeff { a, grad_a } => PointCoeffs::Coeff { a: a(x), grad_a: grad_a(x) },
            _ => PointCoeffs::None,
        }
    }

    /// Residual `A u − f` and its partial derivatives with respect to the
    /// jet channels of `u`, packed as a jet.
    pub fn residual_with_partials<T: Scalar>(&self, u: &Jet<T>, coeffs: &PointCoeffs, f_val: T) -> (T, Jet<T>) {
        let d = u.dim();
        match (self, coeffs) {
            (OperatorSpec::Laplace, _) => (-u.lap - f_val, Jet::new(T::zero(), vec![T::zero(); d], -T::one())),
            (OperatorSpec::DivCoeff { .. }, PointCoeffs::Coeff { a, grad_a }) => {
                let a = T::of(*a);
                let ga: Vec<T> = grad_a.iter().map(|&g| T::of(g)).collect();
                let r = -(u.directional(&ga) + a * u.lap) - f_val;
                (r, Jet::new(T::zero(), ga.iter().map(|&g| -g).collect(), -a))
            }
            (OperatorSpec::DivCoeff { .. }, PointCoeffs::None) => {
                panic!("coefficient operator evaluated without point coefficients")
            }
            (OperatorSpec::DivNonlinear { q, dq, d2q }, _) => {
                let v = u.value.as_f64();
                let (q0, q1, q2) = (T::of(q(v)), T::of(dq(v)), T::of(d2q(v)));
                let gsq = u.grad_norm_sq();
                let two = T::one() + T::one();
                let r = -(q1 * gsq + q0 * u.lap) - f_val;
                let partials = Jet::new(
                    -(q2 * gsq + q1 * u.lap),
                    u.grad.iter().map(|&g| -two * q1 * g).collect(),
                    -q0,
                );
                (r, partials)
            }
        }
    }
}

/// `A u(x) − f(x)` for the trial jet `u` at `x`.
pub fn interior_residual<T: Scalar>(op: &OperatorSpec, u: &Jet<T>, x: &[f64], f_val: T) -> T {
    op.residual_with_partials(u, &op.coeffs_at(x), f_val).0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BcKind {
    Dirichlet,
    Neumann,
    Robin { alpha: f64, beta: f64 },
}

impl BcKind {
    /// `(α, β)` of `α u + β ∂u/∂n`.
    pub fn coefficients(self) -> (f64, f64) {
        match self {
            BcKind::Dirichlet => (1.0, 0.0),
            BcKind::Neumann => (0.0, 1.0),
            BcKind::Robin { alpha, beta } => (alpha, beta),
        }
    }
}

#[derive(Clone)]
pub struct BoundaryCondition {
    pub label: BoundaryLabel,
    pub kind: BcKind,
    pub data: Field,
}

impl fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryCondition").field("label", &self.label).field("kind", &self.kind).finish()
    }
}

impl BoundaryCondition {
    pub fn new(label: BoundaryLabel, kind: BcKind, data: Field) -> Result<Self> {
        if let BcKind::Robin { alpha, beta } = kind {
            if !(alpha > 0.0) || !(beta >= 0.0) {
                return Err(Error::Config(format!("Robin condition needs α > 0, β ≥ 0 (got {alpha}, {beta})")));
            }
        }
        Ok(Self { label, kind, data })
    }

    pub fn dirichlet(label: BoundaryLabel, data: Field) -> Self {
        Self { label, kind: BcKind::Dirichlet, data }
    }

    pub fn neumann(label: BoundaryLabel, data: Field) -> Self {
        Self { label, kind: BcKind::Neumann, data }
    }

    /// `B u − g` and its partials with respect to the jet channels of `u`.
    pub fn residual_with_partials<T: Scalar>(&self, u: &Jet<T>, normal: &[f64], g_val: T) -> (T, Jet<T>) {
        let (alpha, beta) = self.kind.coefficients();
        let (alpha, beta) = (T::of(alpha), T::of(beta));
        let n: Vec<T> = normal.iter().map(|&v| T::of(v)).collect();
        let mut r = alpha * u.value - g_val;
        if beta != T::zero() {
            r += beta * u.directional(&n);
        }
        (r, Jet::new(alpha, n.iter().map(|&v| beta * v).collect(), T::zero()))
    }
}

/// `B u(x_b) − g(x_b)`; the sample must belong to the condition's segment.
pub fn boundary_residual<T: Scalar>(
    bc: &BoundaryCondition,
    u: &Jet<T>,
    sample: &BoundarySample,
    g_val: T,
) -> Result<T> {
    if sample.label != bc.label {
        return Err(Error::Config(format!(
            "{} sample passed to a {} condition",
            sample.label.name(),
            bc.label.name()
        )));
    }
    Ok(bc.residual_with_partials(u, &sample.normal, g_val).0)
}

#[derive(Clone)]
pub struct PdeProblem {
    pub name: String,
    pub domain: Domain,
    pub operator: OperatorSpec,
    pub bcs: Vec<BoundaryCondition>,
    pub source: Field,
    pub exact: Option<Field>,
}

impl fmt::Debug for PdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PdeProblem")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("operator", &self.operator)
            .field("bcs", &self.bcs)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

impl PdeProblem {
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        operator: OperatorSpec,
        bcs: Vec<BoundaryCondition>,
        source: Field,
        exact: Option<Field>,
    ) -> Result<Self> {
        for label in domain.labels() {
            let n = bcs.iter().filter(|bc| bc.label == label).count();
            if n != 1 {
                return Err(Error::Config(format!("segment '{}' has {n} boundary conditions", label.name())));
            }
        }
        if let Some(bc) = bcs.iter().find(|bc| domain.segment_measure(bc.label) == 0.0) {
            return Err(Error::Config(format!("condition for absent segment '{}'", bc.label.name())));
        }
        Ok(Self { name: name.into(), domain, operator, bcs, source, exact })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn bc(&self, label: BoundaryLabel) -> &BoundaryCondition {
        self.bcs.iter().find(|bc| bc.label == label).expect("validated at construction")
    }
}

fn cos_product(x: &[f64]) -> f64 {
    x.iter().map(|&xi| (0.5 * PI * xi).cos()).product()
}

/// `−Δu = Π cos(π x_i / 2)` on `[−1, 1]^d`, `u = 0` on the boundary.
/// Exact solution `u* = 4 / (d π²) Π cos(π x_i / 2)`.
pub fn dirichlet_poisson(dim: usize) -> Result<PdeProblem> {
    let domain = Domain::cube(dim, -1.0, 1.0)?;
    let c = 4.0 / (dim as f64 * PI * PI);
    PdeProblem::new(
        format!("dirichlet_poisson_d{dim}"),
        domain,
        OperatorSpec::Laplace,
        vec![BoundaryCondition::dirichlet(BoundaryLabel::Dirichlet, field(|_| 0.0))],
        field(cos_product),
        Some(field(move |x| c * cos_product(x))),
    )
}

/// Poisson on `[−1, 1]² ∖ (0, 1]²` with a Gaussian bump source, `u = 0`.
/// No closed form; attach a reference with [`with_fd_reference`].
pub fn l_shape_poisson() -> Result<PdeProblem> {
    PdeProblem::new(
        "l_shape",
        Domain::l_shape(),
        OperatorSpec::Laplace,
        vec![BoundaryCondition::dirichlet(BoundaryLabel::Dirichlet, field(|_| 0.0))],
        field(|x| (-(x[0] + 0.5).powi(2) - (x[1] + 0.5).powi(2)).exp()),
        None,
    )
}

/// Poisson on `[0, 1]²`: `u = 0` on `x₁ ∈ {0, 1}`, `∂u/∂n = sin(5 x₁)` on
/// `x₂ ∈ {0, 1}`, narrow Gaussian source.
pub fn mixed_poisson() -> Result<PdeProblem> {
    let domain = Domain::cube(2, 0.0, 1.0)?
        .with_labels(|axis, _| if axis == 0 { BoundaryLabel::Dirichlet } else { BoundaryLabel::Neumann });
    PdeProblem::new(
        "mixed",
        domain,
        OperatorSpec::Laplace,
        vec![
            BoundaryCondition::dirichlet(BoundaryLabel::Dirichlet, field(|_| 0.0)),
            BoundaryCondition::neumann(BoundaryLabel::Neumann, field(|x| (5.0 * x[0]).sin())),
        ],
        field(|x| 10.0 * (-((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)) / 0.02).exp()),
        None,
    )
}

/// `−∇·(a ∇u) = f` on `[0, 1]^d` with `a = Σ x_i`, `f = −(2d + 2) Σ x_i`,
/// exact `u* = 1 + |x|²` imposed as Dirichlet data.
pub fn semilinear(dim: usize) -> Result<PdeProblem> {
    let exact = field(|x| 1.0 + x.iter().map(|v| v * v).sum::<f64>());
    let k = -(2.0 * dim as f64 + 2.0);
    PdeProblem::new(
        format!("semilinear_d{dim}"),
        Domain::cube(dim, 0.0, 1.0)?,
        OperatorSpec::DivCoeff {
            a: field(|x| x.iter().sum()),
            grad_a: Arc::new(|x: &[f64]| vec![1.0; x.len()]),
        },
        vec![BoundaryCondition::dirichlet(BoundaryLabel::Dirichlet, exact.clone())],
        field(move |x| k * x.iter().sum::<f64>()),
        Some(exact),
    )
}

/// `(1 + u)^m` and its first two derivatives.
pub fn power_conductivity(m: i32) -> OperatorSpec {
    let mf = m as f64;
    OperatorSpec::DivNonlinear {
        q: Arc::new(move |u| (1.0 + u).powi(m)),
        dq: Arc::new(move |u| mf * (1.0 + u).powi(m - 1)),
        d2q: Arc::new(move |u| mf * (mf - 1.0) * (1.0 + u).powi(m - 2)),
    }
}

/// Exact profile `((2^{m+1} − 1) x₁ + 1)^{1/(m+1)} − 1` of the nonlinear problem.
pub fn nonlinear_exact(m: i32, x1: f64) -> f64 {
    let p = (m + 1) as f64;
    ((2f64.powf(p) - 1.0) * x1 + 1.0).powf(1.0 / p) - 1.0
}

/// `−∇·((1 + u)^m ∇u) = 0` on `[0, 1]^d`, `u = 0` at `x₁ = 0`, `u = 1` at
/// `x₁ = 1`, zero flux on the remaining faces.
pub fn nonlinear(dim: usize, m: i32) -> Result<PdeProblem> {
    if m < 0 {
        return Err(Error::Config(format!("exponent m = {m} must be non-negative")));
    }
    let domain = Domain::cube(dim, 0.0, 1.0)?
        .with_labels(|axis, _| if axis == 0 { BoundaryLabel::Dirichlet } else { BoundaryLabel::Neumann });
    let mut bcs = vec![BoundaryCondition::dirichlet(BoundaryLabel::Dirichlet, field(|x| if x[0] > 0.5 { 1.0 } else { 0.0 }))];
    // an interval has no lateral faces
    if dim > 1 {
        bcs.push(BoundaryCondition::neumann(BoundaryLabel::Neumann, field(|_| 0.0)));
    }
    PdeProblem::new(
        format!("nonlinear_d{dim}_m{m}"),
        domain,
        power_conductivity(m),
        bcs,
        field(|_| 0.0),
        Some(field(move |x| nonlinear_exact(m, x[0]))),
    )
}

/// Grid spacing of the finite-difference references attached to the 2D problems.
pub const DEFAULT_REFERENCE_H: f64 = 1.0 / 128.0;

/// Solves the problem by finite differences and uses the bilinear interpolant
/// as its exact solution.
pub fn with_fd_reference(mut problem: PdeProblem, h: f64) -> Result<PdeProblem> {
    if !matches!(problem.operator, OperatorSpec::Laplace) {
        return Err(Error::Unsupported("finite-difference references exist for the Laplacian only".into()));
    }
    let sol = Arc::new(solve_poisson_fd(&problem.domain, &problem.source, &problem.bcs, h)?);
    problem.exact = Some(Arc::new(move |x: &[f64]| sol.eval(x[0], x[1])));
    Ok(problem)
}

/// Problem identifiers accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 5] = ["dirichlet_poisson", "l_shape", "mixed", "semilinear", "nonlinear"];

/// Builds a catalog problem by name. `dim` applies to the high-dimensional
/// problems, `m` to the nonlinear one.
pub fn builtin(name: &str, dim: usize, m: i32) -> Result<PdeProblem> {
    match name {
        "dirichlet_poisson" => dirichlet_poisson(dim),
        "l_shape" => with_fd_reference(l_shape_poisson()?, DEFAULT_REFERENCE_H),
        "mixed" => with_fd_reference(mixed_poisson()?, DEFAULT_REFERENCE_H),
        "semilinear" => semilinear(dim),
        "nonlinear" => nonlinear(dim, m),
        other => Err(Error::Config(format!("unknown problem '{other}' (known: {})", BUILTIN_NAMES.join(", ")))),
    }
}

/// The five experiments with their reference parameters.
pub fn builtin_problems() -> Result<Vec<PdeProblem>> {
    Ok(vec![
        builtin("dirichlet_poisson", 5, 0)?,
        builtin("l_shape", 2, 0)?,
        builtin("mixed", 2, 0)?,
        builtin("semilinear", 5, 0)?,
        builtin("nonlinear", 5, 2)?,
    ])
}
