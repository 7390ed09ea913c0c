//! Domains, Monte Carlo samplers and exact measures.
//!
//! Every boundary is a union of axis-aligned flat faces, each carrying an
//! outward normal and a segment label. Interior samples are uniform on `Ω`;
//! boundary samples pick a face with probability proportional to its measure
//! and then a uniform point on it.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Interior,
    Boundary,
    Test,
    InitU,
    InitV,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Interior => 1,
            Stream::Boundary => 2,
            Stream::Test => 3,
            Stream::InitU => 4,
            Stream::InitV => 5,
        }
    }
}

// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(stream.tag())))
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryLabel {
    Dirichlet,
    Neumann,
}

impl BoundaryLabel {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryLabel::Dirichlet => "dirichlet",
            BoundaryLabel::Neumann => "neumann",
        }
    }
}

/// A flat face `{x : x[axis] = offset, lo ≤ x ≤ hi}` with outward normal
/// `sign · e_axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub axis: usize,
    pub offset: f64,
    pub outward: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub label: BoundaryLabel,
}

impl Face {
    fn new(axis: usize, offset: f64, outward: f64, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let mut lo = lo;
        let mut hi = hi;
        lo[axis] = offset;
        hi[axis] = offset;
        Self { axis, offset, outward, lo, hi, label: BoundaryLabel::Dirichlet }
    }

    pub fn measure(&self) -> f64 {
        (0..self.lo.len()).filter(|&k| k != self.axis).map(|k| self.hi[k] - self.lo[k]).product()
    }

    pub fn normal(&self) -> Vec<f64> {
        let mut n = vec![0.0; self.lo.len()];
        n[self.axis] = self.outward;
        n
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        (x[self.axis] - self.offset).abs() <= tol
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(&v, (&l, &h))| v >= l - tol && v <= h + tol)
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.lo.len())
            .map(|k| if k == self.axis { self.offset } else { rng.random_range(self.lo[k]..self.hi[k]) })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainKind {
    Hypercube { lo: Vec<f64>, hi: Vec<f64> },
    /// `[−1, 1]² ∖ (0, 1]²`.
    LShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySample {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
    pub label: BoundaryLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    kind: DomainKind,
    faces: Vec<Face>,
}

const ON_BOUNDARY_TOL: f64 = 1e-12;

impl Domain {
    pub fn hypercube(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return dim_err(format!("box bounds of lengths {} and {}", lo.len(), hi.len()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::Config(format!("degenerate box {lo:?} .. {hi:?}")));
        }
        let d = lo.len();
        let mut faces = Vec::with_capacity(2 * d);
        for axis in 0..d {
            faces.push(Face::new(axis, lo[axis], -1.0, lo.clone(), hi.clone()));
            faces.push(Face::new(axis, hi[axis], 1.0, lo.clone(), hi.clone()));
        }
        Ok(Self { kind: DomainKind::Hypercube { lo, hi }, faces })
    }

    /// `[a, b]^d`.
    pub fn cube(dim: usize, a: f64, b: f64) -> Result<Self> {
        Self::hypercube(vec![a; dim], vec![b; dim])
    }

    pub fn l_shape() -> Self {
        let f = |axis, offset, outward, lo: [f64; 2], hi: [f64; 2]| Face::new(axis, offset, outward, lo.to_vec(), hi.to_vec());
        let faces = vec![
            f(1, -1.0, -1.0, [-1.0, -1.0], [1.0, -1.0]),
            f(0, 1.0, 1.0, [1.0, -1.0], [1.0, 0.0]),
            f(1, 0.0, 1.0, [0.0, 0.0], [1.0, 0.0]),
            f(0, 0.0, 1.0, [0.0, 0.0], [0.0, 1.0]),
            f(1, 1.0, 1.0, [-1.0, 1.0], [0.0, 1.0]),
            f(0, -1.0, -1.0, [-1.0, -1.0], [-1.0, 1.0]),
        ];
        Self { kind: DomainKind::LShape, faces }
    }

    /// Relabels every face; `rule(axis, outward)` picks the label.
    pub fn with_labels(mut self, rule: impl Fn(usize, f64) -> BoundaryLabel) -> Self {
        for face in &mut self.faces {
            face.label = rule(face.axis, face.outward);
        }
        self
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            DomainKind::Hypercube { lo, .. } => lo.len(),
            DomainKind::LShape => 2,
        }
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Axis-aligned bounding box.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            DomainKind::Hypercube { lo, hi } => (lo.clone(), hi.clone()),
            DomainKind::LShape => (vec![-1.0, -1.0], vec![1.0, 1.0]),
        }
    }

    /// Closed-domain membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let (lo, hi) = self.bounds();
        let in_box = x.iter().zip(lo.iter().zip(&hi)).all(|(&v, (&l, &h))| v >= l && v <= h);
        match self.kind {
            DomainKind::Hypercube { .. } => in_box,
            DomainKind::LShape => in_box && !(x[0] > 0.0 && x[1] > 0.0),
        }
    }

    pub fn volume(&self) -> f64 {
        match &self.kind {
            DomainKind::Hypercube { lo, hi } => lo.iter().zip(hi).map(|(l, h)| h - l).product(),
            DomainKind::LShape => 3.0,
        }
    }

    pub fn boundary_measure(&self) -> f64 {
        self.faces.iter().map(Face::measure).sum()
    }

    /// `(|Ω|, |∂Ω|)`.
    pub fn measures(&self) -> (f64, f64) {
        (self.volume(), self.boundary_measure())
    }

    pub fn segment_measure(&self, label: BoundaryLabel) -> f64 {
        self.faces.iter().filter(|f| f.label == label).map(Face::measure).sum()
    }

    /// Labels present on the boundary, in first-appearance order.
    pub fn labels(&self) -> Vec<BoundaryLabel> {
        let mut out: Vec<BoundaryLabel> = Vec::new();
        for f in &self.faces {
            if !out.contains(&f.label) {
                out.push(f.label);
            }
        }
        out
    }

    /// `n` i.i.d. uniform points in `Ω`, one per row.
    pub fn sample_interior(&self, n: usize, rng: &mut impl Rng) -> Result<Array2<f64>> {
        if n == 0 {
            return Err(Error::Count("interior sample count must be positive".into()));
        }
        let d = self.dim();
        let (lo, hi) = self.bounds();
        let mut out = Array2::zeros((n, d));
        let mut row = vec![0.0; d];
        for mut dst in out.rows_mut() {
            loop {
                for k in 0..d {
                    row[k] = rng.random_range(lo[k]..hi[k]);
                }
                if self.kind != DomainKind::LShape || !(row[0] > 0.0 && row[1] > 0.0) {
                    break;
                }
            }
            dst.iter_mut().zip(&row).for_each(|(a, &b)| *a = b);
        }
        Ok(out)
    }

    /// `n` boundary points with outward normals and segment labels.
    ///
    /// A point that also lies on a Dirichlet face (a corner) is reported as
    /// Dirichlet with that face's normal.
    pub fn sample_boundary(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<BoundarySample>> {
        if n == 0 {
            return Err(Error::Count("boundary sample count must be positive".into()));
        }
        let total = self.boundary_measure();
        let cumulative: Vec<f64> = self
            .faces
            .iter()
            .scan(0.0, |acc, f| {
                *acc += f.measure();
                Some(*acc)
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let r = rng.random_range(0.0..total);
            let idx = cumulative.iter().position(|&c| r < c).unwrap_or(self.faces.len() - 1);
            let point = self.faces[idx].sample(rng);
            out.push(self.boundary_sample_at(idx, point));
        }
        Ok(out)
    }

    /// Labels a point drawn on face `face`; corners shared with a Dirichlet
    /// face become Dirichlet.
    pub fn boundary_sample_at(&self, face: usize, point: Vec<f64>) -> BoundarySample {
        let own = &self.faces[face];
        let chosen = if own.label == BoundaryLabel::Dirichlet {
            own
        } else {
            self.faces
                .iter()
                .find(|f| f.label == BoundaryLabel::Dirichlet && f.contains(&point, ON_BOUNDARY_TOL))
                .unwrap_or(own)
        };
        BoundarySample { normal: chosen.normal(), label: chosen.label, point }
    }

    /// Plain Monte Carlo estimate `|Ω| · mean f` over `n` uniform points.
    pub fn mc_integrate(&self, f: impl Fn(&[f64]) -> f64, n: usize, rng: &mut impl Rng) -> Result<f64> {
        let pts = self.sample_interior(n, rng)?;
        let sum: f64 = pts.rows().into_iter().map(|x| f(x.to_slice().unwrap())).sum();
        Ok(self.volume() * sum / n as f64)
    }

    pub fn on_boundary(&self, x: &[f64], tol: f64) -> bool {
        self.faces.iter().any(|f| f.contains(x, tol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn cube_measures() {
        let (v, s) = Domain::cube(5, -1.0, 1.0).unwrap().measures();
        assert_relative_eq!(v, 32.0);
        assert_relative_eq!(s, 160.0); // 2·5·2⁴
        assert_eq!(Domain::cube(2, 0.0, 1.0).unwrap().measures(), (1.0, 4.0));
    }

    #[test]
    fn integral_of_one_is_the_volume() {
        for dom in [Domain::cube(4, -1.0, 1.0).unwrap(), Domain::l_shape()] {
            assert_eq!(dom.mc_integrate(|_| 1.0, 37, &mut rng(2)).unwrap(), dom.volume());
        }
        assert!(Domain::l_shape().mc_integrate(|_| 1.0, 0, &mut rng(2)).is_err());
    }

    #[test]
    fn l_shape_measures() {
        let dom = Domain::l_shape();
        assert_eq!(dom.measures(), (3.0, 8.0));
    }

    #[test]
    fn zero_counts_are_errors() {
        let dom = Domain::cube(2, 0.0, 1.0).unwrap();
        assert!(matches!(dom.sample_interior(0, &mut rng(0)), Err(Error::Count(_))));
        assert!(matches!(dom.sample_boundary(0, &mut rng(0)), Err(Error::Count(_))));
    }

    #[test]
    fn interior_mean_is_centered() {
        let n = 10_000;
        let pts = Domain::cube(3, -1.0, 1.0).unwrap().sample_interior(n, &mut rng(11)).unwrap();
        let bound = 3.0 * (2.0 / 12f64.sqrt()) / (n as f64).sqrt();
        for col in pts.columns() {
            assert!(col.mean().unwrap().abs() <= bound);
        }
    }

    #[test]
    fn l_shape_rejects_the_missing_quadrant() {
        let dom = Domain::l_shape();
        let pts = dom.sample_interior(20_000, &mut rng(3)).unwrap();
        for p in pts.rows() {
            assert!(!(p[0] > 0.0 && p[1] > 0.0));
            assert!(dom.contains(p.as_slice().unwrap()));
        }
    }

    #[test]
    fn constant_integrand_is_exact() {
        let dom = Domain::l_shape();
        let n = 137;
        let pts = dom.sample_interior(n, &mut rng(5)).unwrap();
        let est = dom.volume() * pts.rows().into_iter().map(|_| 1.0).sum::<f64>() / n as f64;
        assert_eq!(est, 3.0);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let dom = Domain::cube(3, -1.0, 1.0).unwrap();
        let a = dom.sample_interior(50, &mut stream_rng(9, Stream::Interior)).unwrap();
        let b = dom.sample_interior(50, &mut stream_rng(9, Stream::Interior)).unwrap();
        assert_eq!(a, b);
        let c = dom.sample_interior(50, &mut stream_rng(9, Stream::Test)).unwrap();
        assert_ne!(a, c);
        assert_eq!(
            dom.sample_boundary(20, &mut stream_rng(1, Stream::Boundary)).unwrap(),
            dom.sample_boundary(20, &mut stream_rng(1, Stream::Boundary)).unwrap()
        );
    }

    #[test]
    fn boundary_faces_receive_proportional_counts() {
        let dom = Domain::cube(2, 0.0, 1.0).unwrap();
        let n = 8000;
        let samples = dom.sample_boundary(n, &mut rng(21)).unwrap();
        let mut counts = [0usize; 4];
        for s in &samples {
            let idx = dom.faces().iter().position(|f| f.contains(&s.point, 1e-12)).unwrap();
            counts[idx] += 1;
        }
        let expected = n as f64 / 4.0;
        let tol = 3.0 * (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() <= tol, "{counts:?}");
        }
    }

    #[test]
    fn boundary_points_lie_on_the_boundary_with_unit_outward_normals() {
        for dom in [Domain::l_shape(), Domain::cube(4, -1.0, 1.0).unwrap()] {
            for s in dom.sample_boundary(2000, &mut rng(8)).unwrap() {
                assert!(dom.on_boundary(&s.point, 1e-12));
                assert!(dom.contains(&s.point));
                let norm: f64 = s.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert_relative_eq!(norm, 1.0);
                let eps = 1e-6;
                let out: Vec<f64> = s.point.iter().zip(&s.normal).map(|(x, n)| x + eps * n).collect();
                assert!(!dom.contains(&out), "{:?} + ε{:?} stays inside", s.point, s.normal);
            }
        }
    }

    #[test]
    fn normal_on_positive_first_face() {
        let dom = Domain::cube(3, -1.0, 1.0).unwrap();
        let face = dom.faces().iter().find(|f| f.axis == 0 && f.outward > 0.0).unwrap();
        assert_eq!(face.normal(), vec![1.0, 0.0, 0.0]);
        assert_eq!(face.offset, 1.0);
    }

    #[test]
    fn mixed_partition_measures() {
        let dom = Domain::cube(2, 0.0, 1.0)
            .unwrap()
            .with_labels(|axis, _| if axis == 0 { BoundaryLabel::Dirichlet } else { BoundaryLabel::Neumann });
        assert_eq!(dom.segment_measure(BoundaryLabel::Dirichlet), 2.0);
        assert_eq!(dom.segment_measure(BoundaryLabel::Neumann), 2.0);
        assert_eq!(
            dom.segment_measure(BoundaryLabel::Dirichlet) + dom.segment_measure(BoundaryLabel::Neumann),
            dom.boundary_measure()
        );
        for s in dom.sample_boundary(3000, &mut rng(2)).unwrap() {
            match s.label {
                BoundaryLabel::Dirichlet => assert!(s.point[0] == 0.0 || s.point[0] == 1.0),
                BoundaryLabel::Neumann => assert!(s.point[1] == 0.0 || s.point[1] == 1.0),
            }
        }
    }

    #[test]
    fn corner_points_resolve_to_dirichlet() {
        let dom = Domain::cube(2, 0.0, 1.0)
            .unwrap()
            .with_labels(|axis, _| if axis == 0 { BoundaryLabel::Dirichlet } else { BoundaryLabel::Neumann });
        let bottom = dom.faces().iter().position(|f| f.axis == 1 && f.outward < 0.0).unwrap();
        let s = dom.boundary_sample_at(bottom, vec![0.0, 0.0]);
        assert_eq!(s.label, BoundaryLabel::Dirichlet);
        assert_eq!(s.normal, vec![-1.0, 0.0]);
        let s = dom.boundary_sample_at(bottom, vec![0.5, 0.0]);
        assert_eq!(s.label, BoundaryLabel::Neumann);
        assert_eq!(s.normal, vec![0.0, -1.0]);
    }

    #[test]
    fn invalid_boxes() {
        assert!(Domain::hypercube(vec![], vec![]).is_err());
        assert!(Domain::hypercube(vec![0.0], vec![0.0]).is_err());
        assert!(Domain::hypercube(vec![0.0, 0.0], vec![1.0]).is_err());
    }
}
