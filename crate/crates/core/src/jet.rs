//! Second-order jets of a scalar field: value, input gradient and input Laplacian.
//!
//! A [`Jet`] describes a scalar quantity `q(x)` at one point through
//! `(q, ∇q, Δq)`. Affine maps act linearly on all three channels; a smooth
//! scalar nonlinearity `φ` acts through the chain rule
//!
//! ```text
//! ∇φ(q) = φ'(q) ∇q
//! Δφ(q) = φ''(q) |∇q|² + φ'(q) Δq
//! ```
//!
//! which is all an isotropic second-order operator needs. This module holds
//! the single-point reference path; [`crate::tape`] runs the same algebra on
//! whole sample batches.

use ndarray::{Array1, Array2};

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Jet<T> {
    pub value: T,
    pub grad: Vec<T>,
    pub lap: T,
}

impl<T: Scalar> Jet<T> {
    pub fn new(value: T, grad: Vec<T>, lap: T) -> Self {
        Self { value, grad, lap }
    }

    /// A quantity that does not depend on the input point.
    pub fn constant(value: T, dim: usize) -> Self {
        Self { value, grad: vec![T::zero(); dim], lap: T::zero() }
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.lap.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }

    pub fn grad_norm_sq(&self) -> T {
        self.grad.iter().map(|&g| g * g).sum()
    }

    /// Directional derivative `∇q · n`.
    pub fn directional(&self, direction: &[T]) -> T {
        self.grad.iter().zip(direction).map(|(&g, &n)| g * n).sum()
    }

    /// `a * self + other`, channel by channel.
    pub fn scaled_add(&self, a: T, other: &Jet<T>) -> Result<Jet<T>> {
        if self.dim() != other.dim() {
            return dim_err(format!("jet dimensions {} and {}", self.dim(), other.dim()));
        }
        Ok(Jet {
            value: a * self.value + other.value,
            grad: self.grad.iter().zip(&other.grad).map(|(&x, &y)| a * x + y).collect(),
            lap: a * self.lap + other.lap,
        })
    }
}

/// The jets of every neuron of one layer at a single sample point.
#[derive(Debug, Clone, PartialEq)]
pub struct JetBatch<T> {
    dim: usize,
    jets: Vec<Jet<T>>,
}

impl<T: Scalar> JetBatch<T> {
    pub fn new(dim: usize, jets: Vec<Jet<T>>) -> Result<Self> {
        if let Some(j) = jets.iter().find(|j| j.dim() != dim) {
            return dim_err(format!("jet of dimension {} in a batch of dimension {dim}", j.dim()));
        }
        Ok(Self { dim, jets })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.jets.len()
    }

    pub fn jets(&self) -> &[Jet<T>] {
        &self.jets
    }

    pub fn into_jets(self) -> Vec<Jet<T>> {
        self.jets
    }
}

/// Lifts a point `x ∈ R^d` into `d` coordinate jets `(x_i, e_i, 0)`.
pub fn seed_input<T: Scalar>(x: &[T]) -> Result<JetBatch<T>> {
    let d = x.len();
    if d == 0 {
        return Err(Error::Dimension("cannot seed a jet from an empty point".into()));
    }
    let jets = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mut grad = vec![T::zero(); d];
            grad[i] = T::one();
            Jet::new(xi, grad, T::zero())
        })
        .collect();
    Ok(JetBatch { dim: d, jets })
}

/// `out = W·in + b` on all three channels; the bias only enters the value.
pub fn affine_jet<T: Scalar>(
    weight: &Array2<T>,
    bias: &Array1<T>,
    input: &JetBatch<T>,
) -> Result<JetBatch<T>> {
    let (rows, cols) = weight.dim();
    if cols != input.width() || rows != bias.len() {
        return dim_err(format!(
            "affine map {rows}x{cols} with bias {} applied to {} jets",
            bias.len(),
            input.width()
        ));
    }
    let d = input.dim;
    let jets = (0..rows)
        .map(|i| {
            let mut out = Jet::constant(bias[i], d);
            for (j, jet) in input.jets.iter().enumerate() {
                let w = weight[[i, j]];
                out.value += w * jet.value;
                for (o, &g) in out.grad.iter_mut().zip(&jet.grad) {
                    *o += w * g;
                }
                out.lap += w * jet.lap;
            }
            out
        })
        .collect();
    Ok(JetBatch { dim: d, jets })
}

/// `tanh` through one `exp`, about 2.5x cheaper than the libm routine.
/// Absolute error stays below 4e-16 in double precision; relative accuracy
/// degrades only for `|z|` near the rounding level of its inputs. Odd by
/// construction.
#[inline]
pub fn tanh<T: Scalar>(z: T) -> T {
    let two = T::one() + T::one();
    let a = z.abs();
    (T::one() - two / ((a + a).exp() + T::one())).copysign(z)
}

/// `tanh` and its first two derivatives at `z`.
#[inline]
pub fn tanh_derivatives<T: Scalar>(z: T) -> (T, T, T) {
    let s = tanh(z);
    let s1 = T::one() - s * s;
    let s2 = -(s + s) * s1;
    (s, s1, s2)
}

pub fn tanh_jet<T: Scalar>(input: &Jet<T>) -> Jet<T> {
    let (s, s1, s2) = tanh_derivatives(input.value);
    Jet {
        value: s,
        grad: input.grad.iter().map(|&g| s1 * g).collect(),
        lap: s2 * input.grad_norm_sq() + s1 * input.lap,
    }
}

pub fn tanh_batch<T: Scalar>(input: &JetBatch<T>) -> JetBatch<T> {
    JetBatch { dim: input.dim, jets: input.jets.iter().map(tanh_jet).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn seed_one_dimensional() {
        let b = seed_input(&[0.5f64]).unwrap();
        assert_eq!(b.jets(), &[Jet::new(0.5, vec![1.0], 0.0)]);
    }

    #[test]
    fn seed_two_dimensional() {
        let b = seed_input(&[1.0f64, 2.0]).unwrap();
        assert_eq!(b.jets()[0], Jet::new(1.0, vec![1.0, 0.0], 0.0));
        assert_eq!(b.jets()[1], Jet::new(2.0, vec![0.0, 1.0], 0.0));
    }

    #[test]
    fn seed_empty_is_error() {
        assert!(matches!(seed_input::<f64>(&[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn affine_identity() {
        let input = seed_input(&[0.3f64, -1.2]).unwrap();
        let out = affine_jet(&Array2::eye(2), &Array1::zeros(2), &input).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn affine_scalar() {
        let input = JetBatch::new(1, vec![Jet::new(3.0f64, vec![1.0], 0.0)]).unwrap();
        let out = affine_jet(&array![[2.0]], &array![1.0], &input).unwrap();
        assert_eq!(out.jets()[0], Jet::new(7.0, vec![2.0], 0.0));
    }

    #[test]
    fn affine_sum_of_coordinates() {
        let input = seed_input(&[0.7f64, 0.2]).unwrap();
        let out = affine_jet(&array![[1.0, 1.0]], &array![0.0], &input).unwrap();
        assert_eq!(out.jets()[0], Jet::new(0.7 + 0.2, vec![1.0, 1.0], 0.0));
    }

    #[test]
    fn affine_shape_mismatch() {
        let input = seed_input(&[0.7f64, 0.2]).unwrap();
        assert!(affine_jet(&Array2::eye(3), &Array1::zeros(3), &input).is_err());
        assert!(affine_jet(&Array2::eye(2), &Array1::zeros(3), &input).is_err());
    }

    #[test]
    fn tanh_at_origin() {
        let out = tanh_jet(&Jet::new(0.0f64, vec![1.0, 0.0], 0.0));
        assert_eq!(out, Jet::new(0.0, vec![1.0, 0.0], 0.0));
    }

    #[test]
    fn tanh_closed_form_at_one() {
        // s = tanh 1, s' = 1 - s², s'' = -2 s s'; lap = 4 s'' + 3 s'
        let out = tanh_jet(&Jet::new(1.0f64, vec![2.0, 0.0], 3.0));
        assert_relative_eq!(out.value, 0.7615941559557649, max_relative = 1e-15);
        assert_relative_eq!(out.grad[0], 0.8399486832280523, max_relative = 1e-15);
        assert_eq!(out.grad[1], 0.0);
        assert_relative_eq!(out.lap, -1.29887700895482, max_relative = 1e-14);
    }

    #[test]
    fn tanh_derivative_values() {
        let (_, s1, s2) = tanh_derivatives(1.0f64);
        assert_relative_eq!(s1, 0.41997434161402614, max_relative = 1e-15);
        assert_relative_eq!(s2, -0.6397000084492246, max_relative = 1e-15);
    }

    #[test]
    fn tanh_works_in_single_precision() {
        let out = tanh_jet(&Jet::new(1.0f32, vec![2.0, 0.0], 3.0));
        assert!((out.lap + 1.298877).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn tanh_is_odd(z in -5.0f64..5.0) {
            let a = tanh_jet(&Jet::constant(z, 3));
            let b = tanh_jet(&Jet::constant(-z, 3));
            prop_assert_eq!(a.value, -b.value);
        }

        #[test]
        fn tanh_stays_finite(z in -1e3f64..1e3, g in -1e2f64..1e2, l in -1e2f64..1e2) {
            prop_assert!(tanh_jet(&Jet::new(z, vec![g, -g], l)).is_finite());
        }

        #[test]
        fn affine_is_linear(
            w in proptest::collection::vec(-2.0f64..2.0, 6),
            b in proptest::collection::vec(-2.0f64..2.0, 3),
            v1 in proptest::collection::vec(-3.0f64..3.0, 2 * 4),
            v2 in proptest::collection::vec(-3.0f64..3.0, 2 * 4),
            a in -3.0f64..3.0,
        ) {
            let w = Array2::from_shape_vec((3, 2), w).unwrap();
            let b = Array1::from(b);
            let mk = |v: &[f64]| {
                JetBatch::new(2, v.chunks(4).map(|c| Jet::new(c[0], vec![c[1], c[2]], c[3])).collect()).unwrap()
            };
            let (j1, j2) = (mk(&v1), mk(&v2));
            let combo = JetBatch::new(
                2,
                j1.jets().iter().zip(j2.jets()).map(|(x, y)| x.scaled_add(a, y).unwrap()).collect(),
            ).unwrap();
            let lhs = affine_jet(&w, &b, &combo).unwrap();
            let r1 = affine_jet(&w, &Array1::zeros(3), &j1).unwrap();
            let r2 = affine_jet(&w, &b, &j2).unwrap();
            for ((l, x), y) in lhs.jets().iter().zip(r1.jets()).zip(r2.jets()) {
                let rhs = x.scaled_add(a, y).unwrap();
                let close = |p: f64, q: f64| (p - q).abs() <= 1e-12 * (1.0 + p.abs().max(q.abs()));
                prop_assert!(close(l.value, rhs.value));
                prop_assert!(close(l.lap, rhs.lap));
                for (p, q) in l.grad.iter().zip(&rhs.grad) {
                    prop_assert!(close(*p, *q));
                }
            }
        }
    }
}
