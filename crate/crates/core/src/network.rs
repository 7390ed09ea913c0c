//! Fully connected tanh networks `u(x) = h_m ∘ tanh ∘ … ∘ tanh ∘ h_1(x)`.
//!
//! The last affine layer is linear so the output is not confined to `[-1, 1]`.
//! Parameters flatten layer by layer, each layer contributing its weight
//! matrix in row-major order followed by its bias vector.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::jet::{affine_jet, seed_input, tanh_batch, Jet};
use crate::scalar::Scalar;
use crate::tape::{forward_matrix, JetMatrix, Order};

const CHECKPOINT_MAGIC: &str = "mlp-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet<T> {
    sizes: Vec<usize>,
    weights: Vec<Array2<T>>,
    biases: Vec<Array1<T>>,
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 3 {
        return dim_err(format!("layer sizes {sizes:?}: need input, at least one hidden layer, output"));
    }
    if sizes.iter().any(|&n| n == 0) {
        return dim_err(format!("layer sizes {sizes:?} contain an empty layer"));
    }
    if *sizes.last().unwrap() != 1 {
        return dim_err(format!("layer sizes {sizes:?}: output layer must have one neuron"));
    }
    Ok(())
}

/// Layer sizes `[d, width, …, width, 1]` with `depth` hidden layers.
pub fn architecture(dim: usize, width: usize, depth: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(depth + 2);
    sizes.push(dim);
    sizes.extend(std::iter::repeat(width).take(depth));
    sizes.push(1);
    sizes
}

/// Parameter initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Glorot-uniform weights, zero biases.
    Xavier,
    /// Weights and biases uniform in `±1/√fan_in`.
    FanIn,
}

impl Init {
    pub fn name(self) -> &'static str {
        match self {
            Init::Xavier => "xavier",
            Init::FanIn => "fan_in",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "xavier" => Ok(Init::Xavier),
            "fan_in" => Ok(Init::FanIn),
            other => Err(Error::Config(format!("unknown initialization '{other}' (known: xavier, fan_in)"))),
        }
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Scalar> MlpNet<T> {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        validate_sizes(sizes)?;
        let weights = sizes.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect();
        let biases = sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self { sizes: sizes.to_vec(), weights, biases })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_xavier(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut net.weights {
            let (fan_out, fan_in) = w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| T::of(rng.random_range(-limit..limit)));
        }
        Ok(net)
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init_fan_in(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (w, b) in net.weights.iter_mut().zip(&mut net.biases) {
            let limit = 1.0 / (w.ncols() as f64).sqrt();
            w.mapv_inplace(|_| T::of(rng.random_range(-limit..limit)));
            b.mapv_inplace(|_| T::of(rng.random_range(-limit..limit)));
        }
        Ok(net)
    }

    pub fn init(sizes: &[usize], scheme: Init, seed: u64) -> Result<Self> {
        match scheme {
            Init::Xavier => Self::init_xavier(sizes, seed),
            Init::FanIn => Self::init_fan_in(sizes, seed),
        }
    }

    pub fn from_params(sizes: &[usize], params: &[T]) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        net.set_params(params)?;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    /// Number of affine layers `m`.
    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, layer: usize) -> &Array2<T> {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &Array1<T> {
        &self.biases[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<T> {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Array1<T> {
        &mut self.biases[layer]
    }

    pub fn num_params(&self) -> usize {
        param_count(&self.sizes)
    }

    /// Offset of each layer's weight block inside the flat parameter vector.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers());
        let mut at = 0;
        for w in self.sizes.windows(2) {
            offsets.push(at);
            at += w[0] * w[1] + w[1];
        }
        offsets
    }

    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_params(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.num_params() {
            return dim_err(format!(
                "{} parameters supplied to a network with {}",
                params.len(),
                self.num_params()
            ));
        }
        let mut rest = params;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let (head, tail) = rest.split_at(w.len());
            w.iter_mut().zip(head).for_each(|(dst, &src)| *dst = src);
            let (head, tail) = tail.split_at(b.len());
            b.iter_mut().zip(head).for_each(|(dst, &src)| *dst = src);
            rest = tail;
        }
        Ok(())
    }

    /// `params += step`, elementwise in flat order.
    pub fn add_to_params(&mut self, step: &[T]) -> Result<()> {
        if step.len() != self.num_params() {
            return dim_err(format!("step of length {} for {} parameters", step.len(), self.num_params()));
        }
        let mut rest = step;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let (head, tail) = rest.split_at(w.len());
            w.iter_mut().zip(head).for_each(|(dst, &s)| *dst += s);
            let (head, tail) = tail.split_at(b.len());
            b.iter_mut().zip(head).for_each(|(dst, &s)| *dst += s);
            rest = tail;
        }
        Ok(())
    }

    fn check_point(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return dim_err(format!("point of length {} for a network on R^{}", x.len(), self.input_dim()));
        }
        Ok(())
    }

    /// Plain forward pass at one point.
    pub fn eval(&self, x: &[T]) -> Result<T> {
        self.check_point(x)?;
        let mut z: Vec<T> = x.to_vec();
        let last = self.layers() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next: Vec<T> = b.to_vec();
            for (i, out) in next.iter_mut().enumerate() {
                *out += w.row(i).iter().zip(&z).map(|(&wij, &zj)| wij * zj).sum::<T>();
            }
            if k != last {
                next.iter_mut().for_each(|v| *v = crate::jet::tanh(*v));
            }
            z = next;
        }
        Ok(z[0])
    }

    /// Value, input gradient and input Laplacian of the output at `x`.
    pub fn eval_jet(&self, x: &[T]) -> Result<Jet<T>> {
        self.check_point(x)?;
        let mut batch = seed_input(x)?;
        let last = self.layers() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            batch = affine_jet(w, b, &batch)?;
            if k != last {
                batch = tanh_batch(&batch);
            }
        }
        Ok(batch.into_jets().remove(0))
    }

    /// Output values at every row of `points` (shape `n × d`).
    pub fn eval_many(&self, points: ArrayView2<T>) -> Result<Vec<T>> {
        let out = forward_matrix(self, points, Order::Value)?;
        Ok(out.values().to_vec())
    }

    /// Output jets at every row of `points`, batched.
    pub fn eval_jets(&self, points: ArrayView2<T>) -> Result<JetMatrix<T>> {
        forward_matrix(self, points, Order::Laplacian)
    }

    /// Text checkpoint: a header line, the layer sizes, then one parameter per
    /// line with 17 significant digits (exact for `f64`).
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        let sizes: Vec<String> = self.sizes.iter().map(|n| n.to_string()).collect();
        writeln!(out, "{}", sizes.join(" "))?;
        for p in self.params() {
            writeln!(out, "{:.16e}", p.as_f64())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let mut next_line = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, line)) => Ok((i + 1, line?)),
                None => Err(Error::Parse(format!("checkpoint truncated: missing {what}"))),
            }
        };
        let (_, magic) = next_line("header")?;
        if magic.trim() != CHECKPOINT_MAGIC {
            return Err(Error::Parse(format!("line 1: expected '{CHECKPOINT_MAGIC}'")));
        }
        let (lineno, sizes_line) = next_line("layer sizes")?;
        let sizes = sizes_line
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("line {lineno}: {e}")))?;
        validate_sizes(&sizes)?;
        let n = param_count(&sizes);
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let (lineno, line) = next_line("parameters")?;
            let v: f64 = line.trim().parse().map_err(|e| Error::Parse(format!("line {lineno}: {e}")))?;
            params.push(T::of(v));
        }
        Self::from_params(&sizes, &params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn xavier_is_deterministic() {
        let a = MlpNet::<f64>::init_xavier(&[3, 40, 40, 1], 7).unwrap();
        let b = MlpNet::<f64>::init_xavier(&[3, 40, 40, 1], 7).unwrap();
        assert_eq!(a.params(), b.params());
        let c = MlpNet::<f64>::init_xavier(&[3, 40, 40, 1], 8).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn xavier_bounds_and_zero_biases() {
        let net = MlpNet::<f64>::init_xavier(&[3, 40, 1], 1).unwrap();
        let lim0 = (6.0f64 / 43.0).sqrt();
        assert!(net.weight(0).iter().all(|w| w.abs() <= lim0));
        assert!(net.bias(0).iter().all(|&b| b == 0.0));
        assert!(net.bias(1).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn fan_in_bounds_cover_biases() {
        let net = MlpNet::<f64>::init(&[3, 40, 1], Init::FanIn, 1).unwrap();
        let lim1 = 1.0 / 40f64.sqrt();
        assert!(net.weight(0).iter().all(|w| w.abs() <= 1.0 / 3f64.sqrt()));
        assert!(net.bias(1).iter().all(|b| b.abs() <= lim1));
        assert!(net.bias(0).iter().any(|&b| b != 0.0));
        assert_eq!(Init::parse(Init::FanIn.name()).unwrap(), Init::FanIn);
        assert!(Init::parse("he").is_err());
    }

    #[test]
    fn parameter_count_of_two_hidden_layers() {
        // 3·40+40 + 40·40+40 + 40·1+1
        assert_eq!(param_count(&[3, 40, 40, 1]), 1841);
        assert_eq!(MlpNet::<f64>::zeros(&[3, 40, 40, 1]).unwrap().num_params(), 1841);
    }

    #[test]
    fn rejects_degenerate_architectures() {
        assert!(MlpNet::<f64>::init_xavier(&[5, 1], 0).is_err());
        assert!(MlpNet::<f64>::zeros(&[5, 10, 2]).is_err());
        assert!(MlpNet::<f64>::zeros(&[5, 0, 1]).is_err());
    }

    #[test]
    fn architectures_from_experiments_construct() {
        for (d, w, depth) in [(5, 100, 4), (2, 40, 4), (5, 60, 4)] {
            assert!(MlpNet::<f64>::init_xavier(&architecture(d, w, depth), 0).is_ok());
        }
        for w in [10, 20, 40] {
            for depth in 1..=3 {
                let sizes = architecture(3, w, depth);
                assert_eq!(sizes.len(), depth + 2);
                assert!(MlpNet::<f64>::init_xavier(&sizes, 0).is_ok());
            }
        }
    }

    #[test]
    fn zero_network_is_zero() {
        let net = MlpNet::<f64>::zeros(&[3, 5, 5, 1]).unwrap();
        assert_eq!(net.eval(&[0.3, -0.2, 0.9]).unwrap(), 0.0);
        let jet = net.eval_jet(&[0.3, -0.2, 0.9]).unwrap();
        assert_eq!(jet, Jet::constant(0.0, 3));
    }

    #[test]
    fn single_neuron_tanh() {
        let mut net = MlpNet::<f64>::zeros(&[1, 1, 1]).unwrap();
        net.weight_mut(0)[[0, 0]] = 1.0;
        net.weight_mut(1)[[0, 0]] = 1.0;
        assert_relative_eq!(net.eval(&[0.5]).unwrap(), 0.46211715726000974, max_relative = 1e-15);
    }

    #[test]
    fn wrong_point_dimension() {
        let net = MlpNet::<f64>::zeros(&[3, 5, 1]).unwrap();
        assert!(net.eval(&[0.0, 1.0]).is_err());
        assert!(net.eval_jet(&[0.0]).is_err());
        assert!(net.eval_many(Array2::zeros((4, 2)).view()).is_err());
    }

    #[test]
    fn manufactured_tanh_of_coordinate_sum() {
        // u(x) = tanh(Σ x_i): grad = s'·1, lap = s''·d
        let d = 4;
        let mut net = MlpNet::<f64>::zeros(&[d, 1, 1]).unwrap();
        net.weight_mut(0).fill(1.0);
        net.weight_mut(1)[[0, 0]] = 1.0;
        let x = [0.1, -0.4, 0.25, 0.3];
        let sum: f64 = x.iter().sum();
        let (s, s1, s2) = crate::jet::tanh_derivatives(sum);
        let jet = net.eval_jet(&x).unwrap();
        assert_relative_eq!(jet.value, s, max_relative = 1e-15);
        for g in &jet.grad {
            assert_relative_eq!(*g, s1, max_relative = 1e-15);
        }
        assert_relative_eq!(jet.lap, s2 * d as f64, max_relative = 1e-14);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = MlpNet::<f64>::init_xavier(&[2, 7, 3, 1], 99).unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        let back = MlpNet::<f64>::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(net, back);
        let bits: Vec<u64> = net.params().iter().map(|p| p.to_bits()).collect();
        let back_bits: Vec<u64> = back.params().iter().map(|p| p.to_bits()).collect();
        assert_eq!(bits, back_bits);
    }

    #[test]
    fn checkpoint_rejects_truncation() {
        let net = MlpNet::<f64>::init_xavier(&[2, 3, 1], 1).unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(MlpNet::<f64>::read_checkpoint(cut.as_bytes()).is_err());
    }

    #[test]
    fn batched_values_match_pointwise() {
        let net = MlpNet::<f64>::init_xavier(&[2, 6, 6, 1], 3).unwrap();
        let pts = array![[0.1, 0.2], [-0.7, 0.4], [0.9, -0.9]];
        let many = net.eval_many(pts.view()).unwrap();
        for (row, v) in pts.rows().into_iter().zip(many) {
            assert_relative_eq!(net.eval(row.as_slice().unwrap()).unwrap(), v, max_relative = 1e-14);
        }
    }

    proptest! {
        #[test]
        fn flat_params_round_trip(seed in 0u64..1000) {
            let net = MlpNet::<f64>::init_xavier(&[3, 4, 5, 1], seed).unwrap();
            let mut other = MlpNet::<f64>::zeros(&[3, 4, 5, 1]).unwrap();
            other.set_params(&net.params()).unwrap();
            prop_assert_eq!(&net, &other);
            prop_assert_eq!(net.params(), other.params());
        }

        #[test]
        fn jet_value_matches_plain_eval(seed in 0u64..1000, x in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let mut net = MlpNet::<f64>::init_xavier(&[3, 8, 8, 1], seed).unwrap();
            let b: Vec<f64> = (0..net.num_params()).map(|i| (i as f64 * 0.37).sin() * 0.5).collect();
            net.add_to_params(&b).unwrap();
            let plain = net.eval(&x).unwrap();
            let jet = net.eval_jet(&x).unwrap();
            prop_assert!((plain - jet.value).abs() <= 1e-14 * (1.0 + plain.abs()));
        }
    }
}
