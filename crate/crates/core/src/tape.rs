//! Batched jet propagation and the reverse sweep that yields parameter gradients.
//!
//! A [`JetMatrix`] stores one layer's activations for a block of `B` points.
//! Row `i` is neuron `i`; its columns are laid out channel by channel:
//!
//! ```text
//! [ value(B) | ∂_1(B) | … | ∂_d(B) | Δ(B) ]
//! ```
//!
//! so an affine layer is a single matrix product over all channels and the
//! bias touches only the value block. With [`Order::Value`] the matrix keeps
//! just the value block.
//!
//! [`AdjointTape`] records every layer operation of one forward pass,
//! then a scalar loss of the output jets (its value and its adjoint with
//! respect to each output channel). The reverse sweep pops each recorded
//! operation once and accumulates `∂loss/∂θ`, including the dependence of
//! gradient and Laplacian channels on the weights.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{dim_err, Error, Result};
use crate::jet::{tanh_derivatives, Jet};
use crate::network::MlpNet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    /// Values only.
    Value,
    /// Value, input gradient and input Laplacian.
    Laplacian,
}

impl Order {
    pub fn channels(self, dim: usize) -> usize {
        match self {
            Order::Value => 1,
            Order::Laplacian => dim + 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JetMatrix<T> {
    data: Array2<T>,
    dim: usize,
    points: usize,
    order: Order,
}

impl<T: Scalar> JetMatrix<T> {
    /// Seeds coordinate jets for every row of `points` (`n × d`).
    pub fn seed(points: ArrayView2<T>, order: Order) -> Result<Self> {
        let (n, d) = points.dim();
        if d == 0 {
            return Err(Error::Dimension("cannot seed jets from zero-dimensional points".into()));
        }
        let mut data = Array2::zeros((d, order.channels(d) * n));
        data.slice_mut(s![.., 0..n]).assign(&points.t());
        if order == Order::Laplacian {
            for k in 0..d {
                data.slice_mut(s![k, (1 + k) * n..(2 + k) * n]).fill(T::one());
            }
        }
        Ok(Self { data, dim: d, points: n, order })
    }

    pub fn from_raw(data: Array2<T>, dim: usize, points: usize, order: Order) -> Result<Self> {
        if data.ncols() != order.channels(dim) * points {
            return dim_err(format!(
                "{} columns for {points} points with {} channels",
                data.ncols(),
                order.channels(dim)
            ));
        }
        Ok(Self { data, dim, points, order })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn width(&self) -> usize {
        self.data.nrows()
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn channels(&self) -> usize {
        self.order.channels(self.dim)
    }

    /// Output values of neuron 0 (the network output) for every point.
    pub fn values(&self) -> ArrayView1<'_, T> {
        self.data.slice(s![0, 0..self.points])
    }

    pub fn value(&self, neuron: usize, point: usize) -> T {
        self.data[[neuron, point]]
    }

    pub fn grad(&self, neuron: usize, axis: usize, point: usize) -> T {
        assert_eq!(self.order, Order::Laplacian, "value-only jets carry no gradient");
        self.data[[neuron, (1 + axis) * self.points + point]]
    }

    pub fn lap(&self, neuron: usize, point: usize) -> T {
        assert_eq!(self.order, Order::Laplacian, "value-only jets carry no Laplacian");
        self.data[[neuron, (1 + self.dim) * self.points + point]]
    }

    /// The jet of one neuron at one point.
    pub fn jet(&self, neuron: usize, point: usize) -> Jet<T> {
        match self.order {
            Order::Value => Jet::constant(self.value(neuron, point), self.dim),
            Order::Laplacian => Jet::new(
                self.value(neuron, point),
                (0..self.dim).map(|k| self.grad(neuron, k, point)).collect(),
                self.lap(neuron, point),
            ),
        }
    }
}

fn affine_forward<T: Scalar>(
    weight: &Array2<T>,
    bias: &ndarray::Array1<T>,
    input: &Array2<T>,
    points: usize,
) -> Array2<T> {
    let mut out = weight.dot(input);
    for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(bias) {
        row.slice_mut(s![0..points]).mapv_inplace(|v| v + b);
    }
    out
}

fn tanh_forward<T: Scalar>(input: &Array2<T>, dim: usize, points: usize, order: Order) -> Array2<T> {
    let mut out = Array2::zeros(input.raw_dim());
    let n = points;
    for (row_in, mut row_out) in input.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let zin = row_in.as_slice().expect("standard layout");
        let zout = row_out.as_slice_mut().expect("standard layout");
        match order {
            Order::Value => {
                for (o, &z) in zout.iter_mut().zip(zin) {
                    *o = crate::jet::tanh(z);
                }
            }
            Order::Laplacian => {
                for p in 0..n {
                    let (s, s1, s2) = tanh_derivatives(zin[p]);
                    zout[p] = s;
                    let mut gsq = T::zero();
                    for k in 0..dim {
                        let g = zin[(1 + k) * n + p];
                        gsq += g * g;
                        zout[(1 + k) * n + p] = s1 * g;
                    }
                    let l = (1 + dim) * n + p;
                    zout[l] = s2 * gsq + s1 * zin[l];
                }
            }
        }
    }
    out
}

/// Adjoint of [`tanh_forward`]: maps output-channel adjoints to input-channel
/// adjoints. `output` is the forward result, whose value block holds `tanh z`.
fn tanh_backward<T: Scalar>(
    input: &Array2<T>,
    output: &Array2<T>,
    out_adj: &Array2<T>,
    dim: usize,
    points: usize,
    order: Order,
) -> Array2<T> {
    let mut in_adj = Array2::zeros(input.raw_dim());
    let n = points;
    let two = T::one() + T::one();
    let four = two + two;
    let rows = input.axis_iter(Axis(0)).zip(output.axis_iter(Axis(0))).zip(out_adj.axis_iter(Axis(0)));
    for (((row_in, row_out), row_adj), mut row_res) in rows.zip(in_adj.axis_iter_mut(Axis(0))) {
        let zin = row_in.as_slice().expect("standard layout");
        let sv = row_out.as_slice().expect("standard layout");
        let abar = row_adj.as_slice().expect("standard layout");
        let res = row_res.as_slice_mut().expect("standard layout");
        match order {
            Order::Value => {
                for p in 0..n {
                    res[p] = (T::one() - sv[p] * sv[p]) * abar[p];
                }
            }
            Order::Laplacian => {
                for p in 0..n {
                    let s = sv[p];
                    let s1 = T::one() - s * s;
                    let s2 = -two * s * s1;
                    // d s''/dz
                    let s3 = four * s * s * s1 - two * s1 * s1;
                    let l = (1 + dim) * n + p;
                    let lbar = abar[l];
                    let mut gsq = T::zero();
                    let mut gdot = T::zero();
                    for k in 0..dim {
                        let c = (1 + k) * n + p;
                        let g = zin[c];
                        gsq += g * g;
                        gdot += abar[c] * g;
                        res[c] = s1 * abar[c] + two * s2 * g * lbar;
                    }
                    res[l] = s1 * lbar;
                    res[p] = s1 * abar[p] + s2 * gdot + lbar * (s3 * gsq + s2 * zin[l]);
                }
            }
        }
    }
    in_adj
}

fn check_points<T: Scalar>(net: &MlpNet<T>, points: &ArrayView2<T>) -> Result<()> {
    if points.ncols() != net.input_dim() {
        return dim_err(format!(
            "points of dimension {} for a network on R^{}",
            points.ncols(),
            net.input_dim()
        ));
    }
    Ok(())
}

/// Forward pass over a block of points without recording.
pub fn forward_matrix<T: Scalar>(net: &MlpNet<T>, points: ArrayView2<T>, order: Order) -> Result<JetMatrix<T>> {
    check_points(net, &points)?;
    let seeded = JetMatrix::seed(points, order)?;
    let (dim, n) = (seeded.dim, seeded.points);
    let mut z = seeded.data;
    let last = net.layers() - 1;
    for k in 0..net.layers() {
        z = affine_forward(net.weight(k), net.bias(k), &z, n);
        if k != last {
            z = tanh_forward(&z, dim, n, order);
        }
    }
    JetMatrix::from_raw(z, dim, n, order)
}

#[derive(Debug)]
enum TapeOp<T> {
    Affine { layer: usize, input: Array2<T> },
    Tanh { input: Array2<T> },
}

#[derive(Debug)]
struct RecordedLoss<T> {
    value: T,
    adjoint: Array2<T>,
}

/// Recorded forward evaluation of a network on a block of points, closed by a
/// scalar loss of the output jets.
#[derive(Debug)]
pub struct AdjointTape<'n, T> {
    net: &'n MlpNet<T>,
    ops: Vec<TapeOp<T>>,
    output: Option<JetMatrix<T>>,
    loss: Option<RecordedLoss<T>>,
}

impl<'n, T: Scalar> AdjointTape<'n, T> {
    pub fn new(net: &'n MlpNet<T>) -> Self {
        Self { net, ops: Vec::with_capacity(2 * net.layers()), output: None, loss: None }
    }

    /// Convenience: a tape with the forward pass already recorded.
    pub fn record(net: &'n MlpNet<T>, points: ArrayView2<T>, order: Order) -> Result<Self> {
        let mut tape = Self::new(net);
        tape.forward(points, order)?;
        Ok(tape)
    }

    pub fn forward(&mut self, points: ArrayView2<T>, order: Order) -> Result<&JetMatrix<T>> {
        if self.output.is_some() {
            return Err(Error::State("forward pass already recorded on this tape".into()));
        }
        check_points(self.net, &points)?;
        let seeded = JetMatrix::seed(points, order)?;
        let (dim, n) = (seeded.dim, seeded.points);
        let mut z = seeded.data;
        let last = self.net.layers() - 1;
        for k in 0..self.net.layers() {
            let next = affine_forward(self.net.weight(k), self.net.bias(k), &z, n);
            self.ops.push(TapeOp::Affine { layer: k, input: z });
            z = next;
            if k != last {
                let next = tanh_forward(&z, dim, n, order);
                self.ops.push(TapeOp::Tanh { input: z });
                z = next;
            }
        }
        self.output = Some(JetMatrix::from_raw(z, dim, n, order)?);
        Ok(self.output.as_ref().unwrap())
    }

    pub fn output(&self) -> Option<&JetMatrix<T>> {
        self.output.as_ref()
    }

    pub fn recorded_ops(&self) -> usize {
        self.ops.len()
    }

    /// Closes the tape with a scalar loss and its adjoint with respect to the
    /// output matrix (same shape as the output).
    pub fn record_loss(&mut self, value: T, adjoint: Array2<T>) -> Result<()> {
        let out = self
            .output
            .as_ref()
            .ok_or_else(|| Error::State("loss recorded before the forward pass".into()))?;
        if self.loss.is_some() {
            return Err(Error::State("loss already recorded on this tape".into()));
        }
        if adjoint.dim() != out.data.dim() {
            return dim_err(format!("loss adjoint {:?} for output {:?}", adjoint.dim(), out.data.dim()));
        }
        self.loss = Some(RecordedLoss { value, adjoint });
        Ok(())
    }

    pub fn loss_value(&self) -> Option<T> {
        self.loss.as_ref().map(|l| l.value)
    }

    /// `loss_seed · ∂loss/∂θ` for every network parameter, in flat order.
    pub fn backprop_params(self, loss_seed: T) -> Result<Vec<T>> {
        self.sweep(loss_seed).map(|(g, _)| g)
    }

    fn sweep(mut self, loss_seed: T) -> Result<(Vec<T>, usize)> {
        let out = self
            .output
            .take()
            .ok_or_else(|| Error::State("reverse sweep before the forward pass".into()))?;
        let loss = self
            .loss
            .take()
            .ok_or_else(|| Error::State("reverse sweep on a tape without a recorded loss".into()))?;
        let (dim, n, order) = (out.dim, out.points, out.order);
        let net = self.net;
        let offsets = net.layer_offsets();
        let mut grads = vec![T::zero(); net.num_params()];
        let mut adj = loss.adjoint;
        if loss_seed != T::one() {
            adj.mapv_inplace(|a| a * loss_seed);
        }
        let mut visited = 0;
        // input of the affine layer just swept, i.e. the output of the tanh before it
        let mut activation: Option<Array2<T>> = None;
        while let Some(op) = self.ops.pop() {
            visited += 1;
            match op {
                TapeOp::Affine { layer, input } => {
                    let w = net.weight(layer);
                    let wbar = adj.dot(&input.t());
                    let at = offsets[layer];
                    grads[at..at + w.len()]
                        .iter_mut()
                        .zip(wbar.iter())
                        .for_each(|(g, &v)| *g = v);
                    let bat = at + w.len();
                    for (i, row) in adj.axis_iter(Axis(0)).enumerate() {
                        grads[bat + i] = row.slice(s![0..n]).sum();
                    }
                    if layer > 0 {
                        adj = w.t().dot(&adj);
                    }
                    activation = Some(input);
                }
                TapeOp::Tanh { input } => {
                    let output = activation
                        .take()
                        .ok_or_else(|| Error::State("activation without a following affine layer".into()))?;
                    adj = tanh_backward(&input, &output, &adj, dim, n, order);
                }
            }
        }
        Ok((grads, visited))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn jittered(sizes: &[usize], seed: u64) -> MlpNet<f64> {
        let mut net = MlpNet::init_xavier(sizes, seed).unwrap();
        let bump: Vec<f64> = (0..net.num_params()).map(|i| 0.3 * ((i as f64) * 1.7 + seed as f64).cos()).collect();
        net.add_to_params(&bump).unwrap();
        net
    }

    /// loss = Σ_p c_v·u + Σ_k c_k·∂_k u + c_l·Δu with fixed random coefficients.
    fn linear_head(out: &JetMatrix<f64>) -> (f64, Array2<f64>) {
        let adj = Array2::from_shape_fn(out.data().dim(), |(_, c)| ((c as f64) * 0.91).sin());
        let value = (&adj * out.data()).sum();
        (value, adj)
    }

    #[test]
    fn batched_jets_match_pointwise_path() {
        let net = jittered(&[3, 7, 5, 1], 2);
        let pts = array![[0.1, 0.2, -0.3], [0.9, -0.5, 0.4], [-1.0, 0.0, 0.7]];
        let m = forward_matrix(&net, pts.view(), Order::Laplacian).unwrap();
        for p in 0..3 {
            let reference = net.eval_jet(pts.row(p).as_slice().unwrap()).unwrap();
            let got = m.jet(0, p);
            assert_relative_eq!(got.value, reference.value, max_relative = 1e-13);
            assert_relative_eq!(got.lap, reference.lap, max_relative = 1e-12, epsilon = 1e-14);
            for k in 0..3 {
                assert_relative_eq!(got.grad[k], reference.grad[k], max_relative = 1e-12, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn single_linear_neuron_hand_chain_rule() {
        // The output neuron u = w·h + b is linear in the hidden activation
        // h = tanh(β); with w = 2, b = 0 and loss u²: ∂w = 2u·h, ∂b = 2u.
        let mut net = MlpNet::<f64>::zeros(&[1, 1, 1]).unwrap();
        let beta = 0.5f64;
        net.bias_mut(0)[0] = beta;
        net.weight_mut(1)[[0, 0]] = 2.0;
        let h = beta.tanh();
        let x = array![[1.0]];
        let mut tape = AdjointTape::record(&net, x.view(), Order::Value).unwrap();
        let u = tape.output().unwrap().value(0, 0);
        assert_relative_eq!(u, 2.0 * h, max_relative = 1e-15);
        let mut adj = Array2::zeros((1, 1));
        adj[[0, 0]] = 2.0 * u;
        tape.record_loss(u * u, adj).unwrap();
        let g = tape.backprop_params(1.0).unwrap();
        // ∂/∂w_out = 2u·h, ∂/∂b_out = 2u, ∂/∂b_hidden = 2u·w_out·(1-h²)
        assert_relative_eq!(g[2], 2.0 * u * h, max_relative = 1e-15);
        assert_relative_eq!(g[3], 2.0 * u, max_relative = 1e-15);
        assert_relative_eq!(g[1], 2.0 * u * 2.0 * (1.0 - h * h), max_relative = 1e-14);
        assert_relative_eq!(g[0], 2.0 * u * 2.0 * (1.0 - h * h) * 1.0, max_relative = 1e-14);
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let net = jittered(&[2, 4, 1], 5);
        let pts = array![[0.2, 0.3]];
        let mut tape = AdjointTape::record(&net, pts.view(), Order::Laplacian).unwrap();
        let shape = tape.output().unwrap().data().dim();
        tape.record_loss(3.0, Array2::zeros(shape)).unwrap();
        assert!(tape.backprop_params(1.0).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn incomplete_tapes_are_state_errors() {
        let net = jittered(&[2, 4, 1], 5);
        let empty = AdjointTape::new(&net);
        assert!(matches!(empty.backprop_params(1.0), Err(Error::State(_))));
        let pts = array![[0.2, 0.3]];
        let open = AdjointTape::record(&net, pts.view(), Order::Laplacian).unwrap();
        assert!(matches!(open.backprop_params(1.0), Err(Error::State(_))));
        let mut t = AdjointTape::new(&net);
        assert!(matches!(t.record_loss(0.0, Array2::zeros((1, 4))), Err(Error::State(_))));
        t.forward(pts.view(), Order::Laplacian).unwrap();
        assert!(matches!(t.forward(pts.view(), Order::Laplacian), Err(Error::State(_))));
        assert!(matches!(t.record_loss(0.0, Array2::zeros((1, 3))), Err(Error::Dimension(_))));
    }

    #[test]
    fn sweep_visits_every_operation_once() {
        let net = jittered(&[3, 5, 5, 5, 1], 1);
        let pts = array![[0.1, 0.2, 0.3]];
        let mut tape = AdjointTape::record(&net, pts.view(), Order::Laplacian).unwrap();
        assert_eq!(tape.recorded_ops(), 2 * net.layers() - 1);
        let (v, adj) = linear_head(tape.output().unwrap());
        tape.record_loss(v, adj).unwrap();
        let recorded = tape.recorded_ops();
        let (g, visited) = tape.sweep(1.0).unwrap();
        assert_eq!(visited, recorded);
        assert_eq!(g.len(), net.num_params());
    }

    #[test]
    fn loss_seed_scales_gradient() {
        let net = jittered(&[2, 4, 4, 1], 9);
        let pts = array![[0.2, -0.6], [0.5, 0.5]];
        let run = |seed: f64| {
            let mut tape = AdjointTape::record(&net, pts.view(), Order::Laplacian).unwrap();
            let (v, adj) = linear_head(tape.output().unwrap());
            tape.record_loss(v, adj).unwrap();
            tape.backprop_params(seed).unwrap()
        };
        let (g1, g3) = (run(1.0), run(-3.0));
        for (a, b) in g1.iter().zip(&g3) {
            assert_relative_eq!(-3.0 * a, *b, max_relative = 1e-14, epsilon = 1e-300);
        }
    }

    /// Central differences of the linear head with respect to every parameter.
    #[test]
    fn adjoint_matches_finite_differences_on_all_channels() {
        let sizes = [3, 6, 5, 1];
        let net = jittered(&sizes, 4);
        let pts = array![[0.1, 0.2, -0.3], [0.9, -0.5, 0.4], [-0.2, 0.8, 0.1], [0.0, -0.9, -0.6]];
        let mut tape = AdjointTape::record(&net, pts.view(), Order::Laplacian).unwrap();
        let (v, adj) = linear_head(tape.output().unwrap());
        tape.record_loss(v, adj.clone()).unwrap();
        let g = tape.backprop_params(1.0).unwrap();
        let base = net.params();
        let eval = |params: &[f64]| {
            let n = MlpNet::from_params(&sizes, params).unwrap();
            let out = forward_matrix(&n, pts.view(), Order::Laplacian).unwrap();
            (&adj * out.data()).sum()
        };
        let h = 1e-5;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            let up = eval(&p);
            p[i] -= 2.0 * h;
            let down = eval(&p);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} adjoint {}", g[i]);
        }
    }

    #[test]
    fn value_order_adjoint_matches_finite_differences() {
        let sizes = [2, 5, 1];
        let net = jittered(&sizes, 8);
        let pts = array![[0.3, -0.1], [0.7, 0.2]];
        let mut tape = AdjointTape::record(&net, pts.view(), Order::Value).unwrap();
        let out = tape.output().unwrap().values().to_vec();
        let loss: f64 = out.iter().map(|u| u * u).sum();
        let adj = Array2::from_shape_vec((1, 2), out.iter().map(|u| 2.0 * u).collect()).unwrap();
        tape.record_loss(loss, adj).unwrap();
        let g = tape.backprop_params(1.0).unwrap();
        let base = net.params();
        let h = 1e-6;
        for i in 0..base.len() {
            let f = |delta: f64| {
                let mut p = base.clone();
                p[i] += delta;
                let n = MlpNet::from_params(&sizes, &p).unwrap();
                n.eval_many(pts.view()).unwrap().iter().map(|u| u * u).sum::<f64>()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-7 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn value_order_skips_derivative_channels() {
        let net = jittered(&[4, 3, 1], 0);
        let pts = Array2::from_elem((5, 4), 0.1);
        let m = forward_matrix(&net, pts.view(), Order::Value).unwrap();
        assert_eq!(m.data().dim(), (1, 5));
        let full = forward_matrix(&net, pts.view(), Order::Laplacian).unwrap();
        assert_eq!(full.data().dim(), (1, 6 * 5));
        for p in 0..5 {
            assert_relative_eq!(m.value(0, p), full.value(0, p), max_relative = 1e-15);
        }
    }
}
