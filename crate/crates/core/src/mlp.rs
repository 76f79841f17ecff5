//! Fully connected ReLU networks with shift activations, trained on squared loss.
//!
//! A network of depth `L` and width `W` maps `z ∈ R^d` to
//!
//! ```text
//! v_{L+1} + A_{L+1} σ_{v_L}( A_L σ_{v_{L-1}}( ... A_2 σ_{v_1}(A_1 z) ) )
//! ```
//!
//! where `σ_v(a) = max(a − v, 0)` elementwise. Hidden shifts are subtracted
//! before the ReLU; the output shift is added.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpNetwork {
    input_dim: usize,
    output_dim: usize,
    depth: usize,
    width: usize,
    /// `A_1 (W×d), A_2..A_L (W×W), A_{L+1} (q×W)`.
    weights: Vec<Matrix>,
    /// `v_1..v_L (W), v_{L+1} (q)`.
    shifts: Vec<Vec<f64>>,
}

/// Gradient of the loss, shaped like the network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGradient {
    pub weights: Vec<Matrix>,
    pub shifts: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without test-loss improvement before stopping.
    pub patience: usize,
    /// Early stopping is not checked before this epoch.
    pub min_epochs: usize,
    /// Fraction of rows used for training; the rest is the test split.
    pub train_fraction: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Return the snapshot with the lowest test loss instead of the last epoch's weights.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            batch_size: 64,
            max_epochs: 500,
            patience: 3,
            min_epochs: 20,
            train_fraction: 0.8,
            optimizer: Optimizer::Adam,
            seed: 0,
            restore_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Domain(format!(
                "train_fraction must lie in (0, 1], got {}",
                self.train_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Epoch whose snapshot was kept (0 = initial network).
    pub best_epoch: usize,
    pub initial_test_loss: f64,
    pub best_test_loss: f64,
    /// Losses of the returned network.
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    /// `(train, test)` per epoch; the train entry is the mean minibatch loss seen during the epoch.
    pub loss_history: Vec<(f64, f64)>,
}

impl MlpNetwork {
    /// Random network: weights `~ U(±√(6/(fan_in+fan_out)))`, shifts zero.
    pub fn init(d: usize, q: usize, depth: usize, width: usize, rng: &mut RngStream) -> Result<Self> {
        if d == 0 || q == 0 || depth == 0 || width == 0 {
            return Err(Error::Domain(format!(
                "network dimensions must be positive (d={d}, q={q}, L={depth}, W={width})"
            )));
        }
        let mut weights = Vec::with_capacity(depth + 1);
        for l in 0..=depth {
            let (rows, cols) = layer_shape(l, d, q, depth, width);
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            weights.push(Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-bound, bound)));
        }
        let mut shifts = vec![vec![0.0; width]; depth];
        shifts.push(vec![0.0; q]);
        Ok(Self { input_dim: d, output_dim: q, depth, width, weights, shifts })
    }

    /// Builds a network from explicit parameters, checking every shape.
    pub fn from_parts(
        d: usize,
        q: usize,
        depth: usize,
        width: usize,
        weights: Vec<Matrix>,
        shifts: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if d == 0 || q == 0 || depth == 0 || width == 0 {
            return Err(Error::Domain("network dimensions must be positive".into()));
        }
        if weights.len() != depth + 1 || shifts.len() != depth + 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} weight matrices and shift vectors, got {} and {}",
                depth + 1,
                weights.len(),
                shifts.len()
            )));
        }
        for l in 0..=depth {
            let shape = layer_shape(l, d, q, depth, width);
            if weights[l].shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} weights are {:?}, expected {:?}",
                    l + 1,
                    weights[l].shape(),
                    shape
                )));
            }
            if shifts[l].len() != shape.0 {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} shift has length {}, expected {}",
                    l + 1,
                    shifts[l].len(),
                    shape.0
                )));
            }
        }
        let net = Self { input_dim: d, output_dim: q, depth, width, weights, shifts };
        if !net.is_finite() {
            return Err(Error::Domain("non-finite network parameter".into()));
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn shifts(&self) -> &[Vec<f64>] {
        &self.shifts
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn shifts_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.shifts
    }

    /// The textbook count `W(L+d+q) + (L−1)W²`.
    ///
    /// It leaves out the `q` output offsets `v_{L+1}`; see [`Self::num_parameters`]
    /// for the number of stored scalars.
    pub fn parameter_count(&self) -> usize {
        let (d, q, l, w) = (self.input_dim, self.output_dim, self.depth, self.width);
        w * (l + d + q) + (l - 1) * w * w
    }

    /// Number of stored scalars, output offsets included.
    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(|m| m.rows() * m.cols()).sum::<usize>()
            + self.shifts.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.shifts.iter().flatten().all(|v| v.is_finite())
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input of length {}, network expects {}",
                z.len(),
                self.input_dim
            )));
        }
        let mut ws = Workspace::new(self);
        let mut out = vec![0.0; self.output_dim];
        self.forward_ws(z, &mut ws, &mut out);
        Ok(out)
    }

    /// Evaluates every row of `z`.
    pub fn forward_batch(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                z.cols(),
                self.input_dim
            )));
        }
        let mut ws = Workspace::new(self);
        let mut out = Matrix::zeros(z.rows(), self.output_dim);
        for i in 0..z.rows() {
            self.forward_ws(z.row(i), &mut ws, out.row_mut(i));
        }
        Ok(out)
    }

    fn forward_ws(&self, z: &[f64], ws: &mut Workspace, out: &mut [f64]) {
        for l in 0..self.depth {
            let a = &self.weights[l];
            let v = &self.shifts[l];
            let (before, after) = ws.act.split_at_mut(l);
            let input: &[f64] = if l == 0 { z } else { &before[l - 1] };
            let pre = &mut ws.pre[l];
            let act = &mut after[0];
            for r in 0..a.rows() {
                let s = dot_unrolled(a.row(r), input) - v[r];
                pre[r] = s;
                act[r] = if s > 0.0 { s } else { 0.0 };
            }
        }
        let a = &self.weights[self.depth];
        let v = &self.shifts[self.depth];
        let h = &ws.act[self.depth - 1];
        for (r, o) in out.iter_mut().enumerate() {
            *o = v[r] + dot_unrolled(a.row(r), h);
        }
    }

    /// Accumulates `scale · ∂‖x − f(z)‖²/∂θ` into `grad` and returns the squared residual norm.
    fn backprop_sample(
        &self,
        z: &[f64],
        x: &[f64],
        scale: f64,
        ws: &mut Workspace,
        grad: &mut NetworkGradient,
    ) -> f64 {
        let q = self.output_dim;
        let mut out = std::mem::take(&mut ws.out);
        self.forward_ws(z, ws, &mut out);
        let mut sq = 0.0;
        let delta_out = &mut ws.delta_out;
        for s in 0..q {
            let r = x[s] - out[s];
            sq += r * r;
            delta_out[s] = -2.0 * r * scale;
        }
        ws.out = out;

        // output layer
        let top = self.depth;
        {
            let h = &ws.act[top - 1];
            let ga = &mut grad.weights[top];
            for s in 0..q {
                let ds = ws.delta_out[s];
                grad.shifts[top][s] += ds;
                if ds != 0.0 {
                    for (g, hv) in ga.row_mut(s).iter_mut().zip(h) {
                        *g += ds * hv;
                    }
                }
            }
            let dh = &mut ws.delta[top - 1];
            dh.iter_mut().for_each(|v| *v = 0.0);
            let a = &self.weights[top];
            for s in 0..q {
                let ds = ws.delta_out[s];
                for (d, w) in dh.iter_mut().zip(a.row(s)) {
                    *d += ds * w;
                }
            }
        }

        // hidden layers, top down
        for l in (0..self.depth).rev() {
            let pre = &ws.pre[l];
            {
                let du = &mut ws.delta[l];
                for (d, p) in du.iter_mut().zip(pre) {
                    if *p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let du = &ws.delta[l];
            let input: &[f64] = if l == 0 { z } else { &ws.act[l - 1] };
            let ga = &mut grad.weights[l];
            let gv = &mut grad.shifts[l];
            for (r, &d) in du.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gv[r] -= d;
                for (g, iv) in ga.row_mut(r).iter_mut().zip(input) {
                    *g += d * iv;
                }
            }
            if l > 0 {
                let (lower, upper) = ws.delta.split_at_mut(l);
                let dh = &mut lower[l - 1];
                let du = &upper[0];
                dh.iter_mut().for_each(|v| *v = 0.0);
                let a = &self.weights[l];
                for (r, &d) in du.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (h, w) in dh.iter_mut().zip(a.row(r)) {
                        *h += d * w;
                    }
                }
            }
        }
        sq
    }

    /// The same function expressed on raw scales.
    ///
    /// `self` was fitted on inputs `(z − in_mean)/in_scale` and targets
    /// `(x − out_mean)/out_scale`; the returned network takes raw `z` and
    /// produces raw-scale predictions. The affine maps fold into `A_1, v_1`
    /// and `A_{L+1}, v_{L+1}`.
    pub fn fold_affine(
        &self,
        in_mean: &[f64],
        in_scale: &[f64],
        out_mean: &[f64],
        out_scale: &[f64],
    ) -> Result<MlpNetwork> {
        if in_mean.len() != self.input_dim
            || in_scale.len() != self.input_dim
            || out_mean.len() != self.output_dim
            || out_scale.len() != self.output_dim
        {
            return Err(Error::ShapeMismatch("standardization vectors do not match network".into()));
        }
        let mut net = self.clone();
        let a1 = &mut net.weights[0];
        for r in 0..a1.rows() {
            let row = a1.row_mut(r);
            for (w, s) in row.iter_mut().zip(in_scale) {
                *w /= s;
            }
            let offset: f64 = row.iter().zip(in_mean).map(|(w, m)| w * m).sum();
            net.shifts[0][r] += offset;
        }
        let top = self.depth;
        let a_out = &mut net.weights[top];
        for s in 0..self.output_dim {
            for w in a_out.row_mut(s) {
                *w *= out_scale[s];
            }
            net.shifts[top][s] = out_mean[s] + out_scale[s] * net.shifts[top][s];
        }
        Ok(net)
    }

    fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .map(|m| m.as_mut_slice())
            .chain(self.shifts.iter_mut().map(|v| v.as_mut_slice()))
    }

    fn zero_gradient(&self) -> NetworkGradient {
        NetworkGradient {
            weights: self.weights.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            shifts: self.shifts.iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }
}

impl NetworkGradient {
    fn reset(&mut self) {
        for m in &mut self.weights {
            m.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        for v in &mut self.shifts {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn param_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.iter().map(|m| m.as_slice()).chain(self.shifts.iter().map(|v| v.as_slice()))
    }

    pub fn max_abs(&self) -> f64 {
        self.param_slices().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn layer_shape(l: usize, d: usize, q: usize, depth: usize, width: usize) -> (usize, usize) {
    match l {
        0 if depth == 0 => (q, d),
        0 => (width, d),
        l if l == depth => (q, width),
        _ => (width, width),
    }
}

#[inline]
fn dot_unrolled(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

struct Workspace {
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    delta_out: Vec<f64>,
    out: Vec<f64>,
}

impl Workspace {
    fn new(net: &MlpNetwork) -> Self {
        let w = net.width;
        Self {
            pre: vec![vec![0.0; w]; net.depth],
            act: vec![vec![0.0; w]; net.depth],
            delta: vec![vec![0.0; w]; net.depth],
            delta_out: vec![0.0; net.output_dim],
            out: vec![0.0; net.output_dim],
        }
    }
}

fn check_data(net: &MlpNetwork, x: &Matrix, z: &Matrix) -> Result<()> {
    if x.rows() != z.rows() {
        return Err(Error::ShapeMismatch(format!(
            "X has {} rows but Z has {}",
            x.rows(),
            z.rows()
        )));
    }
    if x.cols() != net.output_dim || z.cols() != net.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "data is {}→{}, network is {}→{}",
            z.cols(),
            x.cols(),
            net.input_dim,
            net.output_dim
        )));
    }
    Ok(())
}

/// Mean squared residual norm `(1/n) Σ ‖X_i − f(Z_i)‖²`.
pub fn loss(net: &MlpNetwork, x: &Matrix, z: &Matrix) -> Result<f64> {
    check_data(net, x, z)?;
    if x.rows() == 0 {
        return Err(Error::Domain("loss of an empty sample".into()));
    }
    let idx: Vec<usize> = (0..x.rows()).collect();
    Ok(loss_on(net, x, z, &idx))
}

fn loss_on(net: &MlpNetwork, x: &Matrix, z: &Matrix, idx: &[usize]) -> f64 {
    let mut ws = Workspace::new(net);
    let mut out = vec![0.0; net.output_dim];
    let mut total = 0.0;
    for &i in idx {
        net.forward_ws(z.row(i), &mut ws, &mut out);
        total += x.row(i).iter().zip(&out).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    total / idx.len() as f64
}

/// Gradient of [`loss`] over the given batch, by backpropagation.
pub fn gradient(net: &MlpNetwork, x_batch: &Matrix, z_batch: &Matrix) -> Result<NetworkGradient> {
    check_data(net, x_batch, z_batch)?;
    if x_batch.rows() == 0 {
        return Err(Error::Domain("gradient of an empty batch".into()));
    }
    let mut grad = net.zero_gradient();
    let mut ws = Workspace::new(net);
    let scale = 1.0 / x_batch.rows() as f64;
    for i in 0..x_batch.rows() {
        net.backprop_sample(z_batch.row(i), x_batch.row(i), scale, &mut ws, &mut grad);
    }
    Ok(grad)
}

/// Train/test row split used by [`train`]: a permutation drawn from stream 0 of `cfg.seed`.
pub fn train_test_split(n: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let perm = RngStream::new(cfg.seed, 0).permutation(n);
    if cfg.train_fraction >= 1.0 || n < 2 {
        return (perm, Vec::new());
    }
    let n_train = ((cfg.train_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let test = perm[n_train..].to_vec();
    let mut train = perm;
    train.truncate(n_train);
    (train, test)
}

struct Adam {
    m: NetworkGradient,
    v: NetworkGradient,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Minibatch training of `net` on `(Z → X)` with early stopping on the test split.
pub fn train(
    net: &MlpNetwork,
    x: &Matrix,
    z: &Matrix,
    cfg: &TrainConfig,
) -> Result<(MlpNetwork, TrainReport)> {
    cfg.validate()?;
    check_data(net, x, z)?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::Domain("cannot train on an empty sample".into()));
    }
    if cfg.train_fraction < 1.0 && n < 2 {
        return Err(Error::Domain("a train/test split needs at least 2 rows".into()));
    }
    let (train_idx, test_idx) = train_test_split(n, cfg);
    // without a test split, early stopping monitors the training loss
    let monitor_idx: &[usize] = if test_idx.is_empty() { &train_idx } else { &test_idx };

    let initial_test = loss_on(net, x, z, monitor_idx);
    let mut current = net.clone();
    let mut best = (initial_test, net.clone(), 0usize);
    let mut history = Vec::new();
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;

    let mut batch_rng = RngStream::new(cfg.seed, 1);
    let mut order = train_idx.clone();
    let mut grad = current.zero_gradient();
    let mut ws = Workspace::new(&current);
    let mut adam = Adam { m: current.zero_gradient(), v: current.zero_gradient(), t: 0 };

    for epoch in 1..=cfg.max_epochs {
        batch_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.reset();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                epoch_loss += current.backprop_sample(z.row(i), x.row(i), scale, &mut ws, &mut grad);
            }
            apply_update(&mut current, &grad, cfg, &mut adam);
        }
        epochs_run = epoch;
        let train_loss = epoch_loss / order.len() as f64;
        let test_loss = loss_on(&current, x, z, monitor_idx);
        if !train_loss.is_finite() || !test_loss.is_finite() {
            // diverged; fall back on the best snapshot
            break;
        }
        history.push((train_loss, test_loss));
        if test_loss < best.0 {
            best = (test_loss, current.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience && epoch >= cfg.min_epochs {
                break;
            }
        }
    }

    let (best_loss, best_net, best_epoch) = best;
    let fitted = if cfg.restore_best || !current.is_finite() { best_net } else { current };
    let final_train_loss = loss_on(&fitted, x, z, &train_idx);
    let final_test_loss = loss_on(&fitted, x, z, monitor_idx);
    let report = TrainReport {
        epochs_run,
        best_epoch,
        initial_test_loss: initial_test,
        best_test_loss: best_loss,
        final_train_loss,
        final_test_loss,
        loss_history: history,
    };
    Ok((fitted, report))
}

fn apply_update(net: &mut MlpNetwork, grad: &NetworkGradient, cfg: &TrainConfig, adam: &mut Adam) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in net.param_slices_mut().zip(grad.param_slices()) {
                for (pv, gv) in p.iter_mut().zip(g) {
                    *pv -= lr * gv;
                }
            }
        }
        Optimizer::Adam => {
            adam.t += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(adam.t);
            let c2 = 1.0 - ADAM_BETA2.powi(adam.t);
            let Adam { m, v, .. } = adam;
            let moments = m
                .weights
                .iter_mut()
                .map(|w| w.as_mut_slice())
                .chain(m.shifts.iter_mut().map(|s| s.as_mut_slice()))
                .zip(
                    v.weights
                        .iter_mut()
                        .map(|w| w.as_mut_slice())
                        .chain(v.shifts.iter_mut().map(|s| s.as_mut_slice())),
                );
            for ((p, g), (m1, m2)) in net.param_slices_mut().zip(grad.param_slices()).zip(moments) {
                for i in 0..p.len() {
                    let gi = g[i];
                    m1[i] = ADAM_BETA1 * m1[i] + (1.0 - ADAM_BETA1) * gi;
                    m2[i] = ADAM_BETA2 * m2[i] + (1.0 - ADAM_BETA2) * gi * gi;
                    let mhat = m1[i] / c1;
                    let vhat = m2[i] / c2;
                    p[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkWire {
    d: usize,
    q: usize,
    #[serde(rename = "L")]
    depth: usize,
    #[serde(rename = "W")]
    width: usize,
    weights: Vec<Vec<Vec<f64>>>,
    shifts: Vec<Vec<f64>>,
}

impl Serialize for MlpNetwork {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetworkWire {
            d: self.input_dim,
            q: self.output_dim,
            depth: self.depth,
            width: self.width,
            weights: self.weights.iter().map(Matrix::to_rows).collect(),
            shifts: self.shifts.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MlpNetwork {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = NetworkWire::deserialize(d)?;
        let weights = w
            .weights
            .iter()
            .map(|rows| {
                if rows.is_empty() {
                    Err(Error::ShapeMismatch("empty weight matrix".into()))
                } else {
                    Matrix::from_rows(rows)
                }
            })
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        MlpNetwork::from_parts(w.d, w.q, w.depth, w.width, weights, w.shifts)
            .map_err(serde::de::Error::custom)
    }
}
