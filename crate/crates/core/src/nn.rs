//! Batched MLP with residual hidden blocks, reverse-mode gradients and Adam.
//!
//! Layer `l` maps width `widths[l]` to `widths[l + 1]`. Every layer but the
//! last applies ReLU; a hidden layer flagged as residual adds its own input to
//! the activated output, which requires equal input and output widths. The
//! output layer is linear.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NerdfError, Result};
use crate::scalar::Scalar;

/// Architecture of an MLP: `depth` hidden layers of equal `width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input: usize,
    pub depth: usize,
    pub width: usize,
    pub output: usize,
    /// Residual adds between neighbouring hidden layers.
    pub residual: bool,
}

impl MlpSpec {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(std::iter::repeat_n(self.width, self.depth));
        w.push(self.output);
        w
    }

    pub fn residual_flags(&self) -> Vec<bool> {
        // the first hidden layer changes width, later ones can skip
        (0..self.depth).map(|l| self.residual && l > 0).collect()
    }
}

pub struct MlpParams<T> {
    widths: Vec<usize>,
    residual: Vec<bool>,
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
    forward_rows: AtomicU64,
}

impl<T: Scalar> Clone for MlpParams<T> {
    fn clone(&self) -> Self {
        Self {
            widths: self.widths.clone(),
            residual: self.residual.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            forward_rows: AtomicU64::new(0),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for MlpParams<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MlpParams")
            .field("widths", &self.widths)
            .field("residual", &self.residual)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> PartialEq for MlpParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.widths == other.widths
            && self.residual == other.residual
            && self.weights == other.weights
            && self.biases == other.biases
    }
}

impl<T: Scalar> MlpParams<T> {
    /// Weights uniform in `±1/sqrt(fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        let widths = spec.widths();
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                T::of(rng.random_range(-bound..bound))
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Self::from_parts(widths, spec.residual_flags(), weights, biases)
    }

    pub fn from_parts(
        widths: Vec<usize>,
        residual: Vec<bool>,
        weights: Vec<Array2<T>>,
        biases: Vec<Array1<T>>,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(NerdfError::Structural("an MLP needs at least input and output widths".into()));
        }
        let layers = widths.len() - 1;
        if weights.len() != layers || biases.len() != layers || residual.len() != layers - 1 {
            return Err(NerdfError::Structural(format!(
                "expected {layers} layers and {} residual flags, got {} weights, {} biases, {} flags",
                layers - 1,
                weights.len(),
                biases.len(),
                residual.len()
            )));
        }
        for l in 0..layers {
            if weights[l].dim() != (widths[l + 1], widths[l]) || biases[l].len() != widths[l + 1] {
                return Err(NerdfError::Structural(format!("layer {l} shape does not chain")));
            }
        }
        for (l, &skip) in residual.iter().enumerate() {
            if skip && widths[l] != widths[l + 1] {
                return Err(NerdfError::Structural(format!(
                    "residual layer {l} changes width {} -> {}",
                    widths[l],
                    widths[l + 1]
                )));
            }
        }
        let params = Self {
            widths,
            residual,
            weights,
            biases,
            forward_rows: AtomicU64::new(0),
        };
        if !params.values().all(|v| v.is_finite()) {
            return Err(NerdfError::InvalidInput("non-finite network parameter".into()));
        }
        Ok(params)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn residual(&self) -> &[bool] {
        &self.residual
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Multiply-accumulates of one forward row.
    pub fn forward_macs(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    /// Every parameter, weights of all layers first (row-major), then biases.
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights
            .iter_mut()
            .flat_map(|w| w.iter_mut())
            .chain(self.biases.iter_mut().flat_map(|b| b.iter_mut()))
    }

    /// Number of input rows pushed through the network since creation or the last reset.
    pub fn forward_rows(&self) -> u64 {
        self.forward_rows.load(Ordering::Relaxed)
    }

    pub fn reset_forward_rows(&self) {
        self.forward_rows.store(0, Ordering::Relaxed);
    }

    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        MlpParams {
            widths: self.widths.clone(),
            residual: self.residual.clone(),
            weights: self.weights.iter().map(|w| w.mapv(|v| U::of(v.f64()))).collect(),
            biases: self.biases.iter().map(|b| b.mapv(|v| U::of(v.f64()))).collect(),
            forward_rows: AtomicU64::new(0),
        }
    }
}

/// Activations recorded by a forward pass, consumed by [`mlp_backward`].
#[derive(Debug)]
pub struct Tape<T> {
    /// Input to each layer.
    inputs: Vec<Array2<T>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<T>>,
}

impl<T> Tape<T> {
    pub fn rows(&self) -> usize {
        self.inputs.first().map_or(0, |a| a.nrows())
    }
}

/// Forward pass over a batch of rows; the tape is returned iff `record`.
pub fn mlp_forward<T: Scalar>(
    params: &MlpParams<T>,
    input: ArrayView2<'_, T>,
    record: bool,
) -> Result<(Array2<T>, Option<Tape<T>>)> {
    if input.ncols() != params.input_dim() {
        return Err(NerdfError::Structural(format!(
            "network expects {} inputs, got {}",
            params.input_dim(),
            input.ncols()
        )));
    }
    params
        .forward_rows
        .fetch_add(input.nrows() as u64, Ordering::Relaxed);

    let layers = params.layer_count();
    let mut inputs = Vec::new();
    let mut pre = Vec::new();
    let mut act = input.to_owned();
    for l in 0..layers {
        let mut z = act.dot(&params.weights[l].t());
        z += &params.biases[l];
        if l + 1 == layers {
            if record {
                inputs.push(act);
            }
            let tape = record.then_some(Tape { inputs, pre });
            return Ok((z, tape));
        }
        let mut next = z.mapv(|v| v.max(T::zero()));
        if params.residual[l] {
            next += &act;
        }
        if record {
            inputs.push(act);
            pre.push(z);
        }
        act = next;
    }
    unreachable!("an MLP has at least one layer")
}

/// Convenience wrapper for un-recorded inference.
pub fn mlp_infer<T: Scalar>(params: &MlpParams<T>, input: ArrayView2<'_, T>) -> Result<Array2<T>> {
    Ok(mlp_forward(params, input, false)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(params: &MlpParams<T>) -> Self {
        Self {
            weights: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    /// Same ordering as [`MlpParams::values`].
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

/// Reverse-mode pass. Returns parameter gradients and, if `want_input_grad`,
/// the gradient with respect to the network input.
pub fn mlp_backward<T: Scalar>(
    params: &MlpParams<T>,
    tape: Tape<T>,
    output_grad: ArrayView2<'_, T>,
    want_input_grad: bool,
) -> Result<(MlpGrads<T>, Option<Array2<T>>)> {
    let layers = params.layer_count();
    if tape.inputs.len() != layers || tape.pre.len() != layers - 1 {
        return Err(NerdfError::Structural("tape does not match network depth".into()));
    }
    if output_grad.dim() != (tape.rows(), params.output_dim()) {
        return Err(NerdfError::Structural(format!(
            "output gradient shape {:?} does not match ({}, {})",
            output_grad.dim(),
            tape.rows(),
            params.output_dim()
        )));
    }
    for (l, a) in tape.inputs.iter().enumerate() {
        if a.ncols() != params.widths[l] {
            return Err(NerdfError::Structural(format!("tape layer {l} width mismatch")));
        }
    }

    let Tape { inputs, pre } = tape;
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);

    // gradient w.r.t. the output of the current layer
    let mut grad_out = output_grad.to_owned();
    for l in (0..layers).rev() {
        let grad_z = if l + 1 == layers {
            grad_out.clone()
        } else {
            let mut gz = grad_out.clone();
            Zip::from(&mut gz).and(&pre[l]).for_each(|g, &z| {
                if z <= T::zero() {
                    *g = T::zero();
                }
            });
            gz
        };
        weights.push(grad_z.t().dot(&inputs[l]));
        biases.push(grad_z.sum_axis(Axis(0)));
        if l == 0 && !want_input_grad {
            break;
        }
        let mut grad_in = grad_z.dot(&params.weights[l]);
        if l + 1 < layers && params.residual[l] {
            grad_in += &grad_out;
        }
        grad_out = grad_in;
    }
    weights.reverse();
    biases.reverse();
    let input_grad = want_input_grad.then_some(grad_out);
    Ok((MlpGrads { weights, biases }, input_grad))
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: MlpGrads<T>,
    pub v: MlpGrads<T>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

pub const DEFAULT_LR: f64 = 5e-4;

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &MlpParams<T>, lr: f64) -> Self {
        Self {
            m: MlpGrads::zeros_like(params),
            v: MlpGrads::zeros_like(params),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort before any change.
pub fn adam_step<T: Scalar>(params: &mut MlpParams<T>, grads: &MlpGrads<T>, state: &mut AdamState<T>) -> Result<()> {
    if grads.weights.len() != params.weights.len()
        || grads
            .weights
            .iter()
            .zip(&params.weights)
            .any(|(g, w)| g.dim() != w.dim())
    {
        return Err(NerdfError::Structural("gradient shapes do not match parameters".into()));
    }
    if !grads.all_finite() {
        return Err(NerdfError::Divergence {
            iteration: state.step,
            batch_seed: 0,
            detail: "non-finite gradient".into(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of(state.beta1);
    let b2 = T::of(state.beta2);
    let one = T::one();
    let c1 = T::of(1.0 - state.beta1.powi(t));
    let c2 = T::of(1.0 - state.beta2.powi(t));
    let lr = T::of(state.lr);
    let eps = T::of(state.eps);

    let update = |p: &mut T, m: &mut T, v: &mut T, g: T| {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    };
    for l in 0..params.weights.len() {
        Zip::from(&mut params.weights[l])
            .and(&mut state.m.weights[l])
            .and(&mut state.v.weights[l])
            .and(&grads.weights[l])
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut params.biases[l])
            .and(&mut state.m.biases[l])
            .and(&mut state.v.biases[l])
            .and(&grads.biases[l])
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(depth: usize, width: usize, residual: bool, seed: u64) -> MlpParams<f64> {
        let spec = MlpSpec {
            input: 5,
            depth,
            width,
            output: 3,
            residual,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = MlpParams::<f64>::init(&spec, &mut rng).unwrap();
        // non-zero biases exercise every gradient path
        for b in p.biases.iter_mut() {
            b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        p
    }

    #[test]
    fn identity_hidden_layer_on_nonnegative_input() {
        let w_out = array![[1.0, 2.0], [-1.0, 0.5]];
        let p = MlpParams::from_parts(
            vec![2, 2, 2],
            vec![false],
            vec![Array2::eye(2), w_out.clone()],
            vec![Array1::zeros(2), Array1::zeros(2)],
        )
        .unwrap();
        let x = array![[0.3, 1.5]];
        let (y, tape) = mlp_forward(&p, x.view(), false).unwrap();
        assert!(tape.is_none());
        assert_eq!(y, x.dot(&w_out.t()));
    }

    #[test]
    fn constant_network() {
        let b = array![0.1, -2.0, 7.0];
        let p = MlpParams::from_parts(
            vec![4, 6, 3],
            vec![false],
            vec![Array2::zeros((6, 4)), Array2::zeros((3, 6))],
            vec![Array1::zeros(6), b.clone()],
        )
        .unwrap();
        let (y, _) = mlp_forward(&p, array![[1.0, -3.0, 2.0, 9.0]].view(), false).unwrap();
        assert_eq!(y.row(0), b);
    }

    #[test]
    fn recording_does_not_change_output() {
        let p = tiny(3, 8, true, 1);
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i as f64 - j as f64) * 0.1);
        let (a, ta) = mlp_forward(&p, x.view(), false).unwrap();
        let (b, tb) = mlp_forward(&p, x.view(), true).unwrap();
        assert!(ta.is_none() && tb.is_some());
        assert_eq!(a, b);
        assert_eq!(p.forward_rows(), 8);
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let p = tiny(2, 4, false, 0);
        let x = Array2::<f64>::zeros((1, 4));
        assert!(matches!(mlp_forward(&p, x.view(), false), Err(NerdfError::Structural(_))));
    }

    #[test]
    fn residual_requires_equal_widths() {
        let r = MlpParams::<f64>::from_parts(
            vec![2, 3, 1],
            vec![true],
            vec![Array2::zeros((3, 2)), Array2::zeros((1, 3))],
            vec![Array1::zeros(3), Array1::zeros(1)],
        );
        assert!(r.is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let p = tiny(2, 6, true, 2);
        let x = Array2::from_elem((3, 5), 0.2);
        let (_, tape) = mlp_forward(&p, x.view(), true).unwrap();
        let (g, gi) = mlp_backward(&p, tape.unwrap(), Array2::zeros((3, 3)).view(), true).unwrap();
        assert!(g.values().all(|v| *v == 0.0));
        assert!(gi.unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_layer_square_loss_closed_form() {
        let spec = MlpSpec {
            input: 3,
            depth: 0,
            width: 0,
            output: 1,
            residual: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = MlpParams::<f64>::init(&spec, &mut rng).unwrap();
        let x = array![[0.5, -1.0, 2.0]];
        let (y, tape) = mlp_forward(&p, x.view(), true).unwrap();
        let out = y[[0, 0]];
        let (g, _) = mlp_backward(&p, tape.unwrap(), array![[2.0 * out]].view(), false).unwrap();
        for j in 0..3 {
            assert!((g.weights[0][[0, j]] - 2.0 * out * x[[0, j]]).abs() < 1e-14);
        }
        assert!((g.biases[0][0] - 2.0 * out).abs() < 1e-14);
    }

    /// Central differences on `loss = sum(c .* f(x))` for random `c`.
    fn check_gradients(p: &MlpParams<f64>, rows: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((rows, p.input_dim()), |_| rng.random_range(-1.0..1.0));
        let c = Array2::from_shape_fn((rows, p.output_dim()), |_| rng.random_range(-1.0..1.0));
        let loss = |q: &MlpParams<f64>, x: &Array2<f64>| (mlp_infer(q, x.view()).unwrap() * &c).sum();

        let (_, tape) = mlp_forward(p, x.view(), true).unwrap();
        let (g, gi) = mlp_backward(p, tape.unwrap(), c.view(), true).unwrap();
        let analytic: Vec<f64> = g.values().copied().collect();

        let h = 1e-4;
        let mut worst = 0.0f64;
        let n = p.param_count();
        for i in 0..n {
            let mut plus = p.clone();
            *plus.values_mut().nth(i).unwrap() += h;
            let mut minus = p.clone();
            *minus.values_mut().nth(i).unwrap() -= h;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
            worst = worst.max(relative_error(analytic[i], fd));
        }
        let gi = gi.unwrap();
        for r in 0..rows {
            for j in 0..p.input_dim() {
                let mut xp = x.clone();
                xp[[r, j]] += h;
                let mut xm = x.clone();
                xm[[r, j]] -= h;
                let fd = (loss(p, &xp) - loss(p, &xm)) / (2.0 * h);
                worst = worst.max(relative_error(gi[[r, j]], fd));
            }
        }
        worst
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_central_differences() {
        for (depth, width, residual, seed) in [(1, 16, false, 1), (2, 16, true, 2), (3, 16, true, 3), (3, 7, false, 4)] {
            let p = tiny(depth, width, residual, seed);
            let err = check_gradients(&p, 4, seed + 100);
            assert!(err <= 1e-4, "depth {depth} width {width}: rel err {err}");
        }
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut p = tiny(2, 4, false, 5);
        let before = p.clone();
        let mut st = AdamState::new(&p, DEFAULT_LR);
        let zero = MlpGrads::zeros_like(&p);
        adam_step(&mut p, &zero, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = tiny(1, 4, false, 6);
        let before = p.clone();
        let mut g = MlpGrads::zeros_like(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for w in g.weights.iter_mut() {
            w.mapv_inplace(|_| rng.random_range(-2.0..2.0));
        }
        let mut st = AdamState::new(&p, DEFAULT_LR);
        adam_step(&mut p, &g, &mut st).unwrap();
        for ((a, b), gv) in p.values().zip(before.values()).zip(g.values()) {
            let expect = if *gv == 0.0 { 0.0 } else { -DEFAULT_LR * gv.signum() };
            assert!((a - b - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = tiny(1, 4, false, 7);
        let mut g = MlpGrads::zeros_like(&p);
        g.biases[0][0] = f64::NAN;
        let before = p.clone();
        let mut st = AdamState::new(&p, DEFAULT_LR);
        assert!(matches!(adam_step(&mut p, &g, &mut st), Err(NerdfError::Divergence { .. })));
        assert_eq!(p, before);
    }

    fn regression_run(seed: u64) -> (MlpParams<f32>, Vec<f32>) {
        let spec = MlpSpec {
            input: 4,
            depth: 0,
            width: 0,
            output: 2,
            residual: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = MlpParams::<f32>::init(&spec, &mut rng).unwrap();
        let x = Array2::from_shape_fn((32, 4), |_| rng.random_range(-1.0f32..1.0));
        let w_true = Array2::from_shape_fn((2, 4), |_| rng.random_range(-1.0f32..1.0));
        let y = x.dot(&w_true.t());
        let mut st = AdamState::new(&p, DEFAULT_LR);
        let mut losses = Vec::new();
        for _ in 0..100 {
            let (out, tape) = mlp_forward(&p, x.view(), true).unwrap();
            let diff = &out - &y;
            losses.push(diff.mapv(|v| v * v).sum() / 32.0);
            let grad = diff * (2.0 / 32.0);
            let (g, _) = mlp_backward(&p, tape.unwrap(), grad.view(), false).unwrap();
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        (p, losses)
    }

    #[test]
    fn convex_probe_loss_non_increasing() {
        let (_, losses) = regression_run(3);
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "{} -> {}", w[0], w[1]);
        }
        assert!(losses.last() < losses.first());
    }

    #[test]
    fn adam_runs_are_deterministic() {
        let (a, la) = regression_run(4);
        let (b, lb) = regression_run(4);
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn concurrent_forwards_match_serial() {
        let p = tiny(3, 16, true, 8).cast::<f32>();
        let x = Array2::from_shape_fn((16, 5), |(i, j)| ((i * 7 + j) % 11) as f32 * 0.1);
        let serial = mlp_infer(&p, x.view()).unwrap();
        let outs: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..4).map(|_| s.spawn(|| mlp_infer(&p, x.view()).unwrap())).collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for o in outs {
            assert_eq!(o, serial);
        }
    }
}
