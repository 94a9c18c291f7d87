//! The graph-based recurrent orientation estimator.
//!
//! One set of parameters is shared by every node of the graph; the step
//! function maps the previous per-node hidden state and the per-node input
//! row to the next state and one unit quaternion per node:
//!
//! 1. every node computes an outgoing message from the upper GRU half of its
//!    previous state through the message MLP;
//! 2. messages travel along the edges: a node receives its parent's message
//!    and the sum of its children's messages (zero vectors at the earth
//!    frame and at leaves);
//! 3. the stacked recurrence updates the state: GRU cell one consumes
//!    `[parent msg | children msg | input]`, a layer norm of its new state
//!    feeds GRU cell two;
//! 4. the output head (layer norm, then a small MLP) maps the second GRU
//!    state to four numbers;
//! 5. each output row is normalized to a unit quaternion (zero rows map to
//!    the identity).
//!
//! The per-node input row is 10 wide (gyro, accelerometer, joint axis,
//! inverse sampling rate), so cell one's input width is `2 M + 10`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kinematics::ParentArray;
use crate::math::Quat;
use crate::rcmg::{InputSeries, QuatSeries, INPUT_CHANNELS};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Output rows with squared norm at or below this map to the identity.
pub(crate) const OUTPUT_NORM_FLOOR: f64 = 1e-24;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("{what}: expected {expected}, got {got}")]
    WidthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("state became non-finite at step {step}")]
    NonFinite { step: usize },
}

// ─── Layers ──────────────────────────────────────────────────────────────────

/// Dense layer `y = W x + b`, `W` stored row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub(crate) w: Vec<f64>,
    pub(crate) b: Vec<f64>,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Self {
        let bound = if cols > 0 { (1.0 / cols as f64).sqrt() } else { 0.0 };
        let w = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { w, b: vec![0.0; rows], rows, cols }
    }

    fn zeros(rows: usize, cols: usize) -> Self {
        Self { w: vec![0.0; rows * cols], b: vec![0.0; rows], rows, cols }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = self.b.clone();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }
}

/// Gated recurrent cell (reset gate applied inside the candidate's
/// recurrent term): `h' = (1 - z) n + z h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub(crate) w_r: Linear,
    pub(crate) u_r: Linear,
    pub(crate) w_z: Linear,
    pub(crate) u_z: Linear,
    pub(crate) w_n: Linear,
    pub(crate) u_n: Linear,
    // Gate biases live on the input-side linears; the recurrent linears
    // carry zero bias so each gate has exactly one bias vector.
    pub(crate) hidden: usize,
    pub(crate) input: usize,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate gate activations of one GRU evaluation, kept for
/// backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct GruTrace {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
}

impl GruCell {
    fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        Self {
            w_r: Linear::init(rng, hidden, input),
            u_r: Linear::init(rng, hidden, hidden),
            w_z: Linear::init(rng, hidden, input),
            u_z: Linear::init(rng, hidden, hidden),
            w_n: Linear::init(rng, hidden, input),
            u_n: Linear::init(rng, hidden, hidden),
            hidden,
            input,
        }
    }

    pub(crate) fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_r: Linear::zeros(hidden, input),
            u_r: Linear::zeros(hidden, hidden),
            w_z: Linear::zeros(hidden, input),
            u_z: Linear::zeros(hidden, hidden),
            w_n: Linear::zeros(hidden, input),
            u_n: Linear::zeros(hidden, hidden),
            hidden,
            input,
        }
    }

    /// Standard update; returns the new hidden state.
    pub fn forward(&self, h: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward_traced(h, x).0
    }

    pub(crate) fn forward_traced(&self, h: &[f64], x: &[f64]) -> (Vec<f64>, GruTrace) {
        debug_assert_eq!(h.len(), self.hidden);
        debug_assert_eq!(x.len(), self.input);
        let mut r = self.w_r.apply(x);
        for (ri, ui) in r.iter_mut().zip(self.u_r.apply(h)) {
            *ri = sigmoid(*ri + ui);
        }
        let mut z = self.w_z.apply(x);
        for (zi, ui) in z.iter_mut().zip(self.u_z.apply(h)) {
            *zi = sigmoid(*zi + ui);
        }
        let rh: Vec<f64> = r.iter().zip(h).map(|(ri, hi)| ri * hi).collect();
        let mut n = self.w_n.apply(x);
        for (ni, ui) in n.iter_mut().zip(self.u_n.apply(&rh)) {
            *ni = (*ni + ui).tanh();
        }
        let out: Vec<f64> = n
            .iter()
            .zip(&z)
            .zip(h)
            .map(|((ni, zi), hi)| (1.0 - zi) * ni + zi * hi)
            .collect();
        (out, GruTrace { r, z, n })
    }
}

/// Layer normalization over the feature dimension with learned gain and
/// offset: `(x - mean) / sqrt(var + eps) * gain + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub(crate) gain: Vec<f64>,
    pub(crate) offset: Vec<f64>,
}

impl LayerNorm {
    fn init(width: usize) -> Self {
        Self { gain: vec![1.0; width], offset: vec![0.0; width] }
    }

    fn zeros(width: usize) -> Self {
        Self { gain: vec![0.0; width], offset: vec![0.0; width] }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_traced(x).0
    }

    /// Returns `(output, normalized-input, inverse-std)` for backprop.
    pub(crate) fn forward_traced(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * rstd).collect();
        let out: Vec<f64> =
            xhat.iter().zip(&self.gain).zip(&self.offset).map(|((h, g), o)| h * g + o).collect();
        (out, xhat, rstd)
    }
}

/// Two dense layers with a tanh between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub(crate) l1: Linear,
    pub(crate) l2: Linear,
}

impl Mlp {
    fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize, output: usize) -> Self {
        Self { l1: Linear::init(rng, hidden, input), l2: Linear::init(rng, output, hidden) }
    }

    fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self { l1: Linear::zeros(hidden, input), l2: Linear::zeros(output, hidden) }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = self.l1.apply(x).into_iter().map(f64::tanh).collect();
        self.l2.apply(&hidden)
    }
}

// ─── Parameters ──────────────────────────────────────────────────────────────

/// All weights of the estimator, shared across nodes. `hidden` is the state
/// width of each GRU cell (the full per-node state is `2 * hidden`);
/// `message` is the width of the per-edge messages.
#[derive(Debug, Clone, PartialEq)]
pub struct RingParams {
    pub hidden: usize,
    pub message: usize,
    /// Message MLP, GRU-two state to message.
    pub(crate) msg: Mlp,
    /// First GRU cell, input `[parent | children | x]` of width `2 M + 10`.
    pub(crate) gru1: GruCell,
    /// Layer norm between the cells.
    pub(crate) ln1: LayerNorm,
    /// Second GRU cell, input is the normalized first state.
    pub(crate) gru2: GruCell,
    /// Output head: layer norm then MLP to four numbers.
    pub(crate) ln_out: LayerNorm,
    pub(crate) head: Mlp,
}

impl RingParams {
    /// Variance-scaled uniform initialization, biases zero, deterministic in
    /// `seed`.
    pub fn init(hidden: usize, message: usize, seed: u64) -> Self {
        assert!(hidden >= 1, "hidden width must be at least 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gru_in = 2 * message + INPUT_CHANNELS;
        Self {
            hidden,
            message,
            msg: Mlp::init(&mut rng, hidden, hidden, message),
            gru1: GruCell::init(&mut rng, gru_in, hidden),
            ln1: LayerNorm::init(hidden),
            gru2: GruCell::init(&mut rng, hidden, hidden),
            ln_out: LayerNorm::init(hidden),
            head: Mlp::init(&mut rng, hidden, hidden, 4),
        }
    }

    /// Same shapes, all zeros: the container for gradients and moments.
    pub fn zeros_like(hidden: usize, message: usize) -> Self {
        let gru_in = 2 * message + INPUT_CHANNELS;
        Self {
            hidden,
            message,
            msg: Mlp::zeros(hidden, hidden, message),
            gru1: GruCell::zeros(gru_in, hidden),
            ln1: LayerNorm::zeros(hidden),
            gru2: GruCell::zeros(hidden, hidden),
            ln_out: LayerNorm::zeros(hidden),
            head: Mlp::zeros(hidden, hidden, 4),
        }
    }

    /// Named tensors in the fixed traversal order used by persistence and
    /// the optimizer.
    pub fn tensors(&self) -> Vec<(&'static str, &Vec<f64>, Vec<usize>)> {
        let (h, m) = (self.hidden, self.message);
        let gi = self.gru1.input;
        vec![
            ("msg.l1.w", &self.msg.l1.w, vec![h, h]),
            ("msg.l1.b", &self.msg.l1.b, vec![h]),
            ("msg.l2.w", &self.msg.l2.w, vec![m, h]),
            ("msg.l2.b", &self.msg.l2.b, vec![m]),
            ("gru1.w_r.w", &self.gru1.w_r.w, vec![h, gi]),
            ("gru1.w_r.b", &self.gru1.w_r.b, vec![h]),
            ("gru1.u_r.w", &self.gru1.u_r.w, vec![h, h]),
            ("gru1.u_r.b", &self.gru1.u_r.b, vec![h]),
            ("gru1.w_z.w", &self.gru1.w_z.w, vec![h, gi]),
            ("gru1.w_z.b", &self.gru1.w_z.b, vec![h]),
            ("gru1.u_z.w", &self.gru1.u_z.w, vec![h, h]),
            ("gru1.u_z.b", &self.gru1.u_z.b, vec![h]),
            ("gru1.w_n.w", &self.gru1.w_n.w, vec![h, gi]),
            ("gru1.w_n.b", &self.gru1.w_n.b, vec![h]),
            ("gru1.u_n.w", &self.gru1.u_n.w, vec![h, h]),
            ("gru1.u_n.b", &self.gru1.u_n.b, vec![h]),
            ("ln1.gain", &self.ln1.gain, vec![h]),
            ("ln1.offset", &self.ln1.offset, vec![h]),
            ("gru2.w_r.w", &self.gru2.w_r.w, vec![h, h]),
            ("gru2.w_r.b", &self.gru2.w_r.b, vec![h]),
            ("gru2.u_r.w", &self.gru2.u_r.w, vec![h, h]),
            ("gru2.u_r.b", &self.gru2.u_r.b, vec![h]),
            ("gru2.w_z.w", &self.gru2.w_z.w, vec![h, h]),
            ("gru2.w_z.b", &self.gru2.w_z.b, vec![h]),
            ("gru2.u_z.w", &self.gru2.u_z.w, vec![h, h]),
            ("gru2.u_z.b", &self.gru2.u_z.b, vec![h]),
            ("gru2.w_n.w", &self.gru2.w_n.w, vec![h, h]),
            ("gru2.w_n.b", &self.gru2.w_n.b, vec![h]),
            ("gru2.u_n.w", &self.gru2.u_n.w, vec![h, h]),
            ("gru2.u_n.b", &self.gru2.u_n.b, vec![h]),
            ("ln_out.gain", &self.ln_out.gain, vec![h]),
            ("ln_out.offset", &self.ln_out.offset, vec![h]),
            ("head.l1.w", &self.head.l1.w, vec![h, h]),
            ("head.l1.b", &self.head.l1.b, vec![h]),
            ("head.l2.w", &self.head.l2.w, vec![4, h]),
            ("head.l2.b", &self.head.l2.b, vec![4]),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.msg.l1.w,
            &mut self.msg.l1.b,
            &mut self.msg.l2.w,
            &mut self.msg.l2.b,
            &mut self.gru1.w_r.w,
            &mut self.gru1.w_r.b,
            &mut self.gru1.u_r.w,
            &mut self.gru1.u_r.b,
            &mut self.gru1.w_z.w,
            &mut self.gru1.w_z.b,
            &mut self.gru1.u_z.w,
            &mut self.gru1.u_z.b,
            &mut self.gru1.w_n.w,
            &mut self.gru1.w_n.b,
            &mut self.gru1.u_n.w,
            &mut self.gru1.u_n.b,
            &mut self.ln1.gain,
            &mut self.ln1.offset,
            &mut self.gru2.w_r.w,
            &mut self.gru2.w_r.b,
            &mut self.gru2.u_r.w,
            &mut self.gru2.u_r.b,
            &mut self.gru2.w_z.w,
            &mut self.gru2.w_z.b,
            &mut self.gru2.u_z.w,
            &mut self.gru2.u_z.b,
            &mut self.gru2.w_n.w,
            &mut self.gru2.w_n.b,
            &mut self.gru2.u_n.w,
            &mut self.gru2.u_n.b,
            &mut self.ln_out.gain,
            &mut self.ln_out.offset,
            &mut self.head.l1.w,
            &mut self.head.l1.b,
            &mut self.head.l2.w,
            &mut self.head.l2.b,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t, _)| t.len()).sum()
    }

    /// All parameters as one flat vector, in tensor traversal order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, t, _) in self.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for tensor in self.tensors_mut() {
            let len = tensor.len();
            tensor.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len(), "flat parameter vector has wrong length");
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t, _)| t.iter().all(|v| v.is_finite()))
    }

    /// Name of the first tensor containing a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .iter()
            .find(|(_, t, _)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _, _)| *name)
    }
}

// ─── State ───────────────────────────────────────────────────────────────────

/// Per-node hidden state, `N x 2H`: the first `H` of each row belongs to GRU
/// cell one, the second `H` to cell two. The initial state is all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct RingState {
    xi: Vec<f64>,
    nodes: usize,
    hidden: usize,
}

impl RingState {
    pub fn zeros(nodes: usize, hidden: usize) -> Self {
        Self { xi: vec![0.0; nodes * 2 * hidden], nodes, hidden }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn h1(&self, node: usize) -> &[f64] {
        let base = node * 2 * self.hidden;
        &self.xi[base..base + self.hidden]
    }

    pub fn h2(&self, node: usize) -> &[f64] {
        let base = node * 2 * self.hidden + self.hidden;
        &self.xi[base..base + self.hidden]
    }

    pub(crate) fn h1_mut(&mut self, node: usize) -> &mut [f64] {
        let base = node * 2 * self.hidden;
        &mut self.xi[base..base + self.hidden]
    }

    pub(crate) fn h2_mut(&mut self, node: usize) -> &mut [f64] {
        let base = node * 2 * self.hidden + self.hidden;
        &mut self.xi[base..base + self.hidden]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.xi
    }

    pub fn is_finite(&self) -> bool {
        self.xi.iter().all(|v| v.is_finite())
    }
}

// ─── Step function ───────────────────────────────────────────────────────────

/// Outgoing messages for every node, compiled from the previous state.
pub(crate) fn compute_messages(params: &RingParams, state: &RingState) -> Vec<Vec<f64>> {
    (0..state.nodes()).map(|i| params.msg.apply(state.h2(i))).collect()
}

/// Build GRU-one's input for `node`: `[parent msg | sum of children msgs | x]`.
pub(crate) fn gather_input(
    params: &RingParams,
    parents: &ParentArray,
    msgs: &[Vec<f64>],
    x_row: &[f64],
    node: usize,
) -> Vec<f64> {
    let m = params.message;
    let mut u = vec![0.0; 2 * m + INPUT_CHANNELS];
    if let Some(p) = parents.parent_node(node) {
        u[..m].copy_from_slice(&msgs[p]);
    }
    for j in 0..parents.len() {
        if parents.parent_node(j) == Some(node) {
            for (slot, v) in u[m..2 * m].iter_mut().zip(&msgs[j]) {
                *slot += v;
            }
        }
    }
    u[2 * m..].copy_from_slice(x_row);
    u
}

/// Normalize a four-vector to a unit quaternion; rows of effectively zero
/// norm map to the identity.
pub(crate) fn normalize_output(y: &[f64]) -> Quat {
    let sq: f64 = y.iter().map(|v| v * v).sum();
    if sq <= OUTPUT_NORM_FLOOR {
        return Quat::IDENTITY;
    }
    let k = 1.0 / sq.sqrt();
    Quat::new(y[0] * k, y[1] * k, y[2] * k, y[3] * k)
}

fn step_unchecked(
    params: &RingParams,
    state: &RingState,
    x_t: &[f64],
    parents: &ParentArray,
) -> (RingState, Vec<Quat>) {
    let n = parents.len();
    let msgs = compute_messages(params, state);
    let mut next = RingState::zeros(n, params.hidden);
    let mut outputs = Vec::with_capacity(n);
    for node in 0..n {
        let x_row = &x_t[node * INPUT_CHANNELS..(node + 1) * INPUT_CHANNELS];
        let u = gather_input(params, parents, &msgs, x_row, node);
        let h1_new = params.gru1.forward(state.h1(node), &u);
        let y1 = params.ln1.forward(&h1_new);
        let h2_new = params.gru2.forward(state.h2(node), &y1);
        let yq = params.ln_out.forward(&h2_new);
        let y_tilde = params.head.apply(&yq);
        outputs.push(normalize_output(&y_tilde));
        next.h1_mut(node).copy_from_slice(&h1_new);
        next.h2_mut(node).copy_from_slice(&h2_new);
    }
    (next, outputs)
}

/// One step of the estimator: previous state and the `N x 10` input row
/// block to the next state plus one unit quaternion per node.
pub fn ring_step(
    params: &RingParams,
    state: &RingState,
    x_t: &[f64],
    parents: &ParentArray,
) -> Result<(RingState, Vec<Quat>), NetError> {
    let n = parents.len();
    if state.nodes() != n {
        return Err(NetError::WidthMismatch { what: "state nodes", expected: n, got: state.nodes() });
    }
    if state.hidden() != params.hidden {
        return Err(NetError::WidthMismatch {
            what: "state hidden width",
            expected: params.hidden,
            got: state.hidden(),
        });
    }
    if x_t.len() != n * INPUT_CHANNELS {
        return Err(NetError::WidthMismatch {
            what: "input row block",
            expected: n * INPUT_CHANNELS,
            got: x_t.len(),
        });
    }
    let (next, outputs) = step_unchecked(params, state, x_t, parents);
    if !next.is_finite() {
        return Err(NetError::NonFinite { step: 0 });
    }
    Ok((next, outputs))
}

/// Unroll the step function over a whole sequence from the zero state.
pub fn ring_apply(
    x: &InputSeries,
    parents: &ParentArray,
    params: &RingParams,
) -> Result<QuatSeries, NetError> {
    let state = RingState::zeros(parents.len(), params.hidden);
    Ok(ring_apply_from(state, x, parents, params)?.1)
}

/// Unroll from an explicit state, returning the final state; splitting a
/// sequence and carrying the state across equals the unsplit unroll
/// bit-exactly.
pub fn ring_apply_from(
    mut state: RingState,
    x: &InputSeries,
    parents: &ParentArray,
    params: &RingParams,
) -> Result<(RingState, QuatSeries), NetError> {
    let n = parents.len();
    if x.nodes() != n {
        return Err(NetError::WidthMismatch { what: "input nodes", expected: n, got: x.nodes() });
    }
    if state.nodes() != n || state.hidden() != params.hidden {
        return Err(NetError::WidthMismatch {
            what: "state shape",
            expected: n * 2 * params.hidden,
            got: state.as_flat().len(),
        });
    }
    let t_count = x.timesteps();
    let mut y = QuatSeries::identity(t_count, n);
    for t in 0..t_count {
        let (next, outputs) = step_unchecked(params, &state, x.step(t), parents);
        if !next.is_finite() {
            return Err(NetError::NonFinite { step: t });
        }
        for (node, q) in outputs.into_iter().enumerate() {
            y.set(t, node, q);
        }
        state = next;
    }
    Ok((state, y))
}
