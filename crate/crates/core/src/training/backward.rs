//! Exact reverse-mode differentiation through the unrolled estimator.
//!
//! The forward pass records every intermediate activation per timestep and
//! node; the backward pass walks time in reverse, accumulating parameter
//! gradients and carrying state adjoints across steps. Messages couple
//! nodes, so a node's state adjoint collects contributions from its own
//! recurrence, from the output head, and from every edge its message
//! traveled along at the next step.

use crate::kinematics::ParentArray;
use crate::math::Quat;
use crate::net::{
    compute_messages, gather_input, normalize_output, GruCell, GruTrace, LayerNorm, Linear,
    NetError, RingParams, RingState, OUTPUT_NORM_FLOOR,
};
use crate::rcmg::{InputSeries, QuatSeries, INPUT_CHANNELS};

/// Everything a backward pass needs from one node's step.
pub(crate) struct NodeTrace {
    /// GRU-one input `[parent msg | children msg | x]`.
    u: Vec<f64>,
    gru1: GruTrace,
    xhat1: Vec<f64>,
    rstd1: f64,
    /// Layer-normed first state, the second cell's input.
    y1: Vec<f64>,
    gru2: GruTrace,
    xhat_out: Vec<f64>,
    rstd_out: f64,
    /// Output-head layer-norm result (head MLP input).
    yq: Vec<f64>,
    /// Head hidden layer, post-tanh.
    hq: Vec<f64>,
    norm_sq: f64,
    yhat: Quat,
    /// Message-MLP hidden layer, post-tanh (input was the previous h2).
    msg_hidden: Vec<f64>,
}

pub(crate) struct SequenceTrace {
    /// `T + 1` states; entry 0 is the (constant) initial state.
    pub(crate) states: Vec<RingState>,
    steps: Vec<Vec<NodeTrace>>,
    pub outputs: QuatSeries,
}

fn tanh_vec(mut v: Vec<f64>) -> Vec<f64> {
    for x in v.iter_mut() {
        *x = x.tanh();
    }
    v
}

/// Forward pass that records all intermediates. Matches `ring_apply_from`
/// bit for bit.
pub(crate) fn forward_traced(
    params: &RingParams,
    initial: RingState,
    x: &InputSeries,
    parents: &ParentArray,
) -> Result<SequenceTrace, NetError> {
    let n = parents.len();
    let t_count = x.timesteps();
    let mut states = Vec::with_capacity(t_count + 1);
    states.push(initial);
    let mut steps = Vec::with_capacity(t_count);
    let mut outputs = QuatSeries::identity(t_count, n);

    for t in 0..t_count {
        let state = &states[t];
        let msgs = compute_messages(params, state);
        let mut next = RingState::zeros(n, params.hidden);
        let mut node_traces = Vec::with_capacity(n);
        for node in 0..n {
            let x_row = &x.step(t)[node * INPUT_CHANNELS..(node + 1) * INPUT_CHANNELS];
            let u = gather_input(params, parents, &msgs, x_row, node);
            let (h1_new, gru1) = params.gru1.forward_traced(state.h1(node), &u);
            let (y1, xhat1, rstd1) = params.ln1.forward_traced(&h1_new);
            let (h2_new, gru2) = params.gru2.forward_traced(state.h2(node), &y1);
            let (yq, xhat_out, rstd_out) = params.ln_out.forward_traced(&h2_new);
            let hq = tanh_vec(params.head.l1.apply(&yq));
            let y_tilde_v = params.head.l2.apply(&hq);
            let y_tilde = [y_tilde_v[0], y_tilde_v[1], y_tilde_v[2], y_tilde_v[3]];
            let norm_sq: f64 = y_tilde.iter().map(|v| v * v).sum();
            let yhat = normalize_output(&y_tilde);
            outputs.set(t, node, yhat);
            next.h1_mut(node).copy_from_slice(&h1_new);
            next.h2_mut(node).copy_from_slice(&h2_new);
            // The message MLP hidden layer, re-derived so the backward pass
            // does not need to re-run the linear.
            let msg_hidden = tanh_vec(params.msg.l1.apply(state.h2(node)));
            node_traces.push(NodeTrace {
                u,
                gru1,
                xhat1,
                rstd1,
                y1,
                gru2,
                xhat_out,
                rstd_out,
                yq,
                hq,
                norm_sq,
                yhat,
                msg_hidden,
            });
        }
        if !next.is_finite() {
            return Err(NetError::NonFinite { step: t });
        }
        states.push(next);
        steps.push(node_traces);
    }
    Ok(SequenceTrace { states, steps, outputs })
}

// ─── Gradient primitives ─────────────────────────────────────────────────────

/// `out += W^T g` for a row-major `rows x cols` matrix.
fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, g: &[f64], out: &mut [f64]) {
    debug_assert_eq!(g.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for r in 0..rows {
        let gr = g[r];
        if gr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += wv * gr;
        }
    }
}

/// `gw += g x^T`, `gb += g` for a linear layer gradient.
fn linear_grad_acc(grad: &mut Linear, g: &[f64], x: &[f64]) {
    debug_assert_eq!(g.len(), grad.rows);
    debug_assert_eq!(x.len(), grad.cols);
    for r in 0..grad.rows {
        let gr = g[r];
        grad.b[r] += gr;
        if gr == 0.0 {
            continue;
        }
        let row = &mut grad.w[r * grad.cols..(r + 1) * grad.cols];
        for (wv, xv) in row.iter_mut().zip(x) {
            *wv += gr * xv;
        }
    }
}

/// Layer-norm backward: given `dL/d out`, accumulate parameter gradients and
/// add `dL/d x` into `g_x`.
fn layer_norm_backward(
    ln: &LayerNorm,
    grad: &mut LayerNorm,
    xhat: &[f64],
    rstd: f64,
    g_out: &[f64],
    g_x: &mut [f64],
) {
    let n = xhat.len();
    let nf = n as f64;
    let mut mean_g = 0.0;
    let mut mean_gx = 0.0;
    // g wrt the normalized value.
    let g_hat: Vec<f64> = g_out.iter().zip(&ln.gain).map(|(g, gain)| g * gain).collect();
    for i in 0..n {
        grad.gain[i] += g_out[i] * xhat[i];
        grad.offset[i] += g_out[i];
        mean_g += g_hat[i];
        mean_gx += g_hat[i] * xhat[i];
    }
    mean_g /= nf;
    mean_gx /= nf;
    for i in 0..n {
        g_x[i] += rstd * (g_hat[i] - mean_g - xhat[i] * mean_gx);
    }
}

/// GRU backward: given `dL/d h_new`, accumulate weight gradients and add the
/// input and previous-state adjoints into `g_x` and `g_h_prev`.
#[allow(clippy::too_many_arguments)]
fn gru_backward(
    cell: &GruCell,
    grad: &mut GruCell,
    h_prev: &[f64],
    x: &[f64],
    trace: &GruTrace,
    g_h_new: &[f64],
    g_x: &mut [f64],
    g_h_prev: &mut [f64],
) {
    let h = cell.hidden;
    let GruTrace { r, z, n } = trace;

    // h_new = (1 - z) n + z h_prev
    let mut g_n = vec![0.0; h];
    let mut g_z = vec![0.0; h];
    for i in 0..h {
        g_n[i] = g_h_new[i] * (1.0 - z[i]);
        g_z[i] = g_h_new[i] * (h_prev[i] - n[i]);
        g_h_prev[i] += g_h_new[i] * z[i];
    }

    // n = tanh(W_n x + U_n (r . h_prev) + b)
    let g_n_pre: Vec<f64> = g_n.iter().zip(n).map(|(g, ni)| g * (1.0 - ni * ni)).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(ri, hi)| ri * hi).collect();
    linear_grad_acc(&mut grad.w_n, &g_n_pre, x);
    linear_grad_acc(&mut grad.u_n, &g_n_pre, &rh);
    matvec_t_acc(&cell.w_n.w, h, cell.input, &g_n_pre, g_x);
    let mut g_rh = vec![0.0; h];
    matvec_t_acc(&cell.u_n.w, h, h, &g_n_pre, &mut g_rh);
    let mut g_r = vec![0.0; h];
    for i in 0..h {
        g_r[i] = g_rh[i] * h_prev[i];
        g_h_prev[i] += g_rh[i] * r[i];
    }

    // z = sigmoid(W_z x + U_z h_prev + b)
    let g_z_pre: Vec<f64> = g_z.iter().zip(z).map(|(g, zi)| g * zi * (1.0 - zi)).collect();
    linear_grad_acc(&mut grad.w_z, &g_z_pre, x);
    linear_grad_acc(&mut grad.u_z, &g_z_pre, h_prev);
    matvec_t_acc(&cell.w_z.w, h, cell.input, &g_z_pre, g_x);
    matvec_t_acc(&cell.u_z.w, h, h, &g_z_pre, g_h_prev);

    // r = sigmoid(W_r x + U_r h_prev + b)
    let g_r_pre: Vec<f64> = g_r.iter().zip(r).map(|(g, ri)| g * ri * (1.0 - ri)).collect();
    linear_grad_acc(&mut grad.w_r, &g_r_pre, x);
    linear_grad_acc(&mut grad.u_r, &g_r_pre, h_prev);
    matvec_t_acc(&cell.w_r.w, h, cell.input, &g_r_pre, g_x);
    matvec_t_acc(&cell.u_r.w, h, h, &g_r_pre, g_h_prev);
}

// ─── Backward through the unroll ─────────────────────────────────────────────

/// Accumulate parameter gradients for one traced sequence given
/// `dL/d yhat[t, node]` (gradients with respect to the *normalized*
/// outputs). The initial state is treated as constant.
pub(crate) fn backward_traced(
    params: &RingParams,
    trace: &SequenceTrace,
    parents: &ParentArray,
    g_outputs: &[[f64; 4]],
    grads: &mut RingParams,
) {
    let n = parents.len();
    let h = params.hidden;
    let m = params.message;
    let t_count = trace.steps.len();
    debug_assert_eq!(g_outputs.len(), t_count * n);

    // Adjoints of the state halves entering the current (reverse) step:
    // dL/d h1_t and dL/d h2_t from everything later than t.
    let mut carry_h1 = vec![vec![0.0; h]; n];
    let mut carry_h2 = vec![vec![0.0; h]; n];

    for t in (0..t_count).rev() {
        let prev_state = &trace.states[t];
        let node_traces = &trace.steps[t];
        // Message adjoints for this step, filled while walking the nodes.
        let mut g_msgs = vec![vec![0.0; m]; n];
        let mut next_carry_h1 = vec![vec![0.0; h]; n];
        let mut next_carry_h2 = vec![vec![0.0; h]; n];

        for node in 0..n {
            let nt = &node_traces[node];

            // Output head: normalization, MLP, layer norm.
            let g_yhat = &g_outputs[t * n + node];
            let mut g_h2 = std::mem::take(&mut carry_h2[node]);
            if nt.norm_sq > OUTPUT_NORM_FLOOR
                && g_yhat.iter().any(|&v| v != 0.0)
            {
                let norm = nt.norm_sq.sqrt();
                let yh = [nt.yhat.w, nt.yhat.x, nt.yhat.y, nt.yhat.z];
                let radial: f64 = yh.iter().zip(g_yhat).map(|(a, b)| a * b).sum();
                let g_tilde: Vec<f64> =
                    yh.iter().zip(g_yhat).map(|(y, g)| (g - y * radial) / norm).collect();
                linear_grad_acc(&mut grads.head.l2, &g_tilde, &nt.hq);
                let mut g_hq = vec![0.0; h];
                matvec_t_acc(&params.head.l2.w, 4, h, &g_tilde, &mut g_hq);
                let g_pre: Vec<f64> =
                    g_hq.iter().zip(&nt.hq).map(|(g, v)| g * (1.0 - v * v)).collect();
                linear_grad_acc(&mut grads.head.l1, &g_pre, &nt.yq);
                let mut g_yq = vec![0.0; h];
                matvec_t_acc(&params.head.l1.w, h, h, &g_pre, &mut g_yq);
                layer_norm_backward(
                    &params.ln_out,
                    &mut grads.ln_out,
                    &nt.xhat_out,
                    nt.rstd_out,
                    &g_yq,
                    &mut g_h2,
                );
            }

            // Second GRU: state h2, input y1.
            let mut g_y1 = vec![0.0; h];
            gru_backward(
                &params.gru2,
                &mut grads.gru2,
                prev_state.h2(node),
                &nt.y1,
                &nt.gru2,
                &g_h2,
                &mut g_y1,
                &mut next_carry_h2[node],
            );

            // Layer norm between the cells.
            let mut g_h1 = std::mem::take(&mut carry_h1[node]);
            layer_norm_backward(
                &params.ln1,
                &mut grads.ln1,
                &nt.xhat1,
                nt.rstd1,
                &g_y1,
                &mut g_h1,
            );

            // First GRU: state h1, input u.
            let mut g_u = vec![0.0; 2 * m + INPUT_CHANNELS];
            gru_backward(
                &params.gru1,
                &mut grads.gru1,
                prev_state.h1(node),
                &nt.u,
                &nt.gru1,
                &g_h1,
                &mut g_u,
                &mut next_carry_h1[node],
            );

            // Scatter the input adjoint back onto the message senders. The
            // trailing X block is an input, not a parameter: dropped.
            if m > 0 {
                if let Some(p) = parents.parent_node(node) {
                    for (dst, src) in g_msgs[p].iter_mut().zip(&g_u[..m]) {
                        *dst += src;
                    }
                }
                for child in 0..n {
                    if parents.parent_node(child) == Some(node) {
                        for (dst, src) in g_msgs[child].iter_mut().zip(&g_u[m..2 * m]) {
                            *dst += src;
                        }
                    }
                }
            }
        }

        // Messages were computed from h2 at t-1 (the entry state of this
        // step); their adjoints flow into the previous step's carry.
        for node in 0..n {
            if g_msgs[node].iter().all(|&v| v == 0.0) {
                continue;
            }
            let nt = &node_traces[node];
            linear_grad_acc(&mut grads.msg.l2, &g_msgs[node], &nt.msg_hidden);
            let mut g_mh = vec![0.0; h];
            matvec_t_acc(&params.msg.l2.w, m, h, &g_msgs[node], &mut g_mh);
            let g_mpre: Vec<f64> =
                g_mh.iter().zip(&nt.msg_hidden).map(|(g, v)| g * (1.0 - v * v)).collect();
            linear_grad_acc(&mut grads.msg.l1, &g_mpre, prev_state.h2(node));
            matvec_t_acc(&params.msg.l1.w, h, h, &g_mpre, &mut next_carry_h2[node]);
        }

        carry_h1 = next_carry_h1;
        carry_h2 = next_carry_h2;
    }
    // Adjoints of the initial state are discarded: it is the zero constant.
}
