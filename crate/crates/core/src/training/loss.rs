//! Mean-squared orientation-error loss and its exact gradient with respect
//! to the (normalized) network outputs.
//!
//! Per kept timestep and node the loss term is the squared absolute angle
//! between prediction and target, in squared radians. For the base body
//! (earth parent) the angle is heading-free: only the tilt of the error
//! rotation counts, so the term is invariant to composing either quaternion
//! on the left with any rotation about world-up. Both forms are invariant
//! to sign flips of either quaternion.

use crate::kinematics::ParentArray;
use crate::math::Quat;
use crate::rcmg::QuatSeries;

use super::TrainError;

/// `acos(s) / sqrt(1 - s^2)`, series-stabilized at `s -> 1` where the ratio
/// tends to one.
fn acos_ratio(s: f64) -> f64 {
    if s > 1.0 - 1e-12 {
        1.0
    } else {
        s.acos() / (1.0 - s * s).sqrt()
    }
}

/// Squared full angle `(2 acos|<p, y>|)^2` and its gradient in `p`.
fn full_angle_sq(p: Quat, y: Quat) -> (f64, [f64; 4]) {
    let d = p.dot(y);
    let s = d.abs().clamp(0.0, 1.0);
    let theta = 2.0 * s.acos();
    let sign = if d >= 0.0 { 1.0 } else { -1.0 };
    let dds = -8.0 * acos_ratio(s) * sign;
    (theta * theta, [dds * y.w, dds * y.x, dds * y.y, dds * y.z])
}

/// Squared inclination angle of the error rotation `p * conj(y)` about
/// world-up, and its gradient in `p`.
///
/// With `e = p * conj(y)` unit-norm, the cosine of the tilt of the up axis
/// is `c = e_w^2 + e_z^2 - e_x^2 - e_y^2`. The `acos` slope diverges as the
/// tilt approaches 180 degrees, but on the singular set the gradient of `c`
/// is exactly radial in `e` (hence in `p`), which the output-normalization
/// backward pass projects away; the clamp below only prevents a literal
/// division by zero.
fn inclination_angle_sq(p: Quat, y: Quat) -> (f64, [f64; 4]) {
    let e = p.mul_raw(y.conj());
    let c_raw = e.w * e.w + e.z * e.z - e.x * e.x - e.y * e.y;
    let c = c_raw.clamp(-1.0 + 1e-12, 1.0);
    let theta = c.acos();
    let ddc = -2.0 * acos_ratio(c);
    // dc/de, then the adjoint of right-multiplication by conj(y), which for
    // a unit target is right-multiplication by y.
    let g_e = Quat::new(2.0 * ddc * e.w, -2.0 * ddc * e.x, -2.0 * ddc * e.y, 2.0 * ddc * e.z);
    let g_p = g_e.mul_raw(y);
    (theta * theta, [g_p.w, g_p.x, g_p.y, g_p.z])
}

fn term(p: Quat, y: Quat, base_body: bool) -> (f64, [f64; 4]) {
    if base_body {
        inclination_angle_sq(p, y)
    } else {
        full_angle_sq(p, y)
    }
}

/// Mean squared orientation error over `t >= warmup` and all nodes, in
/// squared radians.
pub fn orientation_loss(
    predicted: &QuatSeries,
    target: &QuatSeries,
    parents: &ParentArray,
    warmup: usize,
) -> Result<f64, TrainError> {
    check_shapes(predicted, target, parents, warmup)?;
    let (t_count, n) = (predicted.timesteps(), predicted.nodes());
    let kept = t_count - warmup;
    let mut sum = 0.0;
    for t in warmup..t_count {
        for node in 0..n {
            let base = parents.parent_node(node).is_none();
            sum += term(predicted.get(t, node), target.get(t, node), base).0;
        }
    }
    Ok(sum / (kept * n) as f64)
}

/// Loss plus `dL/d predicted` for every `(t, node)`; rows before `warmup`
/// get a zero gradient. `weight` scales both (pass `1 / (kept * n)` for the
/// mean).
///
/// Predictions are unit quaternions, so the returned gradients are projected
/// onto the tangent space at each prediction. The projection is idempotent
/// with the normalization backward and makes the gradient vanish exactly at
/// a perfect prediction.
pub(crate) fn loss_terms_and_grads(
    predicted: &QuatSeries,
    target: &QuatSeries,
    parents: &ParentArray,
    warmup: usize,
    weight: f64,
) -> (f64, Vec<[f64; 4]>) {
    let (t_count, n) = (predicted.timesteps(), predicted.nodes());
    let mut grads = vec![[0.0; 4]; t_count * n];
    let mut sum = 0.0;
    for t in warmup..t_count {
        for node in 0..n {
            let base = parents.parent_node(node).is_none();
            let p = predicted.get(t, node);
            let (value, g) = term(p, target.get(t, node), base);
            sum += value * weight;
            let ph = [p.w, p.x, p.y, p.z];
            let radial: f64 = ph.iter().zip(&g).map(|(a, b)| a * b).sum();
            let slot = &mut grads[t * n + node];
            for ((dst, gi), pi) in slot.iter_mut().zip(g).zip(ph) {
                *dst = (gi - pi * radial) * weight;
            }
        }
    }
    (sum, grads)
}

fn check_shapes(
    predicted: &QuatSeries,
    target: &QuatSeries,
    parents: &ParentArray,
    warmup: usize,
) -> Result<(), TrainError> {
    if predicted.timesteps() != target.timesteps()
        || predicted.nodes() != target.nodes()
        || predicted.nodes() != parents.len()
    {
        return Err(TrainError::ShapeMismatch {
            what: "loss operands",
            expected: target.timesteps() * target.nodes(),
            got: predicted.timesteps() * predicted.nodes(),
        });
    }
    if warmup >= predicted.timesteps() {
        return Err(TrainError::WarmupTooLong {
            warmup,
            timesteps: predicted.timesteps(),
        });
    }
    Ok(())
}
