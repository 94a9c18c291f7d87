//! Scalar-series filtering and resampling shared by the data generator and
//! the evaluation harness.
//!
//! Downsampling uses a zero-phase low-pass (a second-order Butterworth run
//! forward and then backward) followed by linear interpolation onto the new
//! grid. Zero phase matters: a phase-lagged gyroscope would break strapdown
//! reconstruction of the orientations it was synthesized from.

use crate::math::Quat;

/// Second-order IIR section in transposed direct form II.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    /// Butterworth low-pass via the bilinear transform. Requires
    /// `cutoff_hz < sample_rate_hz / 2`.
    pub fn butterworth_lowpass(cutoff_hz: f64, sample_rate_hz: f64) -> Biquad {
        assert!(
            cutoff_hz > 0.0 && cutoff_hz < 0.5 * sample_rate_hz,
            "cutoff {cutoff_hz} Hz out of range for fs {sample_rate_hz} Hz"
        );
        let k = (std::f64::consts::PI * cutoff_hz / sample_rate_hz).tan();
        let q = std::f64::consts::FRAC_1_SQRT_2;
        let norm = 1.0 / (1.0 + k / q + k * k);
        Biquad {
            b0: k * k * norm,
            b1: 2.0 * k * k * norm,
            b2: k * k * norm,
            a1: 2.0 * (k * k - 1.0) * norm,
            a2: (1.0 - k / q + k * k) * norm,
        }
    }

    /// Run the filter over `x`, initialized to the steady state of `x[0]` so
    /// that a constant series passes through unchanged (no startup step).
    pub fn filter_steady(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let x0 = x[0];
        let mut s1 = x0 * (self.b1 - self.a1 + self.b2 - self.a2);
        let mut s2 = x0 * (self.b2 - self.a2);
        let mut out = Vec::with_capacity(x.len());
        for &xi in x {
            let y = self.b0 * xi + s1;
            s1 = self.b1 * xi - self.a1 * y + s2;
            s2 = self.b2 * xi - self.a2 * y;
            out.push(y);
        }
        out
    }
}

/// Zero-phase low-pass: one Butterworth pass forward, one backward.
pub fn lowpass_zero_phase(x: &[f64], cutoff_hz: f64, sample_rate_hz: f64) -> Vec<f64> {
    let biquad = Biquad::butterworth_lowpass(cutoff_hz, sample_rate_hz);
    let mut y = biquad.filter_steady(x);
    y.reverse();
    let mut y = biquad.filter_steady(&y);
    y.reverse();
    y
}

/// Sample a uniformly spaced series (first sample at t = 0, spacing
/// `1 / rate_hz`) at time `t` by linear interpolation, clamped to the ends.
pub fn interp_linear(x: &[f64], rate_hz: f64, t: f64) -> f64 {
    debug_assert!(!x.is_empty());
    let pos = t * rate_hz;
    if pos <= 0.0 {
        return x[0];
    }
    let k = pos.floor() as usize;
    if k + 1 >= x.len() {
        return x[x.len() - 1];
    }
    let s = pos - k as f64;
    x[k] + (x[k + 1] - x[k]) * s
}

/// Same as [`interp_linear`] for a quaternion series, using shortest-arc
/// spherical interpolation between neighbors.
pub fn interp_quat(q: &[Quat], rate_hz: f64, t: f64) -> Quat {
    debug_assert!(!q.is_empty());
    let pos = t * rate_hz;
    if pos <= 0.0 {
        return q[0];
    }
    let k = pos.floor() as usize;
    if k + 1 >= q.len() {
        return q[q.len() - 1];
    }
    q[k].slerp(q[k + 1], pos - k as f64)
}

/// Resample a scalar series from `rate_from` onto `count` samples of grid
/// `k / rate_to`, anti-alias filtering first when the rate decreases.
///
/// The anti-alias cutoff is `0.4 * rate_to`.
pub fn resample_series(x: &[f64], rate_from: f64, rate_to: f64, count: usize) -> Vec<f64> {
    let filtered;
    let src: &[f64] = if rate_to < rate_from {
        filtered = lowpass_zero_phase(x, 0.4 * rate_to, rate_from);
        &filtered
    } else {
        x
    };
    (0..count).map(|k| interp_linear(src, rate_from, k as f64 / rate_to)).collect()
}
