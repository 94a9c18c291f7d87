//! Per-step latency measurement for the real-time contract.
//!
//! The estimator is real-time capable at sampling rate `F` when one step
//! executes in less than `1 / F`. The benchmark drives the step function as
//! a stream (state carried across iterations) on one thread and reports
//! order statistics of the per-call wall time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kinematics::ParentArray;
use crate::net::{ring_step, RingParams, RingState};
use crate::rcmg::INPUT_CHANNELS;

#[derive(Debug, Clone)]
pub struct LatencyReport {
    pub iterations: usize,
    pub median_us: f64,
    pub p99_us: f64,
    pub min_us: f64,
    pub max_us: f64,
    pub mean_us: f64,
    /// `1 / median`, the highest sampling rate the step keeps up with.
    pub max_rate_hz: f64,
}

impl LatencyReport {
    /// Whether the median step is faster than the sample period of `rate_hz`.
    pub fn realtime_at(&self, rate_hz: f64) -> bool {
        self.median_us * 1e-6 < 1.0 / rate_hz
    }
}

/// Measure per-step latency for an `num_bodies` chain. `warmup` iterations
/// run unmeasured first. With `iterations = 1` the report collapses to that
/// single sample.
pub fn bench_step_latency(
    params: &RingParams,
    num_bodies: usize,
    iterations: usize,
    warmup: usize,
) -> LatencyReport {
    assert!(iterations >= 1);
    let parents = ParentArray::chain(num_bodies);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let x: Vec<f64> =
        (0..num_bodies * INPUT_CHANNELS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut state = RingState::zeros(num_bodies, params.hidden);

    for _ in 0..warmup {
        let (next, out) = ring_step(params, &state, &x, &parents).expect("benchmark step");
        std::hint::black_box(&out);
        state = next;
    }

    let mut samples_us = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = std::time::Instant::now();
        let (next, out) = ring_step(params, &state, &x, &parents).expect("benchmark step");
        let elapsed = start.elapsed();
        std::hint::black_box(&out);
        state = next;
        samples_us.push(elapsed.as_secs_f64() * 1e6);
    }
    samples_us.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |q: f64| -> f64 {
        let idx = ((samples_us.len() as f64 - 1.0) * q).round() as usize;
        samples_us[idx]
    };
    let median_us = pick(0.5);
    LatencyReport {
        iterations,
        median_us,
        p99_us: pick(0.99),
        min_us: samples_us[0],
        max_us: *samples_us.last().unwrap(),
        mean_us: samples_us.iter().sum::<f64>() / samples_us.len() as f64,
        max_rate_hz: 1e6 / median_us,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_iteration_report() {
        let params = RingParams::init(8, 4, 0);
        let report = bench_step_latency(&params, 3, 1, 2);
        assert_eq!(report.iterations, 1);
        assert_eq!(report.median_us, report.p99_us);
        assert_eq!(report.median_us, report.min_us);
        assert!(report.median_us > 0.0);
    }

    #[test]
    fn desk_widths_keep_up_with_100_hz() {
        let params = RingParams::init(32, 16, 0);
        let report = bench_step_latency(&params, 3, 200, 50);
        assert!(
            report.realtime_at(100.0),
            "median step {} us exceeds the 10 ms budget",
            report.median_us
        );
    }

    #[test]
    fn verdict_matches_the_definition() {
        let report = LatencyReport {
            iterations: 1,
            median_us: 900.0,
            p99_us: 950.0,
            min_us: 800.0,
            max_us: 1000.0,
            mean_us: 900.0,
            max_rate_hz: 1e6 / 900.0,
        };
        assert!(report.realtime_at(1000.0)); // 900 us < 1 ms
        assert!(!report.realtime_at(1200.0)); // 900 us > 833 us
    }
}
