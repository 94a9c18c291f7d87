//! Evaluation harness: the MAE metric with warm-up exclusion, sampling-rate
//! resampling, a dead-reckoning reference predictor, ablation grids, and
//! rate sweeps.

use rayon::prelude::*;
use thiserror::Error;

use crate::kinematics::ParentArray;
use crate::math::{Quat, Vec3};
use crate::net::{ring_apply, NetError, RingParams};
use crate::rcmg::{
    generate_batch, subseed, AblationFlags, InputSeries, QuatSeries, RcmgError, RcmgRanges,
    TrainingPair, CH_INV_RATE, INPUT_CHANNELS,
};
use crate::signal::{interp_quat, resample_series};
use crate::training::mae_from_step;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("excluding {exclude_s} s at {rate_hz} Hz consumes all {timesteps} timesteps")]
    EmptyWindow { exclude_s: f64, rate_hz: f64, timesteps: usize },
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Rcmg(#[from] RcmgError),
}

/// MAE in degrees plus the per-body breakdown.
#[derive(Debug, Clone)]
pub struct MaeReport {
    pub overall_deg: f64,
    pub per_body_deg: Vec<f64>,
    /// First timestep included in the mean.
    pub start_step: usize,
}

/// Mean absolute orientation error in degrees over `t >= ceil(exclude_s *
/// rate_hz)` and all bodies. The base body contributes its heading-free
/// inclination error; all other bodies the full relative angle.
pub fn mae_deg(
    predicted: &QuatSeries,
    target: &QuatSeries,
    parents: &ParentArray,
    rate_hz: f64,
    exclude_s: f64,
) -> Result<MaeReport, EvalError> {
    if predicted.timesteps() != target.timesteps() || predicted.nodes() != target.nodes() {
        return Err(EvalError::ShapeMismatch {
            what: "prediction/target",
            expected: target.timesteps() * target.nodes(),
            got: predicted.timesteps() * predicted.nodes(),
        });
    }
    let t_count = predicted.timesteps();
    let start = (exclude_s * rate_hz).ceil() as usize;
    if start >= t_count {
        return Err(EvalError::EmptyWindow { exclude_s, rate_hz, timesteps: t_count });
    }
    let n = predicted.nodes();
    let mut per_body = vec![0.0; n];
    for t in start..t_count {
        for node in 0..n {
            let angle = match parents.parent_node(node) {
                None => crate::math::inclination_error_rad(
                    predicted.get(t, node),
                    target.get(t, node),
                    Vec3::Z,
                ),
                Some(_) => {
                    crate::math::angle_between_rad(predicted.get(t, node), target.get(t, node))
                }
            };
            per_body[node] += angle.to_degrees();
        }
    }
    let kept = (t_count - start) as f64;
    for v in per_body.iter_mut() {
        *v /= kept;
    }
    let overall = per_body.iter().sum::<f64>() / n as f64;
    Ok(MaeReport { overall_deg: overall, per_body_deg: per_body, start_step: start })
}

/// All-identity prediction, the trivial baseline.
pub fn identity_prediction(timesteps: usize, nodes: usize) -> QuatSeries {
    QuatSeries::identity(timesteps, nodes)
}

// ─── Resampling ──────────────────────────────────────────────────────────────

/// Re-express a pair at a new sampling rate: sensor channels are low-pass
/// filtered (when the rate drops) and linearly interpolated, targets are
/// re-interpolated on the quaternion manifold, and the inverse-rate channel
/// is rewritten. Duration is preserved: `T_new = round(T / F * F_new)`.
pub fn resample(pair: &TrainingPair, rate_new_hz: f64) -> TrainingPair {
    assert!(rate_new_hz > 0.0, "target rate must be positive");
    let (t_old, n) = (pair.timesteps(), pair.nodes());
    let rate_old = pair.rate_hz;
    let t_new = ((t_old as f64 / rate_old) * rate_new_hz).round() as usize;

    let mut x = InputSeries::zeros(t_new, n);
    for node in 0..n {
        for ch in 0..INPUT_CHANNELS - 1 {
            let series: Vec<f64> = (0..t_old).map(|t| pair.x.row(t, node)[ch]).collect();
            let out = resample_series(&series, rate_old, rate_new_hz, t_new);
            for (t, v) in out.into_iter().enumerate() {
                x.row_mut(t, node)[ch] = v;
            }
        }
        for t in 0..t_new {
            x.row_mut(t, node)[CH_INV_RATE] = 1.0 / rate_new_hz;
        }
    }

    let mut y = QuatSeries::identity(t_new, n);
    for node in 0..n {
        let series: Vec<Quat> = (0..t_old).map(|t| pair.y.get(t, node)).collect();
        for t in 0..t_new {
            y.set(t, node, interp_quat(&series, rate_old, t as f64 / rate_new_hz));
        }
    }
    TrainingPair { x, y, rate_hz: rate_new_hz, parents: pair.parents.clone() }
}

// ─── Dead reckoning ──────────────────────────────────────────────────────────

/// Strapdown gyroscope integration per IMU from the identity, composed into
/// relative orientations; bodies without an IMU are predicted as identity.
/// A reference predictor, not an estimator: it drifts and knows nothing
/// about headings or initial poses.
pub fn dead_reckoning(pair: &TrainingPair) -> QuatSeries {
    let (t_count, n) = (pair.timesteps(), pair.nodes());
    let dt = 1.0 / pair.rate_hz;
    // Integrated world-ish orientation per body (identity where no IMU).
    let mut integrated: Vec<Vec<Quat>> = Vec::with_capacity(n);
    for node in 0..n {
        if pair.has_imu(node) {
            let gyro: Vec<Vec3> = (0..t_count)
                .map(|t| {
                    let row = pair.x.row(t, node);
                    Vec3::new(row[0], row[1], row[2])
                })
                .collect();
            integrated.push(integrate_gyro(Quat::IDENTITY, &gyro, dt));
        } else {
            integrated.push(vec![Quat::IDENTITY; t_count]);
        }
    }
    let mut y = QuatSeries::identity(t_count, n);
    for node in 0..n {
        if !pair.has_imu(node) {
            continue; // identity prediction
        }
        match pair.parents.parent_node(node) {
            None => {
                for t in 0..t_count {
                    y.set(t, node, integrated[node][t]);
                }
            }
            Some(p) => {
                for t in 0..t_count {
                    y.set(t, node, integrated[p][t].conj() * integrated[node][t]);
                }
            }
        }
    }
    y
}

/// Trapezoidal strapdown integration of a gyroscope series from `q0`; the
/// result at index `t` corresponds to sample time `t`.
pub fn integrate_gyro(q0: Quat, gyro: &[Vec3], dt: f64) -> Vec<Quat> {
    let mut out = Vec::with_capacity(gyro.len());
    let mut q = q0;
    out.push(q);
    for k in 1..gyro.len() {
        let w = (gyro[k - 1] + gyro[k]) * 0.5;
        q = q.integrate(w, dt);
        out.push(q);
    }
    out
}

/// Strapdown oracle over a full generated pair: integrate each body's gyro
/// from its true initial world orientation (recovered from the targets),
/// recompose relative orientations, and report their MAE against the
/// targets. Independent of the estimator; meaningful on noise-free rigid
/// data.
pub fn strapdown_relative_mae_deg(pair: &TrainingPair) -> f64 {
    let (t_count, n) = (pair.timesteps(), pair.nodes());
    let dt = 1.0 / pair.rate_hz;
    // World orientations from the relative targets, walking parents first.
    let world_at = |t: usize| -> Vec<Quat> {
        let mut world = vec![Quat::IDENTITY; n];
        for node in 0..n {
            world[node] = match pair.parents.parent_node(node) {
                None => pair.y.get(t, node),
                Some(p) => world[p] * pair.y.get(t, node),
            };
        }
        world
    };
    let world0 = world_at(0);
    let mut integrated: Vec<Vec<Quat>> = Vec::with_capacity(n);
    for node in 0..n {
        assert!(pair.has_imu(node), "strapdown oracle needs a full IMU setup");
        let gyro: Vec<Vec3> = (0..t_count)
            .map(|t| {
                let row = pair.x.row(t, node);
                Vec3::new(row[0], row[1], row[2])
            })
            .collect();
        integrated.push(integrate_gyro(world0[node], &gyro, dt));
    }
    let mut predicted = QuatSeries::identity(t_count, n);
    for node in 0..n {
        for t in 0..t_count {
            let q = match pair.parents.parent_node(node) {
                None => integrated[node][t],
                Some(p) => integrated[p][t].conj() * integrated[node][t],
            };
            predicted.set(t, node, q);
        }
    }
    mae_from_step(&predicted, &pair.y, &pair.parents, 0)
}

// ─── Grids and sweeps ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct AblationCell {
    pub flags: AblationFlags,
    pub mean_mae_deg: f64,
    pub std_mae_deg: f64,
}

/// Evaluate the model over synthetic test sets for every ablation-flag
/// combination (eight rows, sparse varying fastest). Each seed contributes
/// one MAE sample (mean over its sequences); the table reports mean and one
/// standard deviation across seeds.
pub fn ablation_grid(
    params: &RingParams,
    seeds: &[u64],
    sequences_per_seed: usize,
    timesteps: usize,
    rate_hz: f64,
    exclude_s: f64,
    ranges: &RcmgRanges,
) -> Result<Vec<AblationCell>, EvalError> {
    let mut cells = Vec::with_capacity(8);
    for flags in AblationFlags::grid() {
        let maes: Vec<f64> = seeds
            .par_iter()
            .map(|&seed| -> Result<f64, EvalError> {
                let pairs = generate_batch(
                    subseed(seed, 200, 0),
                    sequences_per_seed,
                    timesteps,
                    3,
                    flags,
                    &[rate_hz],
                    ranges,
                )?;
                let mut sum = 0.0;
                for pair in &pairs {
                    let predicted = ring_apply(&pair.x, &pair.parents, params)?;
                    sum += mae_deg(&predicted, &pair.y, &pair.parents, pair.rate_hz, exclude_s)?
                        .overall_deg;
                }
                Ok(sum / pairs.len() as f64)
            })
            .collect::<Result<_, _>>()?;
        cells.push(AblationCell {
            flags,
            mean_mae_deg: mean(&maes),
            std_mae_deg: std_dev(&maes),
        });
    }
    Ok(cells)
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub rate_hz: f64,
    pub mean_mae_deg: f64,
    pub std_mae_deg: f64,
}

/// Evaluate one parameter set across sampling rates by resampling the same
/// motions to each rate. The standard deviation is across sequences.
pub fn rate_sweep(
    params: &RingParams,
    base_pairs: &[TrainingPair],
    rates: &[f64],
    exclude_s: f64,
) -> Result<Vec<SweepPoint>, EvalError> {
    let mut points = Vec::with_capacity(rates.len());
    for &rate in rates {
        let maes: Vec<f64> = base_pairs
            .par_iter()
            .map(|pair| -> Result<f64, EvalError> {
                let resampled =
                    if (pair.rate_hz - rate).abs() < 1e-9 { pair.clone() } else { resample(pair, rate) };
                let predicted = ring_apply(&resampled.x, &resampled.parents, params)?;
                Ok(mae_deg(&predicted, &resampled.y, &resampled.parents, rate, exclude_s)?
                    .overall_deg)
            })
            .collect::<Result<_, _>>()?;
        points.push(SweepPoint {
            rate_hz: rate,
            mean_mae_deg: mean(&maes),
            std_mae_deg: std_dev(&maes),
        });
    }
    Ok(points)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::angle_between_deg;
    use crate::rcmg::generate_pair;

    fn noise_free() -> RcmgRanges {
        RcmgRanges::default().noise_free()
    }

    #[test]
    fn perfect_prediction_has_zero_mae() {
        let pair =
            generate_pair(1, 100, 100.0, 3, AblationFlags::ALL_OFF, &RcmgRanges::default())
                .unwrap();
        let report = mae_deg(&pair.y, &pair.y, &pair.parents, 100.0, 0.5).unwrap();
        assert_eq!(report.overall_deg, 0.0);
        assert_eq!(report.per_body_deg, vec![0.0; 3]);
    }

    #[test]
    fn constant_error_after_exclusion_is_that_error() {
        let pair =
            generate_pair(2, 800, 100.0, 3, AblationFlags::ALL_OFF, &RcmgRanges::default())
                .unwrap();
        let off = Quat::from_axis_angle(Vec3::X, 8.0_f64.to_radians()).unwrap();
        let mut predicted = pair.y.clone();
        for t in 0..800 {
            for node in 1..3 {
                predicted.set(t, node, pair.y.get(t, node) * off);
            }
            // Base body: compose the error in the world frame so the tilt is
            // exactly eight degrees regardless of the current orientation.
            predicted.set(t, 0, off * pair.y.get(t, 0));
        }
        let report = mae_deg(&predicted, &pair.y, &pair.parents, 100.0, 5.0).unwrap();
        assert!((report.overall_deg - 8.0).abs() < 1e-9, "MAE {}", report.overall_deg);
        assert_eq!(report.start_step, 500);
    }

    #[test]
    fn errors_before_the_exclusion_window_do_not_count() {
        let pair =
            generate_pair(3, 700, 100.0, 3, AblationFlags::ALL_OFF, &RcmgRanges::default())
                .unwrap();
        let mut predicted = pair.y.clone();
        let wild = Quat::from_axis_angle(Vec3::Y, 90.0_f64.to_radians()).unwrap();
        for t in 0..500 {
            for node in 0..3 {
                predicted.set(t, node, wild * pair.y.get(t, node) * wild);
            }
        }
        let report = mae_deg(&predicted, &pair.y, &pair.parents, 100.0, 5.0).unwrap();
        assert_eq!(report.overall_deg, 0.0);
    }

    #[test]
    fn exclusion_eating_everything_is_an_error() {
        let pair =
            generate_pair(4, 400, 100.0, 3, AblationFlags::ALL_OFF, &RcmgRanges::default())
                .unwrap();
        assert!(matches!(
            mae_deg(&pair.y, &pair.y, &pair.parents, 100.0, 5.0),
            Err(EvalError::EmptyWindow { .. })
        ));
    }

    #[test]
    fn mae_is_sign_invariant_and_heading_invariant_for_base() {
        let pair =
            generate_pair(5, 200, 100.0, 3, AblationFlags::ALL_OFF, &RcmgRanges::default())
                .unwrap();
        let mut predicted = pair.y.clone();
        let off = Quat::from_axis_angle(Vec3::new(0.2, 0.5, 0.8), 0.2).unwrap();
        for t in 0..200 {
            for node in 0..3 {
                predicted.set(t, node, predicted.get(t, node) * off);
            }
        }
        let base = mae_deg(&predicted, &pair.y, &pair.parents, 100.0, 0.0).unwrap().overall_deg;
        let mut flipped = predicted.clone();
        for t in 0..200 {
            for node in 0..3 {
                flipped.set(t, node, -flipped.get(t, node));
            }
        }
        let mae_flip = mae_deg(&flipped, &pair.y, &pair.parents, 100.0, 0.0).unwrap().overall_deg;
        assert!((base - mae_flip).abs() < 1e-12);

        // Global heading rotation of prediction and target of the base body.
        let heading = Quat::from_axis_angle(Vec3::Z, 1.3).unwrap();
        let mut pred_h = predicted.clone();
        let mut target_h = pair.y.clone();
        for t in 0..200 {
            pred_h.set(t, 0, heading * predicted.get(t, 0));
            target_h.set(t, 0, heading * pair.y.get(t, 0));
        }
        let mae_h = mae_deg(&pred_h, &target_h, &pair.parents, 100.0, 0.0).unwrap().overall_deg;
        assert!((base - mae_h).abs() < 1e-9, "{base} vs {mae_h}");
    }

    #[test]
    fn resample_to_same_rate_is_near_identity() {
        let pair = generate_pair(6, 300, 100.0, 3, AblationFlags::ALL_OFF, &noise_free()).unwrap();
        let same = resample(&pair, 100.0);
        assert_eq!(same.timesteps(), 300);
        for (a, b) in pair.x.as_flat().iter().zip(same.x.as_flat()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        for (a, b) in pair.y.as_flat().iter().zip(same.y.as_flat()) {
            assert!(angle_between_deg(*a, *b) < 1e-7);
        }
    }

    #[test]
    fn resample_rewrites_the_inverse_rate_channel() {
        let pair = generate_pair(7, 200, 100.0, 3, AblationFlags::ALL_OFF, &noise_free()).unwrap();
        let down = resample(&pair, 40.0);
        assert_eq!(down.timesteps(), 80);
        for t in 0..down.timesteps() {
            for node in 0..3 {
                assert_eq!(down.x.row(t, node)[CH_INV_RATE], 0.025);
            }
        }
        down.validate().unwrap();
    }

    #[test]
    fn resample_preserves_unit_targets_and_zero_channels() {
        let flags = AblationFlags { sparse: true, misaligned: true, ..AblationFlags::ALL_OFF };
        let pair = generate_pair(8, 250, 100.0, 3, flags, &noise_free()).unwrap();
        let up = resample(&pair, 200.0);
        for t in 0..up.timesteps() {
            for node in 0..3 {
                assert!((up.y.get(t, node).norm() - 1.0).abs() < 1e-6);
                let row = up.x.row(t, node);
                assert_eq!(&row[6..9], &[0.0; 3], "axis channels must stay exactly zero");
                if node == 1 {
                    assert_eq!(&row[0..6], &[0.0; 6], "sparse channels must stay exactly zero");
                }
            }
        }
    }

    #[test]
    fn resample_roundtrip_is_tight_on_smooth_data() {
        let pair = generate_pair(9, 500, 100.0, 3, AblationFlags::ALL_OFF, &noise_free()).unwrap();
        let round = resample(&resample(&pair, 200.0), 100.0);
        assert_eq!(round.timesteps(), 500);
        let mut err_sq = 0.0;
        let mut sig_sq = 0.0;
        for t in 0..500 {
            for node in 0..3 {
                for ch in 0..6 {
                    let a = pair.x.row(t, node)[ch];
                    let b = round.x.row(t, node)[ch];
                    err_sq += (a - b) * (a - b);
                    sig_sq += a * a;
                }
            }
        }
        let rel = (err_sq / sig_sq.max(1e-12)).sqrt();
        assert!(rel < 0.01, "roundtrip relative RMS {rel}");
    }

    #[test]
    fn dead_reckoning_zero_gyro_predicts_identity() {
        let pair =
            generate_pair(10, 100, 100.0, 3, AblationFlags::ALL_OFF, &noise_free()).unwrap();
        let mut zeroed = pair.clone();
        for t in 0..100 {
            for node in 0..3 {
                for v in &mut zeroed.x.row_mut(t, node)[0..3] {
                    *v = 0.0;
                }
                // Keep the accelerometer channels nonzero so IMU presence
                // detection still sees a sensor.
            }
        }
        let y = dead_reckoning(&zeroed);
        for t in 0..100 {
            for node in 0..3 {
                assert_eq!(y.get(t, node), Quat::IDENTITY);
            }
        }
    }

    #[test]
    fn dead_reckoning_drift_is_small_on_clean_identity_start_motion() {
        // Analytic fixture: base swings about z starting at identity, hinges
        // swing from zero, so integration from identity is exactly aligned.
        let rate = 100.0;
        let t_count = 6000;
        let parents = ParentArray::chain(2);
        let axis = Vec3::Y;
        let config = crate::kinematics::ChainConfig {
            segment_lengths: vec![0.3, 0.3],
            joint_axes: vec![axis],
            axis_known: vec![true],
            imu: vec![crate::kinematics::ImuAttachment::Rigid { offset: Vec3::ZERO }; 2],
        };
        let fine = 1000.0;
        let samples = 60_001;
        let base_angle = |t: f64| 0.9 * (1.0 - (0.8 * t).cos());
        let joint_angle = |t: f64| 1.2 * (0.5 * t).sin();
        let base_poses: Vec<crate::kinematics::BodyPose> = (0..samples)
            .map(|k| crate::kinematics::BodyPose {
                orientation: Quat::from_axis_angle(Vec3::Z, base_angle(k as f64 / fine)).unwrap(),
                position: Vec3::ZERO,
            })
            .collect();
        let joint: Vec<f64> = (0..samples).map(|k| joint_angle(k as f64 / fine)).collect();
        let motion = crate::rcmg::MotionSequence {
            fine_rate_hz: fine,
            duration_s: 60.0,
            base_poses: base_poses.clone(),
            joint_angles: vec![joint.clone()],
        };
        let model = crate::rcmg::ImuModel::default();
        let mut signals = Vec::new();
        for node in 0..2 {
            let mut poses = Vec::with_capacity(samples);
            for k in 0..samples {
                let all = crate::kinematics::forward_kinematics(
                    &config,
                    &parents,
                    &base_poses[k],
                    &[joint[k]],
                )
                .unwrap();
                poses.push(all[node]);
            }
            signals.push(Some(
                crate::rcmg::synthesize_imu(&poses, fine, rate, &model, 0).unwrap(),
            ));
        }
        let pair =
            crate::rcmg::assemble_training_pair(&config, &parents, &motion, &signals, rate)
                .unwrap();
        assert_eq!(pair.timesteps(), t_count);
        let predicted = dead_reckoning(&pair);
        let report = mae_deg(&predicted, &pair.y, &pair.parents, rate, 0.0).unwrap();
        assert!(report.overall_deg < 2.0, "dead-reckoning drift {} deg", report.overall_deg);
    }

    #[test]
    fn biased_gyro_drifts_monotonically() {
        let pair =
            generate_pair(11, 3000, 100.0, 3, AblationFlags::ALL_OFF, &noise_free()).unwrap();
        let mut biased = pair.clone();
        for t in 0..3000 {
            for node in 0..3 {
                biased.x.row_mut(t, node)[0] += 0.01;
            }
        }
        let predicted = dead_reckoning(&biased);
        // Compare against the bias-free dead reckoning, isolating the bias
        // contribution from ordinary integration error; windowed means.
        let reference = dead_reckoning(&pair);
        let window = 600;
        let mut means = Vec::new();
        for w in 0..5 {
            let mut sum = 0.0;
            for t in w * window..(w + 1) * window {
                sum += crate::math::angle_between_rad(predicted.get(t, 0), reference.get(t, 0))
                    .to_degrees();
            }
            means.push(sum / window as f64);
        }
        for w in 1..5 {
            assert!(
                means[w] > means[w - 1],
                "bias drift not monotone: {means:?}"
            );
        }
    }

    #[test]
    fn ablation_grid_has_eight_rows_in_table_order() {
        let params = RingParams::init(8, 4, 0);
        let cells =
            ablation_grid(&params, &[1, 2], 1, 50, 100.0, 0.1, &RcmgRanges::default()).unwrap();
        assert_eq!(cells.len(), 8);
        assert_eq!(cells[0].flags, AblationFlags::ALL_OFF);
        assert_eq!(
            cells[1].flags,
            AblationFlags { sparse: true, ..AblationFlags::ALL_OFF }
        );
        assert_eq!(
            cells[4].flags,
            AblationFlags { nonrigid: true, ..AblationFlags::ALL_OFF }
        );
        assert!(cells.iter().all(|c| c.mean_mae_deg.is_finite()));
    }

    #[test]
    fn rate_sweep_runs_over_the_whole_set() {
        let params = RingParams::init(8, 4, 0);
        let pairs = vec![
            generate_pair(12, 200, 100.0, 3, AblationFlags::ALL_OFF, &noise_free()).unwrap(),
            generate_pair(13, 200, 100.0, 3, AblationFlags::ALL_OFF, &noise_free()).unwrap(),
        ];
        let points =
            rate_sweep(&params, &pairs, &crate::rcmg::RATE_SET_HZ, 0.5).unwrap();
        assert_eq!(points.len(), 9);
        for p in &points {
            assert!(p.mean_mae_deg.is_finite());
        }
    }
}
