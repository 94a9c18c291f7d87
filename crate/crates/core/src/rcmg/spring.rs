//! Nonrigid IMU attachment as a point body on spring-dampers.
//!
//! The sensor is a unit-mass, unit-inertia point body pulled toward its
//! nominal (rigid-mount) pose by a translational and a rotational
//! spring-damper. Damping acts on the velocity relative to the moving
//! anchor. Dynamics are integrated with semi-implicit Euler at the fine
//! simulation rate; as stiffness grows the output converges to the rigid
//! pose.

use super::RcmgError;
use crate::kinematics::BodyPose;
use crate::math::{Quat, Vec3};

/// World-frame angular velocity of a pose series by symmetric finite
/// differences of the orientation increments.
fn world_angular_rates(poses: &[BodyPose], dt: f64) -> Vec<Vec3> {
    let n = poses.len();
    let inc = |a: usize, b: usize| -> Vec3 {
        // Left increment: q[b] = exp(w dt) * q[a] for world-frame w. A held
        // pose yields an exact zero, not rounding noise.
        if poses[a].orientation == poses[b].orientation {
            return Vec3::ZERO;
        }
        poses[b].orientation.mul_raw(poses[a].orientation.conj()).normalized().to_scaled_axis()
            * (1.0 / dt)
    };
    (0..n)
        .map(|k| {
            if n == 1 {
                Vec3::ZERO
            } else if k == 0 {
                inc(0, 1)
            } else if k == n - 1 {
                inc(n - 2, n - 1)
            } else {
                (inc(k - 1, k) + inc(k, k + 1)) * 0.5
            }
        })
        .collect()
}

fn linear_rates(poses: &[BodyPose], dt: f64) -> Vec<Vec3> {
    let n = poses.len();
    (0..n)
        .map(|k| {
            if n == 1 {
                Vec3::ZERO
            } else if k == 0 {
                (poses[1].position - poses[0].position) * (1.0 / dt)
            } else if k == n - 1 {
                (poses[n - 1].position - poses[n - 2].position) * (1.0 / dt)
            } else {
                (poses[k + 1].position - poses[k - 1].position) * (1.0 / (2.0 * dt))
            }
        })
        .collect()
}

/// Simulate the sensor pose for a nonrigid mount.
///
/// `rigid_poses` is the world pose the sensor would have if rigidly mounted,
/// sampled at `fine_rate_hz`. The sensor starts at equilibrium (tracking the
/// anchor exactly), so a static anchor yields output identical to the rigid
/// pose. Returns an error if the state becomes non-finite, which signals a
/// stiffness/damping/step-size combination outside the stable region.
pub fn simulate_nonrigid_imu(
    rigid_poses: &[BodyPose],
    stiffness_t: f64,
    damping_t: f64,
    stiffness_r: f64,
    damping_r: f64,
    fine_rate_hz: f64,
) -> Result<Vec<BodyPose>, RcmgError> {
    let dt = 1.0 / fine_rate_hz;
    let anchor_v = linear_rates(rigid_poses, dt);
    let anchor_w = world_angular_rates(rigid_poses, dt);

    let mut p = rigid_poses[0].position;
    let mut v = anchor_v[0];
    let mut q = rigid_poses[0].orientation;
    let mut w = anchor_w[0];

    let mut out = Vec::with_capacity(rigid_poses.len());
    out.push(BodyPose { orientation: q, position: p });
    for k in 1..rigid_poses.len() {
        let anchor = &rigid_poses[k - 1];
        // Unit mass / unit inertia: force is acceleration, torque is angular
        // acceleration.
        let f = (anchor.position - p) * stiffness_t + (anchor_v[k - 1] - v) * damping_t;
        let err = if q == anchor.orientation {
            Vec3::ZERO
        } else {
            q.mul_raw(anchor.orientation.conj()).normalized().to_scaled_axis()
        };
        let tau = err * (-stiffness_r) + (anchor_w[k - 1] - w) * damping_r;

        v = v + f * dt;
        w = w + tau * dt;
        p = p + v * dt;
        let dq = w * dt;
        if dq != Vec3::ZERO {
            q = Quat::from_scaled_axis(dq).mul(q);
        }

        let pose = BodyPose { orientation: q, position: p };
        if !pose.is_finite() || !v.is_finite() || !w.is_finite() {
            return Err(RcmgError::SpringInstability { step: k });
        }
        out.push(pose);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::angle_between_rad;

    const FS: f64 = 1000.0;

    fn static_poses(n: usize) -> Vec<BodyPose> {
        vec![
            BodyPose {
                orientation: Quat::from_axis_angle(Vec3::new(0.3, 0.8, 0.1), 0.7)
                    .unwrap(),
                position: Vec3::new(0.2, -0.1, 0.5),
            };
            n
        ]
    }

    /// Anchor swings about the z axis, then freezes for the tail.
    fn swing_then_hold(move_s: f64, hold_s: f64) -> Vec<BodyPose> {
        let total = ((move_s + hold_s) * FS) as usize + 1;
        (0..total)
            .map(|k| {
                let t = (k as f64 / FS).min(move_s);
                let angle = 0.8 * (std::f64::consts::PI * t / move_s).sin();
                BodyPose {
                    orientation: Quat::from_axis_angle(Vec3::Z, angle).unwrap(),
                    position: Vec3::new(angle * 0.3, 0.0, 0.0),
                }
            })
            .collect()
    }

    #[test]
    fn static_anchor_gives_rigid_output() {
        let poses = static_poses(2000);
        let out = simulate_nonrigid_imu(&poses, 100.0, 14.0, 100.0, 14.0, FS).unwrap();
        for (a, b) in poses.iter().zip(&out) {
            assert_eq!(a, b);
        }
    }

    fn mean_orientation_deviation(stiffness: f64) -> f64 {
        let anchor = swing_then_hold(3.0, 0.0);
        let damping = 10.0;
        let out =
            simulate_nonrigid_imu(&anchor, stiffness, damping, stiffness, damping, FS).unwrap();
        let sum: f64 = anchor
            .iter()
            .zip(&out)
            .map(|(a, b)| angle_between_rad(a.orientation, b.orientation))
            .sum();
        sum / anchor.len() as f64
    }

    #[test]
    fn stiffer_spring_tracks_the_rigid_pose_closer() {
        let base = mean_orientation_deviation(100.0);
        let stiff = mean_orientation_deviation(1000.0);
        assert!(base > 1e-4, "baseline deviation suspiciously small: {base}");
        assert!(stiff < base, "10x stiffness did not reduce deviation: {stiff} vs {base}");
    }

    #[test]
    fn relative_state_settles_after_motion_stops() {
        // omega_n = 10 rad/s, zeta = 0.7: settles well within 2 s.
        let k = 100.0;
        let c = 2.0 * 0.7 * 10.0;
        let anchor = swing_then_hold(2.0, 2.5);
        let out = simulate_nonrigid_imu(&anchor, k, c, k, c, FS).unwrap();
        let dt = 1.0 / FS;
        // 2 s after the anchor froze.
        let idx = ((2.0 + 2.0) * FS) as usize;
        let rel_speed = (out[idx + 1].position - out[idx].position).norm() / dt;
        let rel_rate =
            angle_between_rad(out[idx].orientation, out[idx + 1].orientation) / dt;
        assert!(rel_speed < 1e-3, "residual speed {rel_speed} m/s");
        assert!(rel_rate < 1e-3, "residual angular rate {rel_rate} rad/s");
        // And the pose has converged back to the anchor.
        let tail_dev = angle_between_rad(out[idx].orientation, anchor[idx].orientation);
        assert!(tail_dev < 1e-3, "tail deviation {tail_dev} rad");
    }

    #[test]
    fn unstable_parameters_are_reported() {
        let anchor = swing_then_hold(1.0, 0.0);
        // Stiffness far beyond the stable region for dt = 1 ms.
        let err = simulate_nonrigid_imu(&anchor, 1e9, 0.01, 1e9, 0.01, FS);
        assert!(matches!(err, Err(RcmgError::SpringInstability { .. })));
    }
}
