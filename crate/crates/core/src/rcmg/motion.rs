//! Smooth random motion sampling for chains.
//!
//! Joint angles and the base pose follow randomized-waypoint trajectories:
//! waypoint values are drawn at random intervals and joined with a raised
//! cosine, which makes every trajectory continuously differentiable with
//! velocity zero at the waypoints. With waypoint values in `[-pi, pi]` and
//! intervals of at least half a second, joint rates stay below
//! `pi^2 ~ 9.9 rad/s`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{subseed, RcmgRanges};
use crate::kinematics::{BodyPose, ChainConfig};
use crate::math::{Quat, Vec3};

/// Internal simulation rate for all fine-grained kinematics (Hz).
pub const FINE_RATE_HZ: f64 = 1000.0;

/// Fine-rate sampled motion of one chain: base pose plus one angle series
/// per hinge joint. All series share `round(duration * fine_rate) + 1`
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fine_rate_hz: f64,
    pub duration_s: f64,
    pub base_poses: Vec<BodyPose>,
    /// One series per non-base joint, indexed like `ChainConfig::joint_axes`.
    pub joint_angles: Vec<Vec<f64>>,
}

impl MotionSequence {
    pub fn samples(&self) -> usize {
        self.base_poses.len()
    }
}

/// Scalar raised-cosine waypoint track.
struct ScalarTrack {
    times: Vec<f64>,
    values: Vec<f64>,
}

/// Pose waypoint track (positions lerped, orientations slerped, both eased
/// by the same raised cosine).
struct PoseTrack {
    times: Vec<f64>,
    positions: Vec<Vec3>,
    orientations: Vec<Quat>,
}

fn waypoint_times(rng: &mut ChaCha8Rng, duration: f64, ranges: &RcmgRanges) -> Vec<f64> {
    let mut times = vec![0.0];
    while *times.last().unwrap() < duration {
        let step =
            rng.random_range(ranges.waypoint_interval_min_s..=ranges.waypoint_interval_max_s);
        let next = times.last().unwrap() + step;
        times.push(next);
    }
    times
}

/// Raised-cosine easing of the segment fraction: zero slope at both ends.
fn ease(s: f64) -> f64 {
    0.5 * (1.0 - (std::f64::consts::PI * s).cos())
}

fn segment_index(times: &[f64], t: f64) -> (usize, f64) {
    // Waypoints cover [0, duration]; the last one is at or past the end.
    let k = match times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
        Ok(k) => k.min(times.len() - 2),
        Err(k) => k.saturating_sub(1).min(times.len() - 2),
    };
    let span = times[k + 1] - times[k];
    ((k), ((t - times[k]) / span).clamp(0.0, 1.0))
}

impl ScalarTrack {
    fn sample(rng: &mut ChaCha8Rng, duration: f64, ranges: &RcmgRanges) -> Self {
        let times = waypoint_times(rng, duration, ranges);
        let values = times
            .iter()
            .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        Self { times, values }
    }

    fn eval(&self, t: f64) -> f64 {
        let (k, s) = segment_index(&self.times, t);
        self.values[k] + (self.values[k + 1] - self.values[k]) * ease(s)
    }
}

fn random_unit_quat(rng: &mut ChaCha8Rng) -> Quat {
    let mut q = Quat::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    );
    if q.norm() < 1e-6 {
        q = Quat::IDENTITY;
    }
    q.normalized()
}

impl PoseTrack {
    fn sample(rng: &mut ChaCha8Rng, duration: f64, ranges: &RcmgRanges) -> Self {
        let times = waypoint_times(rng, duration, ranges);
        let amp = ranges.base_position_amplitude_m;
        let positions = times
            .iter()
            .map(|_| {
                Vec3::new(
                    rng.random_range(-amp..=amp),
                    rng.random_range(-amp..=amp),
                    rng.random_range(-amp..=amp),
                )
            })
            .collect();
        let orientations = times.iter().map(|_| random_unit_quat(rng)).collect();
        Self { times, positions, orientations }
    }

    fn eval(&self, t: f64) -> BodyPose {
        let (k, s) = segment_index(&self.times, t);
        let e = ease(s);
        let position = self.positions[k] + (self.positions[k + 1] - self.positions[k]) * e;
        let orientation = self.orientations[k].slerp(self.orientations[k + 1], e);
        BodyPose { orientation, position }
    }
}

/// Draw a smooth random motion for `config`, deterministic in `seed`.
///
/// The base body follows a random 6-DoF pose trajectory; each hinge follows
/// an independent angle trajectory. Sampled at [`FINE_RATE_HZ`].
pub fn sample_motion(
    seed: u64,
    config: &ChainConfig,
    duration_s: f64,
    ranges: &RcmgRanges,
) -> MotionSequence {
    assert!(duration_s > 0.0, "duration must be positive");
    let num_joints = config.joint_axes.len();
    let mut base_rng = ChaCha8Rng::seed_from_u64(subseed(seed, 0, 0));
    let base_track = PoseTrack::sample(&mut base_rng, duration_s, ranges);
    let joint_tracks: Vec<ScalarTrack> = (0..num_joints)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, 1, j as u64));
            ScalarTrack::sample(&mut rng, duration_s, ranges)
        })
        .collect();

    let samples = (duration_s * FINE_RATE_HZ).round() as usize + 1;
    let mut base_poses = Vec::with_capacity(samples);
    let mut joint_angles = vec![Vec::with_capacity(samples); num_joints];
    for k in 0..samples {
        let t = k as f64 / FINE_RATE_HZ;
        base_poses.push(base_track.eval(t));
        for (j, track) in joint_tracks.iter().enumerate() {
            joint_angles[j].push(track.eval(t));
        }
    }
    MotionSequence { fine_rate_hz: FINE_RATE_HZ, duration_s, base_poses, joint_angles }
}
