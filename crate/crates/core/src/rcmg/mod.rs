//! Random chain motion generator: a pure function from a seed to an
//! `(X, Y)` training pair.
//!
//! `X` is a `T x N x 10` input tensor per the layout in [`InputSeries`];
//! `Y` holds the target relative orientations `q_{i->parent(i)}` (for the
//! base body, body-to-earth). Chains are randomized in geometry, joint axes,
//! IMU placement and attachment; motions are smooth randomized-waypoint
//! trajectories; sensors are synthesized at a per-sequence sampling rate
//! drawn from a configurable set.

mod motion;
mod sensor;
mod spring;

pub use motion::{sample_motion, MotionSequence, FINE_RATE_HZ};
pub use sensor::{synthesize_imu, ImuModel, ImuSignals};
pub use spring::simulate_nonrigid_imu;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{
    forward_kinematics, hinge_rotation, imu_rigid_pose, BodyPose, ChainConfig, ChainError,
    ImuAttachment, ParentArray,
};
use crate::math::{Quat, Vec3};
use crate::signal::{interp_linear, interp_quat};

/// Input channels per node: gyro (0..3), accelerometer (3..6), joint axis
/// (6..9), inverse sampling rate (9).
pub const INPUT_CHANNELS: usize = 10;
pub const CH_GYRO: usize = 0;
pub const CH_ACC: usize = 3;
pub const CH_AXIS: usize = 6;
pub const CH_INV_RATE: usize = 9;

/// The sampling-rate set the estimator is trained across (Hz).
pub const RATE_SET_HZ: [f64; 9] = [40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0, 200.0];

#[derive(Debug, Error)]
pub enum RcmgError {
    #[error("sampling rate {requested} Hz exceeds the fine simulation rate {fine} Hz")]
    RateTooHigh { requested: f64, fine: f64 },
    #[error("spring-damper state became non-finite at fine step {step}; stiffness/damping are outside the stable region for the fine step size")]
    SpringInstability { step: usize },
    #[error("layout mismatch: {what} has {got} samples, expected {expected}")]
    LayoutMismatch { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("cannot read ranges file: {0}")]
    ConfigIo(#[from] std::io::Error),
    #[error("cannot parse ranges file: {0}")]
    ConfigParse(#[from] toml::de::Error),
    #[error("invalid randomization ranges: {what}")]
    ConfigInvalid { what: &'static str },
}

// ─── Deterministic seed derivation ───────────────────────────────────────────

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from `(seed, tag, index)`. Everything
/// random in the generator flows through this, which is what makes
/// generation a pure function of the top-level seed.
pub fn subseed(seed: u64, tag: u64, index: u64) -> u64 {
    let z = splitmix64(seed ^ 0x517C_C1B7_2722_0A95);
    let z = splitmix64(z ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    splitmix64(z ^ index.wrapping_mul(0xD134_2543_DE82_EF95))
}

const TAG_CONFIG: u64 = 1;
const TAG_MOTION: u64 = 2;
const TAG_IMU: u64 = 3;
const TAG_NOISE: u64 = 4;
const TAG_SEQUENCE: u64 = 5;
const TAG_RATE: u64 = 6;

// ─── Configuration ───────────────────────────────────────────────────────────

/// Which tracking challenges the generated data exercises: nonrigid sensor
/// mounting, sensor-to-segment misalignment (joint axes withheld from the
/// input), and sparse IMU setups (interior bodies carry no sensor).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AblationFlags {
    pub nonrigid: bool,
    pub misaligned: bool,
    pub sparse: bool,
}

impl AblationFlags {
    pub const ALL_OFF: AblationFlags =
        AblationFlags { nonrigid: false, misaligned: false, sparse: false };

    /// All eight combinations in ablation-table order: sparse varies fastest,
    /// nonrigid slowest.
    pub fn grid() -> Vec<AblationFlags> {
        let mut rows = Vec::with_capacity(8);
        for nonrigid in [false, true] {
            for misaligned in [false, true] {
                for sparse in [false, true] {
                    rows.push(AblationFlags { nonrigid, misaligned, sparse });
                }
            }
        }
        rows
    }
}

impl std::fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mark = |on: bool| if on { "on" } else { "off" };
        write!(
            f,
            "nonrigid={} misaligned={} sparse={}",
            mark(self.nonrigid),
            mark(self.misaligned),
            mark(self.sparse)
        )
    }
}

/// Randomization ranges for the generator, all SI units. Loadable from a
/// plain-text `key = value` file; unknown keys are rejected, missing keys
/// fall back to the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcmgRanges {
    /// Segment length bounds (m).
    pub segment_length_min_m: f64,
    pub segment_length_max_m: f64,
    /// IMU mounting: the along-segment position is uniform over the segment,
    /// lateral offsets are uniform in `±imu_offset_lateral_max_m`.
    pub imu_offset_lateral_max_m: f64,
    /// Waypoint spacing bounds for all motion tracks (s).
    pub waypoint_interval_min_s: f64,
    pub waypoint_interval_max_s: f64,
    /// Base-body position waypoints are uniform in `±amplitude` per axis (m).
    pub base_position_amplitude_m: f64,
    /// Spring-damper natural frequency bounds (rad/s), log-uniform. Stiffness
    /// is the square (unit mass / unit inertia).
    pub spring_frequency_min_rad_s: f64,
    pub spring_frequency_max_rad_s: f64,
    /// Damping ratio bounds, log-uniform around critical damping.
    pub damping_ratio_min: f64,
    pub damping_ratio_max: f64,
    /// Per-sequence sensor noise levels are uniform in `[0, max]`.
    pub gyro_noise_std_max_rad_s: f64,
    pub acc_noise_std_max_m_s2: f64,
    /// Per-sequence constant biases are uniform in `±max`.
    pub gyro_bias_max_rad_s: f64,
    pub acc_bias_max_m_s2: f64,
    /// Gravity magnitude (m/s²).
    pub gravity_m_s2: f64,
}

impl Default for RcmgRanges {
    fn default() -> Self {
        Self {
            segment_length_min_m: 0.1,
            segment_length_max_m: 0.5,
            imu_offset_lateral_max_m: 0.05,
            waypoint_interval_min_s: 0.5,
            waypoint_interval_max_s: 4.0,
            base_position_amplitude_m: 1.0,
            spring_frequency_min_rad_s: 3.0,
            spring_frequency_max_rad_s: 30.0,
            damping_ratio_min: 0.1,
            damping_ratio_max: 10.0,
            gyro_noise_std_max_rad_s: 0.03,
            acc_noise_std_max_m_s2: 0.3,
            gyro_bias_max_rad_s: 0.02,
            acc_bias_max_m_s2: 0.2,
            gravity_m_s2: 9.81,
        }
    }
}

impl RcmgRanges {
    /// A copy with every sensor imperfection disabled.
    pub fn noise_free(&self) -> Self {
        Self {
            gyro_noise_std_max_rad_s: 0.0,
            acc_noise_std_max_m_s2: 0.0,
            gyro_bias_max_rad_s: 0.0,
            acc_bias_max_m_s2: 0.0,
            ..self.clone()
        }
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, RcmgError> {
        let text = std::fs::read_to_string(path)?;
        let ranges: Self = toml::from_str(&text)?;
        ranges.validate()?;
        Ok(ranges)
    }

    // `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), RcmgError> {
        let bad = |what| Err(RcmgError::ConfigInvalid { what });
        if !(self.segment_length_min_m > 0.0 && self.segment_length_max_m >= self.segment_length_min_m) {
            return bad("segment length bounds must be positive and ordered");
        }
        if !(self.waypoint_interval_min_s > 0.0 && self.waypoint_interval_max_s >= self.waypoint_interval_min_s) {
            return bad("waypoint interval bounds must be positive and ordered");
        }
        if !(self.spring_frequency_min_rad_s > 0.0 && self.spring_frequency_max_rad_s >= self.spring_frequency_min_rad_s) {
            return bad("spring frequency bounds must be positive and ordered");
        }
        if !(self.damping_ratio_min > 0.0 && self.damping_ratio_max >= self.damping_ratio_min) {
            return bad("damping ratio bounds must be positive and ordered");
        }
        if self.imu_offset_lateral_max_m < 0.0 || self.base_position_amplitude_m < 0.0 {
            return bad("offset and amplitude bounds must be non-negative");
        }
        if self.gyro_noise_std_max_rad_s < 0.0
            || self.acc_noise_std_max_m_s2 < 0.0
            || self.gyro_bias_max_rad_s < 0.0
            || self.acc_bias_max_m_s2 < 0.0
        {
            return bad("noise and bias bounds must be non-negative");
        }
        if !(self.gravity_m_s2 > 0.0) {
            return bad("gravity magnitude must be positive");
        }
        Ok(())
    }
}

// ─── Tensors ─────────────────────────────────────────────────────────────────

/// Dense `T x N x 10` input tensor, row-major over `(t, node, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSeries {
    data: Vec<f64>,
    timesteps: usize,
    nodes: usize,
}

impl InputSeries {
    pub fn zeros(timesteps: usize, nodes: usize) -> Self {
        Self { data: vec![0.0; timesteps * nodes * INPUT_CHANNELS], timesteps, nodes }
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn row(&self, t: usize, node: usize) -> &[f64] {
        let base = (t * self.nodes + node) * INPUT_CHANNELS;
        &self.data[base..base + INPUT_CHANNELS]
    }

    pub fn row_mut(&mut self, t: usize, node: usize) -> &mut [f64] {
        let base = (t * self.nodes + node) * INPUT_CHANNELS;
        &mut self.data[base..base + INPUT_CHANNELS]
    }

    /// All node rows at one timestep (`N * 10` values).
    pub fn step(&self, t: usize) -> &[f64] {
        let base = t * self.nodes * INPUT_CHANNELS;
        &self.data[base..base + self.nodes * INPUT_CHANNELS]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn from_flat(data: Vec<f64>, timesteps: usize, nodes: usize) -> Self {
        assert_eq!(data.len(), timesteps * nodes * INPUT_CHANNELS);
        Self { data, timesteps, nodes }
    }
}

/// Dense `T x N` quaternion tensor, row-major over `(t, node)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuatSeries {
    data: Vec<Quat>,
    timesteps: usize,
    nodes: usize,
}

impl QuatSeries {
    pub fn identity(timesteps: usize, nodes: usize) -> Self {
        Self { data: vec![Quat::IDENTITY; timesteps * nodes], timesteps, nodes }
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn get(&self, t: usize, node: usize) -> Quat {
        self.data[t * self.nodes + node]
    }

    pub fn set(&mut self, t: usize, node: usize, q: Quat) {
        self.data[t * self.nodes + node] = q;
    }

    pub fn as_flat(&self) -> &[Quat] {
        &self.data
    }

    pub fn from_flat(data: Vec<Quat>, timesteps: usize, nodes: usize) -> Self {
        assert_eq!(data.len(), timesteps * nodes);
        Self { data, timesteps, nodes }
    }
}

/// One training sequence: inputs `X`, targets `Y`, the sampling rate, and
/// the graph it was generated on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub x: InputSeries,
    pub y: QuatSeries,
    pub rate_hz: f64,
    pub parents: ParentArray,
}

impl TrainingPair {
    pub fn timesteps(&self) -> usize {
        self.x.timesteps()
    }

    pub fn nodes(&self) -> usize {
        self.x.nodes()
    }

    /// Whether node `i` carries an IMU, read off the input tensor: absent
    /// sensors have exactly-zero gyro/accelerometer channels.
    pub fn has_imu(&self, node: usize) -> bool {
        (0..self.timesteps())
            .any(|t| self.x.row(t, node)[CH_GYRO..CH_GYRO + 6].iter().any(|&v| v != 0.0))
    }

    /// Check the structural invariants: shape consistency, unit-norm targets,
    /// and the inverse-rate channel.
    pub fn validate(&self) -> Result<(), PairInvariantError> {
        let (t_count, n) = (self.x.timesteps(), self.x.nodes());
        if self.y.timesteps() != t_count || self.y.nodes() != n || self.parents.len() != n {
            return Err(PairInvariantError::ShapeMismatch);
        }
        let inv_rate = 1.0 / self.rate_hz;
        for t in 0..t_count {
            for i in 0..n {
                let q = self.y.get(t, i);
                if (q.norm() - 1.0).abs() > 1e-6 {
                    return Err(PairInvariantError::NonUnitTarget {
                        timestep: t,
                        node: i,
                        norm: q.norm(),
                    });
                }
                let got = self.x.row(t, i)[CH_INV_RATE];
                if (got - inv_rate).abs() > 1e-6 * inv_rate.max(1.0) {
                    return Err(PairInvariantError::InverseRateChannel {
                        timestep: t,
                        node: i,
                        got,
                        expected: inv_rate,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PairInvariantError {
    #[error("X/Y/parent shapes are inconsistent")]
    ShapeMismatch,
    #[error("target quaternion at timestep {timestep}, node {node} has norm {norm}")]
    NonUnitTarget { timestep: usize, node: usize, norm: f64 },
    #[error("inverse-rate channel at timestep {timestep}, node {node} is {got}, expected {expected}")]
    InverseRateChannel { timestep: usize, node: usize, got: f64, expected: f64 },
}

// ─── Chain sampling ──────────────────────────────────────────────────────────

fn uniform_sphere(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if let Some(u) = v.normalized() {
            return u;
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..=hi.ln()).exp()
}

/// Draw a randomized chain: segment lengths, joint axes uniform on the
/// sphere, IMU placement within the segment envelope, and rigid or
/// spring-damper mounting per the flags. Deterministic in `seed`.
///
/// With `flags.sparse` only the first and last body carry an IMU; with
/// `flags.misaligned` joint axes are withheld from the network input.
pub fn sample_chain_config(
    seed: u64,
    num_bodies: usize,
    flags: AblationFlags,
    ranges: &RcmgRanges,
) -> ChainConfig {
    assert!(num_bodies >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segment_lengths: Vec<f64> = (0..num_bodies)
        .map(|_| rng.random_range(ranges.segment_length_min_m..=ranges.segment_length_max_m))
        .collect();
    let joint_axes: Vec<Vec3> = (0..num_bodies - 1).map(|_| uniform_sphere(&mut rng)).collect();
    let axis_known = vec![!flags.misaligned; num_bodies.saturating_sub(1)];

    let imu = (0..num_bodies)
        .map(|node| {
            let present = !flags.sparse || node == 0 || node == num_bodies - 1;
            // Draw placement regardless of presence, so flags only mask
            // sensors without reshuffling the rest of the stream.
            let lat = ranges.imu_offset_lateral_max_m;
            let offset = Vec3::new(
                rng.random_range(0.0..=1.0) * segment_lengths[node],
                rng.random_range(-lat..=lat),
                rng.random_range(-lat..=lat),
            );
            let omega_t = log_uniform(
                &mut rng,
                ranges.spring_frequency_min_rad_s,
                ranges.spring_frequency_max_rad_s,
            );
            let zeta_t = log_uniform(&mut rng, ranges.damping_ratio_min, ranges.damping_ratio_max);
            let omega_r = log_uniform(
                &mut rng,
                ranges.spring_frequency_min_rad_s,
                ranges.spring_frequency_max_rad_s,
            );
            let zeta_r = log_uniform(&mut rng, ranges.damping_ratio_min, ranges.damping_ratio_max);
            if !present {
                ImuAttachment::None
            } else if flags.nonrigid {
                ImuAttachment::Nonrigid {
                    offset,
                    stiffness_t: omega_t * omega_t,
                    damping_t: 2.0 * zeta_t * omega_t,
                    stiffness_r: omega_r * omega_r,
                    damping_r: 2.0 * zeta_r * omega_r,
                }
            } else {
                ImuAttachment::Rigid { offset }
            }
        })
        .collect();

    ChainConfig { segment_lengths, joint_axes, axis_known, imu }
}

// ─── Pair assembly ───────────────────────────────────────────────────────────

/// Assemble the `(X, Y)` tensors from a motion and per-body IMU signals at
/// rate `rate_hz`. `imu_signals[i]` must be `Some` exactly for bodies that
/// carry an IMU, with `round(duration * rate_hz)` samples each.
pub fn assemble_training_pair(
    config: &ChainConfig,
    parents: &ParentArray,
    motion: &MotionSequence,
    imu_signals: &[Option<ImuSignals>],
    rate_hz: f64,
) -> Result<TrainingPair, RcmgError> {
    let n = parents.len();
    let t_count = (motion.duration_s * rate_hz).round() as usize;
    if imu_signals.len() != n {
        return Err(RcmgError::LayoutMismatch {
            what: "imu signal slots",
            expected: n,
            got: imu_signals.len(),
        });
    }
    for signals in imu_signals.iter().flatten() {
        if signals.gyro.len() != t_count || signals.acc.len() != t_count {
            return Err(RcmgError::LayoutMismatch {
                what: "imu samples",
                expected: t_count,
                got: signals.gyro.len(),
            });
        }
    }

    let fine = motion.fine_rate_hz;
    let base_orientations: Vec<Quat> = motion.base_poses.iter().map(|p| p.orientation).collect();

    let mut x = InputSeries::zeros(t_count, n);
    let mut y = QuatSeries::identity(t_count, n);
    let inv_rate = 1.0 / rate_hz;
    for t in 0..t_count {
        let time = t as f64 / rate_hz;
        for node in 0..n {
            let target = match parents.parent_node(node) {
                None => interp_quat(&base_orientations, fine, time),
                Some(_) => {
                    let angle = interp_linear(&motion.joint_angles[node - 1], fine, time);
                    hinge_rotation(config.joint_axes[node - 1], angle)
                }
            };
            y.set(t, node, target);

            let row = x.row_mut(t, node);
            if let Some(signals) = &imu_signals[node] {
                let g = signals.gyro[t];
                let a = signals.acc[t];
                row[CH_GYRO] = g.x;
                row[CH_GYRO + 1] = g.y;
                row[CH_GYRO + 2] = g.z;
                row[CH_ACC] = a.x;
                row[CH_ACC + 1] = a.y;
                row[CH_ACC + 2] = a.z;
            }
            if node > 0 && config.axis_known[node - 1] {
                let axis = config.joint_axes[node - 1];
                row[CH_AXIS] = axis.x;
                row[CH_AXIS + 1] = axis.y;
                row[CH_AXIS + 2] = axis.z;
            }
            row[CH_INV_RATE] = inv_rate;
        }
    }
    Ok(TrainingPair { x, y, rate_hz, parents: parents.clone() })
}

// ─── End-to-end generation ───────────────────────────────────────────────────

/// Generate one training pair with `timesteps` samples at `rate_hz` for a
/// chain of `num_bodies` segments. Pure function of the arguments.
pub fn generate_pair(
    seed: u64,
    timesteps: usize,
    rate_hz: f64,
    num_bodies: usize,
    flags: AblationFlags,
    ranges: &RcmgRanges,
) -> Result<TrainingPair, RcmgError> {
    ranges.validate()?;
    let parents = ParentArray::chain(num_bodies);
    let config = sample_chain_config(subseed(seed, TAG_CONFIG, 0), num_bodies, flags, ranges);
    config.validate(&parents)?;
    let duration = timesteps as f64 / rate_hz;
    let motion = sample_motion(subseed(seed, TAG_MOTION, 0), &config, duration, ranges);

    // Fine-rate world poses of every body.
    let samples = motion.samples();
    let mut body_poses: Vec<Vec<BodyPose>> = vec![Vec::with_capacity(samples); num_bodies];
    let mut angles = vec![0.0; num_bodies - 1];
    for k in 0..samples {
        for (j, series) in motion.joint_angles.iter().enumerate() {
            angles[j] = series[k];
        }
        let poses = forward_kinematics(&config, &parents, &motion.base_poses[k], &angles)?;
        for (node, pose) in poses.into_iter().enumerate() {
            body_poses[node].push(pose);
        }
    }

    // Per-sequence sensor imperfections.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(subseed(seed, TAG_NOISE, 0));
    let model = ImuModel {
        gravity_m_s2: ranges.gravity_m_s2,
        gyro_noise_std_rad_s: noise_rng.random_range(0.0..=ranges.gyro_noise_std_max_rad_s),
        acc_noise_std_m_s2: noise_rng.random_range(0.0..=ranges.acc_noise_std_max_m_s2),
        gyro_bias_range_rad_s: ranges.gyro_bias_max_rad_s,
        acc_bias_range_m_s2: ranges.acc_bias_max_m_s2,
    };

    let mut imu_signals: Vec<Option<ImuSignals>> = Vec::with_capacity(num_bodies);
    for node in 0..num_bodies {
        let signals = match config.imu[node] {
            ImuAttachment::None => None,
            ImuAttachment::Rigid { offset } => {
                let poses: Vec<BodyPose> =
                    body_poses[node].iter().map(|p| imu_rigid_pose(p, offset)).collect();
                Some(synthesize_imu(
                    &poses,
                    motion.fine_rate_hz,
                    rate_hz,
                    &model,
                    subseed(seed, TAG_IMU, node as u64),
                )?)
            }
            ImuAttachment::Nonrigid { offset, stiffness_t, damping_t, stiffness_r, damping_r } => {
                let rigid: Vec<BodyPose> =
                    body_poses[node].iter().map(|p| imu_rigid_pose(p, offset)).collect();
                let poses = simulate_nonrigid_imu(
                    &rigid,
                    stiffness_t,
                    damping_t,
                    stiffness_r,
                    damping_r,
                    motion.fine_rate_hz,
                )?;
                Some(synthesize_imu(
                    &poses,
                    motion.fine_rate_hz,
                    rate_hz,
                    &model,
                    subseed(seed, TAG_IMU, node as u64),
                )?)
            }
        };
        imu_signals.push(signals);
    }

    assemble_training_pair(&config, &parents, &motion, &imu_signals, rate_hz)
}

/// Generate `count` independent pairs that all share `timesteps` samples;
/// each sequence draws its rate uniformly from `rate_set` and its own
/// sub-seed from `(seed, index)`. Generation fans out across threads; the
/// result is ordered by index, so the output does not depend on thread
/// count.
pub fn generate_batch(
    seed: u64,
    count: usize,
    timesteps: usize,
    num_bodies: usize,
    flags: AblationFlags,
    rate_set: &[f64],
    ranges: &RcmgRanges,
) -> Result<Vec<TrainingPair>, RcmgError> {
    assert!(count >= 1, "count must be at least 1");
    assert!(!rate_set.is_empty(), "rate set must be non-empty");
    (0..count)
        .into_par_iter()
        .map(|i| {
            let seq_seed = subseed(seed, TAG_SEQUENCE, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(subseed(seq_seed, TAG_RATE, 0));
            let rate = rate_set[rng.random_range(0..rate_set.len())];
            generate_pair(seq_seed, timesteps, rate, num_bodies, flags, ranges)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_flag_keeps_only_outer_imus() {
        let flags = AblationFlags { sparse: true, ..AblationFlags::ALL_OFF };
        let config = sample_chain_config(11, 3, flags, &RcmgRanges::default());
        assert!(config.imu_present(0));
        assert!(!config.imu_present(1));
        assert!(config.imu_present(2));
    }

    #[test]
    fn config_sampling_is_deterministic() {
        let flags = AblationFlags { nonrigid: true, ..AblationFlags::ALL_OFF };
        let a = sample_chain_config(77, 3, flags, &RcmgRanges::default());
        let b = sample_chain_config(77, 3, flags, &RcmgRanges::default());
        assert_eq!(a.segment_lengths, b.segment_lengths);
        assert_eq!(a.joint_axes, b.joint_axes);
        assert_eq!(a.imu, b.imu);
    }

    #[test]
    fn joint_axes_are_isotropic() {
        let mut mean = Vec3::ZERO;
        let count = 10_000;
        for seed in 0..count {
            let config =
                sample_chain_config(seed, 3, AblationFlags::ALL_OFF, &RcmgRanges::default());
            mean = mean + config.joint_axes[0] * (1.0 / count as f64);
        }
        assert!(mean.x.abs() < 0.05, "axis mean x {}", mean.x);
        assert!(mean.y.abs() < 0.05, "axis mean y {}", mean.y);
        assert!(mean.z.abs() < 0.05, "axis mean z {}", mean.z);
    }

    #[test]
    fn misaligned_flag_zeroes_axis_channels() {
        let flags = AblationFlags { misaligned: true, ..AblationFlags::ALL_OFF };
        let pair = generate_pair(5, 100, 100.0, 3, flags, &RcmgRanges::default()).unwrap();
        for t in 0..pair.timesteps() {
            for node in 0..pair.nodes() {
                assert_eq!(&pair.x.row(t, node)[CH_AXIS..CH_AXIS + 3], &[0.0; 3]);
            }
        }
    }

    #[test]
    fn known_axes_fill_axis_channels() {
        let pair = generate_pair(5, 50, 100.0, 3, AblationFlags::ALL_OFF, &RcmgRanges::default())
            .unwrap();
        // The base body never has an axis channel; the others carry a unit vector.
        for t in 0..pair.timesteps() {
            assert_eq!(&pair.x.row(t, 0)[CH_AXIS..CH_AXIS + 3], &[0.0; 3]);
            for node in 1..3 {
                let row = pair.x.row(t, node);
                let norm = (row[CH_AXIS].powi(2)
                    + row[CH_AXIS + 1].powi(2)
                    + row[CH_AXIS + 2].powi(2))
                .sqrt();
                assert!((norm - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sparse_pair_has_exactly_zero_middle_imu_channels() {
        let flags = AblationFlags { sparse: true, ..AblationFlags::ALL_OFF };
        let pair = generate_pair(6, 120, 100.0, 3, flags, &RcmgRanges::default()).unwrap();
        for t in 0..pair.timesteps() {
            assert_eq!(&pair.x.row(t, 1)[CH_GYRO..CH_GYRO + 6], &[0.0; 6]);
        }
        assert!(!pair.has_imu(1));
        assert!(pair.has_imu(0) && pair.has_imu(2));
    }

    #[test]
    fn inverse_rate_channel_is_inverse_rate() {
        let pair = generate_pair(7, 80, 100.0, 3, AblationFlags::ALL_OFF, &RcmgRanges::default())
            .unwrap();
        for t in 0..pair.timesteps() {
            for node in 0..pair.nodes() {
                assert_eq!(pair.x.row(t, node)[CH_INV_RATE], 0.01);
            }
        }
        pair.validate().unwrap();
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let flags = AblationFlags { nonrigid: true, sparse: true, ..AblationFlags::ALL_OFF };
        let a = generate_pair(123, 200, 60.0, 3, flags, &RcmgRanges::default()).unwrap();
        let b = generate_pair(123, 200, 60.0, 3, flags, &RcmgRanges::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn targets_are_unit_norm_and_axis_aligned() {
        let pair = generate_pair(9, 300, 100.0, 3, AblationFlags::ALL_OFF, &RcmgRanges::default())
            .unwrap();
        let config = sample_chain_config(
            subseed(9, TAG_CONFIG, 0),
            3,
            AblationFlags::ALL_OFF,
            &RcmgRanges::default(),
        );
        for t in 0..pair.timesteps() {
            for node in 1..3 {
                let q = pair.y.get(t, node);
                assert!((q.norm() - 1.0).abs() < 1e-9);
                let rot = q.to_scaled_axis();
                if rot.norm() > 1e-3 {
                    let axis = rot.normalized().unwrap();
                    let hinge = config.joint_axes[node - 1];
                    let aligned = axis.dot(hinge).abs();
                    assert!(
                        aligned > 1.0 - 1e-9,
                        "rotation axis deviates from hinge: dot {aligned}"
                    );
                }
            }
        }
    }

    #[test]
    fn batch_draws_rates_from_the_set_and_shares_t() {
        let pairs = generate_batch(
            31,
            16,
            500,
            3,
            AblationFlags::ALL_OFF,
            &RATE_SET_HZ,
            &RcmgRanges::default(),
        )
        .unwrap();
        assert_eq!(pairs.len(), 16);
        let mut seen = std::collections::BTreeSet::new();
        for pair in &pairs {
            assert_eq!(pair.timesteps(), 500);
            assert!(RATE_SET_HZ.contains(&pair.rate_hz));
            seen.insert(pair.rate_hz.to_bits());
        }
        assert!(seen.len() > 1, "16 draws hit a single rate");
    }

    #[test]
    fn batch_is_deterministic() {
        let run = || {
            generate_batch(8, 4, 100, 3, AblationFlags::ALL_OFF, &[100.0], &RcmgRanges::default())
                .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn desk_scale_duration_arithmetic() {
        // 500 steps at 100 Hz is five seconds -> 5001 fine samples.
        let pair = generate_pair(3, 500, 100.0, 3, AblationFlags::ALL_OFF, &RcmgRanges::default())
            .unwrap();
        assert_eq!(pair.timesteps(), 500);
        let config = sample_chain_config(
            subseed(3, TAG_CONFIG, 0),
            3,
            AblationFlags::ALL_OFF,
            &RcmgRanges::default(),
        );
        let motion = sample_motion(subseed(3, TAG_MOTION, 0), &config, 5.0, &RcmgRanges::default());
        assert_eq!(motion.samples(), 5001);
    }

    #[test]
    fn ranges_file_roundtrip_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ranges.toml");
        std::fs::write(&path, "segment_length_min_m = 0.2\nsegment_length_max_m = 0.3\n").unwrap();
        let ranges = RcmgRanges::from_file(&path).unwrap();
        assert_eq!(ranges.segment_length_min_m, 0.2);
        assert_eq!(ranges.segment_length_max_m, 0.3);
        // Everything else stays at the defaults.
        assert_eq!(ranges.gravity_m_s2, 9.81);

        std::fs::write(&path, "no_such_key = 1.0\n").unwrap();
        assert!(matches!(RcmgRanges::from_file(&path), Err(RcmgError::ConfigParse(_))));

        std::fs::write(&path, "segment_length_min_m = -0.2\n").unwrap();
        assert!(matches!(RcmgRanges::from_file(&path), Err(RcmgError::ConfigInvalid { .. })));
        std::fs::write(&path, "damping_ratio_min = 2.0\ndamping_ratio_max = 1.0\n").unwrap();
        assert!(matches!(RcmgRanges::from_file(&path), Err(RcmgError::ConfigInvalid { .. })));
    }
}
