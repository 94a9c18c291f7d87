//! Kinematic-chain representation and forward kinematics.
//!
//! Bodies are numbered `1..=N`; body `0` is the earth frame. Internally the
//! crate indexes bodies as zero-based *nodes* (`node i` = body `i + 1`).
//!
//! Geometry convention: each body's origin sits at its inboard joint, and the
//! joint of a child body sits at `segment_length` along the parent's local
//! x-axis. Joint axes are expressed in the parent body frame (which equals
//! the child frame at zero joint angle, and the hinge axis is invariant under
//! the hinge rotation, so the same vector is valid in both frames).

use thiserror::Error;

use crate::math::{Quat, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("parent array is empty")]
    Empty,
    #[error("body {body} has out-of-range parent {parent} (max {max})")]
    ParentOutOfRange { body: usize, parent: usize, max: usize },
    #[error("body {body} is its own ancestor")]
    Cycle { body: usize },
    #[error("body {body} references parent {parent} that does not precede it")]
    ForwardReference { body: usize, parent: usize },
    #[error("expected exactly one body attached to the earth frame, found {roots}")]
    MultipleRoots { roots: usize },
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("segment length for body {body} must be positive, got {value}")]
    NonPositiveLength { body: usize, value: f64 },
    #[error("joint axis for body {body} is not unit-norm (norm {norm})")]
    NonUnitAxis { body: usize, norm: f64 },
    #[error("spring-damper parameter {what} for body {body} must be positive, got {value}")]
    NonPositiveSpring { what: &'static str, body: usize, value: f64 },
}

// ─── ParentArray ─────────────────────────────────────────────────────────────

/// Tree encoding of the chain: entry `i` is the parent body number of body
/// `i + 1`, with `0` denoting the earth frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParentArray(Vec<usize>);

impl ParentArray {
    /// Validating constructor. Accepts exactly the arrays that encode a tree
    /// with parents preceding children and a single earth-attached body.
    pub fn new(parents: Vec<usize>) -> Result<Self, ChainError> {
        Self::validate(&parents)?;
        Ok(Self(parents))
    }

    /// The serial chain `(0, 1, 2, ..., n-1)`.
    pub fn chain(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn validate(parents: &[usize]) -> Result<(), ChainError> {
        if parents.is_empty() {
            return Err(ChainError::Empty);
        }
        let n = parents.len();
        let mut roots = 0;
        for (idx, &p) in parents.iter().enumerate() {
            let body = idx + 1;
            if p > n {
                return Err(ChainError::ParentOutOfRange { body, parent: p, max: n });
            }
            if p == body {
                return Err(ChainError::Cycle { body });
            }
            if p > body {
                return Err(ChainError::ForwardReference { body, parent: p });
            }
            if p == 0 {
                roots += 1;
            }
        }
        if roots != 1 {
            return Err(ChainError::MultipleRoots { roots });
        }
        Ok(())
    }

    /// Number of bodies `N`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Raw parent body numbers (`0` = earth).
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Parent of node `i` as a node index, or `None` when the parent is the
    /// earth frame.
    pub fn parent_node(&self, node: usize) -> Option<usize> {
        match self.0[node] {
            0 => None,
            p => Some(p - 1),
        }
    }

    /// Node indices of the children of node `i`, in ascending order.
    pub fn child_nodes(&self, node: usize) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.parent_node(j) == Some(node)).collect()
    }
}

// ─── ChainConfig ─────────────────────────────────────────────────────────────

/// How an IMU is mounted on a body. Offsets are in the body frame (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImuAttachment {
    None,
    Rigid { offset: Vec3 },
    /// Point sensor of unit mass and unit inertia coupled to its rigid pose
    /// by translational and rotational spring-dampers.
    Nonrigid {
        offset: Vec3,
        stiffness_t: f64,
        damping_t: f64,
        stiffness_r: f64,
        damping_r: f64,
    },
}

impl ImuAttachment {
    pub fn is_present(&self) -> bool {
        !matches!(self, ImuAttachment::None)
    }

    pub fn offset(&self) -> Option<Vec3> {
        match *self {
            ImuAttachment::None => None,
            ImuAttachment::Rigid { offset } | ImuAttachment::Nonrigid { offset, .. } => {
                Some(offset)
            }
        }
    }
}

/// Geometry, joints, and sensor mounting of one chain instance.
#[derive(Debug, Clone)]
pub struct ChainConfig {
    /// Segment length per body (m), `N` entries.
    pub segment_lengths: Vec<f64>,
    /// Hinge axis per non-base joint, in the parent frame: entry `i - 1` is
    /// the axis of the joint between node `i` and its parent.
    pub joint_axes: Vec<Vec3>,
    /// Whether the corresponding joint axis is provided as a network input.
    pub axis_known: Vec<bool>,
    /// IMU mounting per body, `N` entries.
    pub imu: Vec<ImuAttachment>,
}

impl ChainConfig {
    pub fn num_bodies(&self) -> usize {
        self.segment_lengths.len()
    }

    /// Hinge axis of node `i`'s inboard joint; `None` for the base node.
    pub fn joint_axis(&self, node: usize) -> Option<Vec3> {
        if node == 0 {
            None
        } else {
            Some(self.joint_axes[node - 1])
        }
    }

    pub fn imu_present(&self, node: usize) -> bool {
        self.imu[node].is_present()
    }

    // `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self, parents: &ParentArray) -> Result<(), ChainError> {
        let n = parents.len();
        if self.segment_lengths.len() != n {
            return Err(ChainError::DimensionMismatch {
                what: "segment_lengths",
                expected: n,
                got: self.segment_lengths.len(),
            });
        }
        if self.joint_axes.len() != n - 1 || self.axis_known.len() != n - 1 {
            return Err(ChainError::DimensionMismatch {
                what: "joint axes",
                expected: n - 1,
                got: self.joint_axes.len(),
            });
        }
        if self.imu.len() != n {
            return Err(ChainError::DimensionMismatch {
                what: "imu attachments",
                expected: n,
                got: self.imu.len(),
            });
        }
        for (i, &l) in self.segment_lengths.iter().enumerate() {
            if !(l > 0.0) {
                return Err(ChainError::NonPositiveLength { body: i + 1, value: l });
            }
        }
        for (i, axis) in self.joint_axes.iter().enumerate() {
            let norm = axis.norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(ChainError::NonUnitAxis { body: i + 2, norm });
            }
        }
        for (i, imu) in self.imu.iter().enumerate() {
            if let ImuAttachment::Nonrigid {
                stiffness_t,
                damping_t,
                stiffness_r,
                damping_r,
                ..
            } = *imu
            {
                for (what, value) in [
                    ("stiffness_t", stiffness_t),
                    ("damping_t", damping_t),
                    ("stiffness_r", stiffness_r),
                    ("damping_r", damping_r),
                ] {
                    if !(value > 0.0) {
                        return Err(ChainError::NonPositiveSpring { what, body: i + 1, value });
                    }
                }
            }
        }
        Ok(())
    }
}

// ─── Poses and forward kinematics ────────────────────────────────────────────

/// World-frame pose of one body: orientation is body-to-world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPose {
    pub orientation: Quat,
    pub position: Vec3,
}

impl BodyPose {
    pub const IDENTITY: BodyPose = BodyPose { orientation: Quat::IDENTITY, position: Vec3::ZERO };

    pub fn is_finite(&self) -> bool {
        self.orientation.is_finite() && self.position.is_finite()
    }
}

/// World-frame pose of an IMU rigidly mounted at `offset` on `body`.
pub fn imu_rigid_pose(body: &BodyPose, offset: Vec3) -> BodyPose {
    BodyPose {
        orientation: body.orientation,
        position: body.position + body.orientation.rotate(offset),
    }
}

/// World poses of all bodies given the base pose and one angle per hinge.
///
/// `joint_angles[i - 1]` (radians) belongs to node `i`'s inboard joint. The
/// result is exact composition, no integration: relative orientations
/// recovered from the returned poses reproduce the hinge rotations to
/// machine precision.
pub fn forward_kinematics(
    config: &ChainConfig,
    parents: &ParentArray,
    base_pose: &BodyPose,
    joint_angles: &[f64],
) -> Result<Vec<BodyPose>, ChainError> {
    let n = parents.len();
    if joint_angles.len() != n - 1 {
        return Err(ChainError::DimensionMismatch {
            what: "joint_angles",
            expected: n - 1,
            got: joint_angles.len(),
        });
    }
    let mut poses = Vec::with_capacity(n);
    poses.push(*base_pose);
    for node in 1..n {
        // Parents precede children, so the parent pose is already computed.
        let p = parents.parent_node(node).expect("non-base node has a body parent");
        let parent: &BodyPose = &poses[p];
        let hinge = hinge_rotation(config.joint_axes[node - 1], joint_angles[node - 1]);
        let orientation = parent.orientation.mul(hinge);
        let offset = Vec3::new(config.segment_lengths[p], 0.0, 0.0);
        let position = parent.position + parent.orientation.rotate(offset);
        poses.push(BodyPose { orientation, position });
    }
    Ok(poses)
}

/// Hinge rotation `q_{child->parent}` for a unit axis and an angle. The axis
/// is assumed validated (unit norm), making this infallible.
pub fn hinge_rotation(axis: Vec3, angle: f64) -> Quat {
    Quat::from_scaled_axis(axis * angle)
}

/// Relative orientation `q_{i->parent}` of node `i` extracted from world
/// poses; for the base node this is the body-to-earth orientation itself.
pub fn relative_orientation(poses: &[BodyPose], parents: &ParentArray, node: usize) -> Quat {
    match parents.parent_node(node) {
        None => poses[node].orientation,
        Some(p) => poses[p].orientation.conj().mul(poses[node].orientation),
    }
}
