//! The seven upper-limb joints, their fixed channel order, and the skeleton.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Joint identity. The declaration order is the channel order everywhere:
/// heatmap channels, model output, decode results, prediction records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointName {
    RWrist,
    RElbow,
    RShoulder,
    Neck,
    LShoulder,
    LElbow,
    LWrist,
}

pub const NUM_JOINTS: usize = 7;

/// All joints in channel order.
pub const JOINT_ORDER: [JointName; NUM_JOINTS] = [
    JointName::RWrist,
    JointName::RElbow,
    JointName::RShoulder,
    JointName::Neck,
    JointName::LShoulder,
    JointName::LElbow,
    JointName::LWrist,
];

/// The six links of the upper-limb chain, wrist to wrist.
pub const SKELETON_EDGES: [(JointName, JointName); 6] = [
    (JointName::LWrist, JointName::LElbow),
    (JointName::LElbow, JointName::LShoulder),
    (JointName::LShoulder, JointName::Neck),
    (JointName::Neck, JointName::RShoulder),
    (JointName::RShoulder, JointName::RElbow),
    (JointName::RElbow, JointName::RWrist),
];

impl JointName {
    /// Channel index of this joint.
    pub fn index(self) -> usize {
        JOINT_ORDER.iter().position(|&j| j == self).unwrap()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JointName::RWrist => "r_wrist",
            JointName::RElbow => "r_elbow",
            JointName::RShoulder => "r_shoulder",
            JointName::Neck => "neck",
            JointName::LShoulder => "l_shoulder",
            JointName::LElbow => "l_elbow",
            JointName::LWrist => "l_wrist",
        }
    }
}

/// One joint observation in some stated coordinate frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

/// The full 7-joint annotation plus the per-sample PCKh normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub joints: [Joint; NUM_JOINTS],
    pub reference_length: f64,
}

impl KeypointSet {
    pub fn new(joints: [Joint; NUM_JOINTS], reference_length: f64) -> Result<Self> {
        if !(reference_length > 0.0) {
            return Err(Error::contract(format!(
                "reference_length must be > 0, got {reference_length}"
            )));
        }
        for (i, j) in joints.iter().enumerate() {
            if j.visible && !(j.x.is_finite() && j.y.is_finite()) {
                return Err(Error::contract(format!(
                    "visible joint {} has non-finite coordinates",
                    JOINT_ORDER[i].as_str()
                )));
            }
        }
        Ok(KeypointSet { joints, reference_length })
    }

    pub fn joint(&self, name: JointName) -> &Joint {
        &self.joints[name.index()]
    }

    /// Positions in channel order, visibility ignored.
    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.joints.iter().map(|j| (j.x, j.y)).collect()
    }

    /// Applies `f` to every joint position, keeping visibility and normalizer.
    pub fn map_positions(&self, f: impl Fn((f64, f64)) -> (f64, f64)) -> KeypointSet {
        let mut joints = self.joints;
        for j in joints.iter_mut() {
            let (x, y) = f((j.x, j.y));
            j.x = x;
            j.y = y;
        }
        KeypointSet { joints, reference_length: self.reference_length }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_order_is_wrist_to_wrist() {
        assert_eq!(JointName::RWrist.index(), 0);
        assert_eq!(JointName::Neck.index(), 3);
        assert_eq!(JointName::LWrist.index(), 6);
    }

    #[test]
    fn serde_names_are_snake_case() {
        let s = serde_json::to_string(&JointName::RWrist).unwrap();
        assert_eq!(s, "\"r_wrist\"");
        assert_eq!(JointName::LShoulder.as_str(), "l_shoulder");
    }

    #[test]
    fn rejects_nonpositive_reference_length() {
        let j = Joint { x: 0.0, y: 0.0, visible: true };
        assert!(KeypointSet::new([j; NUM_JOINTS], 0.0).is_err());
    }

    #[test]
    fn rejects_non_finite_visible_joint() {
        let mut joints = [Joint { x: 0.0, y: 0.0, visible: true }; NUM_JOINTS];
        joints[2].x = f64::NAN;
        assert!(KeypointSet::new(joints, 1.0).is_err());
        joints[2].visible = false;
        assert!(KeypointSet::new(joints, 1.0).is_ok());
    }
}
