use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{FafError, Result};

/// End-effector pose in the sensor frame: position in mm, Euler angles in degrees.
///
/// The rotation is `Rz(yaw) * Ry(pitch) * Rx(roll)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn at(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            ..Self::default()
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(
            self.roll.to_radians(),
            self.pitch.to_radians(),
            self.yaw.to_radians(),
        )
    }

    /// Direction of the end-effector z-axis in the sensor frame.
    pub fn tool_axis(&self) -> Vector3<f64> {
        self.rotation() * Vector3::z()
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.roll, self.pitch, self.yaw]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            z: a[2],
            roll: a[3],
            pitch: a[4],
            yaw: a[5],
        }
    }
}

/// Symmetric sampling box `x ∈ [-X, X]`, `y ∈ [-Y, Y]`, `roll ∈ [-θ, θ]`,
/// `pitch ∈ [-ζ, ζ]`, `yaw ∈ [-η, η]` on the plane `z = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRange {
    pub x_mm: f64,
    pub y_mm: f64,
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub yaw_deg: f64,
}

impl Default for PoseRange {
    fn default() -> Self {
        Self {
            x_mm: 4.0,
            y_mm: 4.0,
            roll_deg: 10.0,
            pitch_deg: 10.0,
            yaw_deg: 180.0,
        }
    }
}

impl PoseRange {
    pub const ZERO: PoseRange = PoseRange {
        x_mm: 0.0,
        y_mm: 0.0,
        roll_deg: 0.0,
        pitch_deg: 0.0,
        yaw_deg: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x_mm, self.y_mm, self.roll_deg, self.pitch_deg, self.yaw_deg];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(FafError::Config(format!("pose range limits must be non-negative: {self:?}")));
        }
        if self.roll_deg > 30.0 || self.pitch_deg > 30.0 || self.yaw_deg > 180.0 {
            return Err(FafError::Config(format!("pose range angles out of bounds: {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Pose) -> bool {
        const SLACK: f64 = 1e-9;
        p.z.abs() <= SLACK
            && p.x.abs() <= self.x_mm + SLACK
            && p.y.abs() <= self.y_mm + SLACK
            && p.roll.abs() <= self.roll_deg + SLACK
            && p.pitch.abs() <= self.pitch_deg + SLACK
            && p.yaw.abs() <= self.yaw_deg + SLACK
    }
}
