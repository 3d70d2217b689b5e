//! Three-point rigid registration between the robot and sensor frames.

use nalgebra::{Matrix3, Point3, Vector3};
use crate::error::{FafError, Result};

/// `p_sensor = rotation · p_robot + translation` (mm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Largest deviation of `RᵀR` from the identity.
    pub fn orthogonality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max()
    }
}

/// Minimum triangle area (mm²) for a triple to count as non-collinear.
pub const MIN_TRIANGLE_AREA: f64 = 1e-6;

fn triangle_area(p: &[Point3<f64>; 3]) -> f64 {
    0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm()
}

/// Least-squares rigid transform taking `robot` onto `sensor` (Kabsch).
pub fn register_frames(robot: &[Point3<f64>; 3], sensor: &[Point3<f64>; 3]) -> Result<RigidTransform> {
    for (name, pts) in [("robot", robot), ("sensor", sensor)] {
        let area = triangle_area(pts);
        if !(area > MIN_TRIANGLE_AREA) {
            return Err(FafError::DegenerateInput(format!(
                "{name} points are collinear (triangle area {area:e} mm²)"
            )));
        }
    }
    let centroid = |p: &[Point3<f64>; 3]| (p[0].coords + p[1].coords + p[2].coords) / 3.0;
    let (ca, cb) = (centroid(robot), centroid(sensor));
    let mut h = Matrix3::zeros();
    for (a, b) in robot.iter().zip(sensor) {
        h += (a.coords - ca) * (b.coords - cb).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: cb - rotation * ca,
    })
}
