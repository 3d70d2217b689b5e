//! The ten rigid indenter primitives.
//!
//! Each shape lives in its tool frame with the contacting end at `z = 0` and
//! the body extending towards `+z`. Shapes expose a 1-Lipschitz signed
//! distance bound (exact zero set) for ray marching and an exact support
//! function for locating the lowest point under any rotation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::FafError;
use crate::sensor::pose::PoseRange;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndenterId {
    BigSphere,
    SmallSphere,
    Cylinder,
    TripleCylinder,
    Ring,
    Cross,
    Cube,
    Cone,
    Wedge,
    Ellipsoid,
}

impl IndenterId {
    pub const ALL: [IndenterId; 10] = [
        IndenterId::BigSphere,
        IndenterId::SmallSphere,
        IndenterId::Cylinder,
        IndenterId::TripleCylinder,
        IndenterId::Ring,
        IndenterId::Cross,
        IndenterId::Cube,
        IndenterId::Cone,
        IndenterId::Wedge,
        IndenterId::Ellipsoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IndenterId::BigSphere => "big-sphere",
            IndenterId::SmallSphere => "small-sphere",
            IndenterId::Cylinder => "cylinder",
            IndenterId::TripleCylinder => "triple-cylinder",
            IndenterId::Ring => "ring",
            IndenterId::Cross => "cross",
            IndenterId::Cube => "cube",
            IndenterId::Cone => "cone",
            IndenterId::Wedge => "wedge",
            IndenterId::Ellipsoid => "ellipsoid",
        }
    }

    pub fn code(self) -> u16 {
        Self::ALL.iter().position(|&i| i == self).unwrap() as u16
    }

    pub fn from_code(code: u16) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for IndenterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndenterId {
    type Err = FafError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|i| i.name() == s)
            .ok_or_else(|| FafError::Config(format!("unknown indenter `{s}`")))
    }
}

/// Geometric building blocks (tool frame, mm).
#[derive(Clone, Debug, PartialEq)]
enum Solid {
    Sphere { center: Vector3<f64>, radius: f64 },
    /// Vertical cylinder on `z ∈ [0, height]` around `(cx, cy)`.
    Cylinder { center: Vector2<f64>, radius: f64, height: f64 },
    /// Cylinder with a coaxial through-hole.
    Tube { outer: f64, inner: f64, height: f64 },
    Box { center: Vector3<f64>, half: Vector3<f64> },
    /// Apex at the origin opening upward with the given half angle, cut at `height`.
    Cone { half_angle: f64, height: f64 },
    /// Triangular prism, knife edge along y at `z = 0`.
    Wedge { half_angle: f64, half_length: f64, height: f64 },
    Ellipsoid { center: Vector3<f64>, radii: Vector3<f64> },
    Union(Vec<Solid>),
}

fn cylinder_sdf(p: Vector3<f64>, c: Vector2<f64>, r: f64, h: f64) -> f64 {
    let dr = (Vector2::new(p.x, p.y) - c).norm() - r;
    let dz = (p.z - 0.5 * h).abs() - 0.5 * h;
    let outside = Vector2::new(dr.max(0.0), dz.max(0.0)).norm();
    outside + dr.max(dz).min(0.0)
}

impl Solid {
    fn sdf(&self, p: Vector3<f64>) -> f64 {
        match self {
            Solid::Sphere { center, radius } => (p - center).norm() - radius,
            Solid::Cylinder { center, radius, height } => cylinder_sdf(p, *center, *radius, *height),
            Solid::Tube { outer, inner, height } => {
                let body = cylinder_sdf(p, Vector2::zeros(), *outer, *height);
                let hole = inner - p.xy().norm();
                body.max(hole)
            }
            Solid::Box { center, half } => {
                let q = (p - center).abs() - half;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
            Solid::Cone { half_angle, height } => {
                let side = p.xy().norm() * half_angle.cos() - p.z * half_angle.sin();
                side.max(p.z - height)
            }
            Solid::Wedge {
                half_angle,
                half_length,
                height,
            } => {
                let side = p.x.abs() * half_angle.cos() - p.z * half_angle.sin();
                side.max(p.y.abs() - half_length).max(p.z - height)
            }
            Solid::Ellipsoid { center, radii } => {
                let q = (p - center).component_div(radii);
                (q.norm() - 1.0) * radii.min()
            }
            Solid::Union(parts) => parts.iter().map(|s| s.sdf(p)).fold(f64::INFINITY, f64::min),
        }
    }

    /// `max_{b in body} u·b`.
    fn support(&self, u: Vector3<f64>) -> f64 {
        match self {
            Solid::Sphere { center, radius } => u.dot(center) + radius * u.norm(),
            Solid::Cylinder { center, radius, height } => {
                u.x * center.x + u.y * center.y + radius * u.xy().norm() + (u.z * height).max(0.0)
            }
            Solid::Tube { outer, height, .. } => outer * u.xy().norm() + (u.z * height).max(0.0),
            Solid::Box { center, half } => u.dot(center) + u.abs().dot(half),
            Solid::Cone { half_angle, height } => {
                let top = height * half_angle.tan();
                (u.z * height + top * u.xy().norm()).max(0.0)
            }
            Solid::Wedge {
                half_angle,
                half_length,
                height,
            } => {
                let top = height * half_angle.tan();
                let edge = half_length * u.y.abs();
                let face = top * u.x.abs() + half_length * u.y.abs() + height * u.z;
                edge.max(face)
            }
            Solid::Ellipsoid { center, radii } => u.dot(center) + u.component_mul(radii).norm(),
            Solid::Union(parts) => parts.iter().map(|s| s.support(u)).fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// A rigid primitive with its geometry and safe sampling range.
#[derive(Clone, Debug, PartialEq)]
pub struct Indenter {
    pub id: IndenterId,
    pub safe_pose_range: PoseRange,
    solid: Solid,
    bound_center: Vector3<f64>,
    bound_radius: f64,
}

/// Side length of the cube indenter, chosen as a whole number of default pixels.
pub const CUBE_SIDE_MM: f64 = 9.0;
pub const BIG_SPHERE_RADIUS_MM: f64 = 9.0;
pub const SMALL_SPHERE_RADIUS_MM: f64 = 4.0;

impl Indenter {
    pub fn new(id: IndenterId) -> Self {
        let z = Vector3::z();
        let (solid, bound_center) = match id {
            IndenterId::BigSphere => {
                let r = BIG_SPHERE_RADIUS_MM;
                (Solid::Sphere { center: z * r, radius: r }, z * r)
            }
            IndenterId::SmallSphere => {
                let r = SMALL_SPHERE_RADIUS_MM;
                (Solid::Sphere { center: z * r, radius: r }, z * r)
            }
            IndenterId::Cylinder => (
                Solid::Cylinder {
                    center: Vector2::zeros(),
                    radius: 3.0,
                    height: 10.0,
                },
                z * 5.0,
            ),
            IndenterId::TripleCylinder => {
                let parts = [90.0f64, 210.0, 330.0]
                    .iter()
                    .map(|a| Solid::Cylinder {
                        center: Vector2::new(a.to_radians().cos(), a.to_radians().sin()) * 4.0,
                        radius: 1.5,
                        height: 8.0,
                    })
                    .collect();
                (Solid::Union(parts), z * 4.0)
            }
            IndenterId::Ring => (
                Solid::Tube {
                    outer: 5.0,
                    inner: 3.5,
                    height: 6.0,
                },
                z * 3.0,
            ),
            IndenterId::Cross => {
                let c = z * 3.0;
                let bar = |hx, hy| Solid::Box {
                    center: c,
                    half: Vector3::new(hx, hy, 3.0),
                };
                (Solid::Union(vec![bar(6.0, 1.5), bar(1.5, 6.0)]), c)
            }
            IndenterId::Cube => {
                let h = 0.5 * CUBE_SIDE_MM;
                (
                    Solid::Box {
                        center: z * h,
                        half: Vector3::new(h, h, h),
                    },
                    z * h,
                )
            }
            IndenterId::Cone => (
                Solid::Cone {
                    half_angle: 60f64.to_radians(),
                    height: 5.0,
                },
                z * 2.5,
            ),
            IndenterId::Wedge => (
                Solid::Wedge {
                    half_angle: 60f64.to_radians(),
                    half_length: 5.0,
                    height: 4.0,
                },
                z * 2.0,
            ),
            IndenterId::Ellipsoid => {
                let c = z * 3.0;
                (
                    Solid::Ellipsoid {
                        center: c,
                        radii: Vector3::new(6.0, 4.0, 3.0),
                    },
                    c,
                )
            }
        };
        Self {
            id,
            safe_pose_range: PoseRange::default(),
            solid,
            bound_center,
            bound_radius: 10.0,
        }
    }

    pub fn all() -> Vec<Indenter> {
        IndenterId::ALL.iter().map(|&i| Indenter::new(i)).collect()
    }

    pub fn with_safe_range(mut self, range: PoseRange) -> Self {
        self.safe_pose_range = range;
        self
    }

    /// Signed distance bound in the tool frame (negative inside).
    pub fn sdf(&self, p: Vector3<f64>) -> f64 {
        self.solid.sdf(p)
    }

    /// Support function in the tool frame.
    pub fn support(&self, dir: Vector3<f64>) -> f64 {
        self.solid.support(dir)
    }

    /// Disjoint parts of a composite shape as standalone indenters (`[self]` otherwise).
    pub fn components(&self) -> Vec<Indenter> {
        match &self.solid {
            Solid::Union(parts) => parts
                .iter()
                .map(|s| Indenter {
                    solid: s.clone(),
                    ..self.clone()
                })
                .collect(),
            _ => vec![self.clone()],
        }
    }

    /// Center and radius (mm) of a tool-frame sphere enclosing the body.
    pub fn bounding_sphere(&self) -> (Vector3<f64>, f64) {
        (self.bound_center, self.bound_radius)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        let t = |i: usize| i as f64 / (n - 1) as f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    pts.push(Vector3::new(-11.0 + 22.0 * t(i), -11.0 + 22.0 * t(j), -2.0 + 24.0 * t(k)));
                }
            }
        }
        pts
    }

    fn sample_points() -> Vec<Vector3<f64>> {
        grid(14)
    }

    #[test]
    fn names_round_trip() {
        for id in IndenterId::ALL {
            assert_eq!(id.name().parse::<IndenterId>().unwrap(), id);
            assert_eq!(IndenterId::from_code(id.code()), Some(id));
        }
    }

    #[test]
    fn sdf_is_one_lipschitz() {
        let pts = sample_points();
        for ind in Indenter::all() {
            for w in pts.windows(2).step_by(7) {
                let (a, b) = (w[0], w[1]);
                let lhs = (ind.sdf(a) - ind.sdf(b)).abs();
                assert!(lhs <= (a - b).norm() + 1e-12, "{}: {lhs}", ind.id);
            }
            for (i, &a) in pts.iter().enumerate().step_by(97) {
                let b = pts[(i * 31 + 17) % pts.len()];
                assert!((ind.sdf(a) - ind.sdf(b)).abs() <= (a - b).norm() + 1e-12, "{}", ind.id);
            }
        }
    }

    #[test]
    fn bodies_fit_bounding_sphere_and_touch_origin_plane() {
        for ind in Indenter::all() {
            let (c, r) = ind.bounding_sphere();
            assert!(r <= 10.0);
            for p in sample_points() {
                if ind.sdf(p) < 0.0 {
                    assert!((p - c).norm() <= r, "{} point {p:?} escapes bound", ind.id);
                }
            }
            // lowest point of the unrotated body is exactly on z = 0
            assert!(ind.support(-Vector3::z()).abs() < 1e-12, "{}", ind.id);
        }
    }

    #[test]
    fn support_dominates_interior_points() {
        let dirs = [
            Vector3::new(0.3, -0.2, -0.93),
            Vector3::new(-0.5, 0.5, 0.7),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.17, 0.0, -0.98),
        ];
        let fine = grid(45);
        for ind in Indenter::all() {
            for d in dirs {
                let d = d.normalize();
                let h = ind.support(d);
                let mut best = f64::NEG_INFINITY;
                for &p in &fine {
                    if ind.sdf(p) <= 0.0 {
                        assert!(d.dot(&p) <= h + 1e-9, "{}", ind.id);
                        best = best.max(d.dot(&p));
                    }
                }
                assert!(h - best < 1.25, "{}: support {h} vs sampled {best}", ind.id);
            }
        }
    }
}
