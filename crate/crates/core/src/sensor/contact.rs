//! Winkler-foundation contact: penetration field and the ground-truth force.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{FafError, Result};
use crate::sensor::indenter::Indenter;
use crate::sensor::pose::Pose;
use crate::sensor::profile::SensorProfile;

/// Gel deformation for one indentation step.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactState {
    pub rows: usize,
    pub cols: usize,
    /// Penetration δ (mm), row-major `rows × cols`, zero outside the contact.
    pub penetration: Vec<f64>,
    /// In-plane tool displacement accumulated while pressing, mm.
    pub tangential: [f64; 2],
}

impl ContactState {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            penetration: vec![0.0; rows * cols],
            tangential: [0.0; 2],
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.penetration.iter().map(|&d| d > 0.0).collect()
    }

    pub fn contact_pixels(&self) -> usize {
        self.penetration.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.contact_pixels() == 0
    }

    pub fn max_penetration(&self) -> f64 {
        self.penetration.iter().copied().fold(0.0, f64::max)
    }

    /// `Σ δ` over all pixels (mm).
    pub fn penetration_sum(&self) -> f64 {
        self.penetration.iter().sum()
    }
}

/// Net contact force in the sensor frame, N.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ForceVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl ForceVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn shear(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Round to the nearest multiple of `q`.
///
/// `v / q` is first snapped to 1e-6 steps so values a rounding error away from
/// a half step resolve the same way (away from zero) however they were summed.
pub fn quantize(v: f64, q: f64) -> f64 {
    let steps = ((v / q) * 1e6).round() / 1e6;
    steps.round() * q
}

/// Where the indenter sits for a pose and pressing depth.
struct Placement {
    rotation: Rotation3<f64>,
    origin: Vector3<f64>,
    /// Deepest penetration of the body below the gel plane.
    depth_z: f64,
    tangential: [f64; 2],
}

fn place(indenter: &Indenter, pose: &Pose, depth: f64) -> Placement {
    let rotation = pose.rotation();
    let axis = rotation * Vector3::z();
    // lift so the lowest body point rests on z = 0 before pressing
    let lift = indenter.support(-(rotation.inverse() * Vector3::z()));
    let origin = Vector3::new(pose.x, pose.y, lift) - depth * axis;
    Placement {
        rotation,
        origin,
        depth_z: depth * axis.z,
        tangential: [-depth * axis.x, -depth * axis.y],
    }
}

/// Check the preconditions shared by every contact query.
pub fn check_pose(indenter: &Indenter, pose: &Pose, depth: f64, profile: &SensorProfile) -> Result<()> {
    if !(depth.is_finite() && depth >= 0.0) {
        return Err(FafError::Contract(format!("indentation depth must be >= 0, got {depth}")));
    }
    if !indenter.safe_pose_range.contains(pose) {
        return Err(FafError::Safety(format!(
            "pose {pose:?} is outside the safe range of {}",
            indenter.id
        )));
    }
    let axis_z = pose.tool_axis().z;
    if axis_z <= 0.0 {
        return Err(FafError::Safety("tool axis does not point into the gel".into()));
    }
    if depth * axis_z > profile.gel_thickness_mm {
        return Err(FafError::Safety(format!(
            "penetration {:.4} mm exceeds the {} mm gel thickness",
            depth * axis_z,
            profile.gel_thickness_mm
        )));
    }
    Ok(())
}

const MIN_STEP: f64 = 1e-4;
const BISECTIONS: usize = 60;

/// Lowest body point on the vertical line through `(u, v)` if it lies below `z_top`.
fn lowest_hit(indenter: &Indenter, pl: &Placement, u: f64, v: f64, z_bottom: f64, z_top: f64) -> Option<f64> {
    let inv = pl.rotation.inverse();
    let sdf = |z: f64| indenter.sdf(inv * (Vector3::new(u, v, z) - pl.origin));
    let mut z = z_bottom;
    let mut s = sdf(z);
    if s <= 0.0 {
        return Some(z);
    }
    loop {
        let prev = z;
        z += s.max(MIN_STEP);
        if z > z_top {
            // one final probe at the plane itself
            z = z_top;
            s = sdf(z);
            if s > 0.0 {
                return None;
            }
        } else {
            s = sdf(z);
        }
        if s <= 0.0 {
            let (mut lo, mut hi) = (prev, z);
            for _ in 0..BISECTIONS {
                let mid = 0.5 * (lo + hi);
                if sdf(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(hi);
        }
        if s < 1e-12 {
            return Some(z);
        }
    }
}

/// Penetration field of `indenter` pressed `depth` mm along its tool axis.
pub fn compute_contact(indenter: &Indenter, pose: &Pose, depth: f64, profile: &SensorProfile) -> Result<ContactState> {
    check_pose(indenter, pose, depth, profile)?;
    let mut state = ContactState::empty(profile.rows, profile.cols);
    if depth == 0.0 {
        return Ok(state);
    }
    let pl = place(indenter, pose, depth);
    state.tangential = pl.tangential;

    let (bc, br) = indenter.bounding_sphere();
    let center = pl.origin + pl.rotation * bc;
    let z_bottom = -(pl.depth_z + 1e-3);
    for r in 0..profile.rows {
        for c in 0..profile.cols {
            let (u, v) = profile.pixel_center(r, c);
            if (u - center.x).hypot(v - center.y) > br {
                continue;
            }
            if let Some(z) = lowest_hit(indenter, &pl, u, v, z_bottom, 0.0) {
                let delta = (-z).max(0.0);
                if delta > profile.gel_thickness_mm {
                    return Err(FafError::Safety(format!(
                        "penetration {delta:.4} mm exceeds the gel thickness"
                    )));
                }
                state.penetration[r * profile.cols + c] = delta;
            }
        }
    }
    Ok(state)
}

/// Exact foundation force before the sensor's quantization.
pub fn oracle_force_raw(contact: &ContactState, profile: &SensorProfile) -> ForceVector {
    let volume = contact.penetration_sum() * profile.pixel_area();
    let fz = profile.stiffness * volume;
    let [tx, ty] = contact.tangential;
    let (mut fx, mut fy) = (profile.shear_stiffness * volume * tx, profile.shear_stiffness * volume * ty);
    let cap = profile.friction * fz;
    let mag = fx.hypot(fy);
    if mag > cap {
        let s = if mag > 0.0 { cap / mag } else { 0.0 };
        fx *= s;
        fy *= s;
    }
    ForceVector::new(fx, fy, fz)
}

/// Ground-truth force as read by the simulated force sensor.
pub fn oracle_force(contact: &ContactState, profile: &SensorProfile) -> ForceVector {
    let q = profile.quantization;
    let raw = oracle_force_raw(contact, profile);
    let fz = quantize(raw.z, q);
    let cap = profile.friction * fz;
    // clamp against the quantized normal force, then quantize the shear
    let mag = raw.shear();
    let (mut fx, mut fy) = (raw.x, raw.y);
    if mag > cap {
        let s = if mag > 0.0 { cap / mag } else { 0.0 };
        fx *= s;
        fy *= s;
    }
    let (mut qx, mut qy) = (quantize(fx, q), quantize(fy, q));
    if qx.hypot(qy) > cap {
        qx = (fx / q).trunc() * q;
        qy = (fy / q).trunc() * q;
    }
    ForceVector::new(qx + 0.0, qy + 0.0, fz + 0.0)
}

const LOAD_BISECTIONS: usize = 40;

/// Contact whose unquantized normal load equals `target` N, found by bisection on the pressing depth.
pub fn press_to_load(indenter: &Indenter, pose: &Pose, target: f64, profile: &SensorProfile) -> Result<ContactState> {
    if !(target.is_finite() && target > 0.0) {
        if target.is_nan() || target < 0.0 {
            return Err(FafError::Contract(format!("target load must be >= 0, got {target}")));
        }
        return compute_contact(indenter, pose, 0.0, profile);
    }
    let axis_z = pose.tool_axis().z;
    check_pose(indenter, pose, 0.0, profile)?;
    let (mut lo, mut hi) = (0.0, profile.gel_thickness_mm / axis_z * (1.0 - 1e-9));
    let top = compute_contact(indenter, pose, hi, profile)?;
    if oracle_force_raw(&top, profile).z < target {
        return Err(FafError::Safety(format!(
            "{target:.3} N needs more than the {} mm gel thickness on {}",
            profile.gel_thickness_mm, profile.name
        )));
    }
    for _ in 0..LOAD_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let c = compute_contact(indenter, pose, mid, profile)?;
        if oracle_force_raw(&c, profile).z < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    compute_contact(indenter, pose, hi, profile)
}
