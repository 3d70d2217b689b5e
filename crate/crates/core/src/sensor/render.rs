//! Lambertian rendering of the deformed gel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::sensor::contact::ContactState;
use crate::sensor::profile::SensorProfile;

/// One rendered frame: RGB image (`rows × cols × 3`, row-major) and depth (`rows × cols`, mm).
#[derive(Clone, Debug, PartialEq)]
pub struct TactileFrame {
    pub rows: usize,
    pub cols: usize,
    pub image: Vec<u8>,
    pub depth: Vec<f32>,
}

/// Surface normals of the imprint seen from the camera, `normalize(-∂δ/∂u, -∂δ/∂v, 1)`.
pub fn surface_normals(contact: &ContactState, profile: &SensorProfile) -> Vec<[f64; 3]> {
    let (rows, cols) = (contact.rows, contact.cols);
    let (pu, pv) = profile.pixel_pitch();
    let d = |r: usize, c: usize| contact.penetration[r * cols + c];
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (c0, c1) = (c.saturating_sub(1), (c + 1).min(cols - 1));
            let (r0, r1) = (r.saturating_sub(1), (r + 1).min(rows - 1));
            let du = if c1 > c0 { (d(r, c1) - d(r, c0)) / ((c1 - c0) as f64 * pu) } else { 0.0 };
            let dv = if r1 > r0 { (d(r1, c) - d(r0, c)) / ((r1 - r0) as f64 * pv) } else { 0.0 };
            let norm = (du * du + dv * dv + 1.0).sqrt();
            out.push([-du / norm, -dv / norm, 1.0 / norm]);
        }
    }
    out
}

/// Render the tactile image and depth map for `contact`.
///
/// Each light adds `gain · color · (max(0, n·l) − max(0, l_z))` on top of the
/// background, so a flat gel reproduces the background exactly before noise.
pub fn render_tactile(contact: &ContactState, profile: &SensorProfile, seed: u64) -> TactileFrame {
    let background = profile.background_image();
    render_with_background(contact, profile, &background, seed)
}

/// As [`render_tactile`] with a precomputed background image.
pub fn render_with_background(contact: &ContactState, profile: &SensorProfile, background: &[u8], seed: u64) -> TactileFrame {
    let (rows, cols) = (contact.rows, contact.cols);
    assert_eq!(background.len(), rows * cols * 3, "background does not match the contact grid");
    let lights: Vec<_> = profile.lights.iter().map(|l| (l.direction(), l)).collect();
    let normals = surface_normals(contact, profile);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = Vec::with_capacity(rows * cols * 3);
    for (px, n) in normals.iter().enumerate() {
        let mut shade = [0.0; 3];
        if n[2] < 1.0 {
            for (dir, light) in &lights {
                let lambert = (n[0] * dir.x + n[1] * dir.y + n[2] * dir.z).max(0.0) - dir.z.max(0.0);
                for (s, c) in shade.iter_mut().zip(light.color) {
                    *s += light.gain * c * lambert;
                }
            }
        }
        for (ch, s) in shade.iter().enumerate() {
            let noise = if profile.noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                profile.noise_sigma * z
            } else {
                0.0
            };
            let value = background[px * 3 + ch] as f64 + s + noise;
            image.push(value.round().clamp(0.0, 255.0) as u8);
        }
    }
    TactileFrame {
        rows,
        cols,
        image,
        depth: contact.penetration.iter().map(|&d| d as f32).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::contact::compute_contact;
    use crate::sensor::indenter::{Indenter, IndenterId};
    use crate::sensor::pose::Pose;

    fn noiseless(name: &str) -> SensorProfile {
        SensorProfile {
            noise_sigma: 0.0,
            ..SensorProfile::builtin(name).unwrap()
        }
    }

    #[test]
    fn flat_gel_reproduces_background() {
        let p = noiseless("sensor2-gel1");
        let frame = render_tactile(&ContactState::empty(p.rows, p.cols), &p, 7);
        assert_eq!(frame.image, p.background_image());
        assert!(frame.depth.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn depth_is_light_independent() {
        let p1 = noiseless("sensor1-gel1");
        let mut p2 = p1.clone();
        for l in &mut p2.lights {
            l.color = [l.color[2], l.color[0], l.color[1]];
        }
        let c = compute_contact(&Indenter::new(IndenterId::BigSphere), &Pose::default(), 1.0, &p1).unwrap();
        let (a, b) = (render_tactile(&c, &p1, 1), render_tactile(&c, &p2, 1));
        assert_eq!(a.depth, b.depth);
        assert_ne!(a.image, b.image);
    }

    #[test]
    fn noise_is_seeded() {
        let p = SensorProfile::builtin("sensor1-gel1").unwrap();
        let c = ContactState::empty(p.rows, p.cols);
        assert_eq!(render_tactile(&c, &p, 3), render_tactile(&c, &p, 3));
        assert_ne!(render_tactile(&c, &p, 3).image, render_tactile(&c, &p, 4).image);
    }

    #[test]
    fn sphere_highlights_face_their_light() {
        let p = noiseless("sensor1-gel1");
        let c = compute_contact(&Indenter::new(IndenterId::BigSphere), &Pose::default(), 1.5, &p).unwrap();
        let frame = render_tactile(&c, &p, 0);
        let bg = p.background_image();
        for (ch, light) in p.lights.iter().enumerate() {
            let (mut best, mut at) = (i32::MIN, (0.0, 0.0));
            for r in 0..p.rows {
                for col in 0..p.cols {
                    let i = (r * p.cols + col) * 3 + ch;
                    let diff = frame.image[i] as i32 - bg[i] as i32;
                    if diff > best {
                        best = diff;
                        at = p.pixel_center(r, col);
                    }
                }
            }
            let az = light.azimuth_deg.to_radians();
            let along = at.0 * az.cos() + at.1 * az.sin();
            assert!(best > 0 && along > 0.0, "channel {ch}: max {best} at {at:?}");
        }
    }
}
