//! Direct least-squares ellipse fitting and rim deformation.

use nalgebra::{Matrix2, Matrix3, Schur, SymmetricEigen, Vector2, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{FafError, Result};

pub const MIN_POINTS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Semi-major axis.
    pub a: f64,
    /// Semi-minor axis, `b ≤ a`.
    pub b: f64,
    /// Direction of the major axis, radians in `(−π/2, π/2]`.
    pub angle: f64,
}

impl Ellipse {
    /// Point at parameter `t` on the boundary.
    pub fn point(&self, t: f64) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        let (x, y) = (self.a * t.cos(), self.b * t.sin());
        [self.center[0] + c * x - s * y, self.center[1] + s * x + c * y]
    }

    /// `n` evenly spaced boundary points.
    pub fn sample(&self, n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|i| self.point(std::f64::consts::TAU * i as f64 / n as f64))
            .collect()
    }
}

fn degenerate(msg: impl Into<String>) -> FafError {
    FafError::DegenerateInput(msg.into())
}

/// Real eigenvalues of a general 3×3 matrix.
fn real_eigenvalues(m: &Matrix3<f64>) -> Vec<f64> {
    if let Some(ev) = Schur::new(*m).eigenvalues() {
        return ev.iter().copied().collect();
    }
    let ev = m.complex_eigenvalues();
    let scale = ev.iter().map(|z| z.norm()).fold(0.0, f64::max);
    ev.iter().filter(|z| z.im.abs() <= 1e-10 * scale).map(|z| z.re).collect()
}

/// Unit null vector of `m − λI`.
fn eigenvector(m: &Matrix3<f64>, lambda: f64) -> Vector3<f64> {
    let svd = SVD::new(m - Matrix3::identity() * lambda, false, true);
    let v_t = svd.v_t.expect("requested");
    let (i, _) = svd.singular_values.argmin();
    v_t.row(i).transpose()
}

/// Best-fit ellipse through `points` (Halir–Flusser, on centered and scaled coordinates).
pub fn fit_ellipse(points: &[[f64; 2]]) -> Result<Ellipse> {
    if points.len() < MIN_POINTS {
        return Err(degenerate(format!("need at least {MIN_POINTS} points, got {}", points.len())));
    }
    if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(degenerate("non-finite point"));
    }
    let n = points.len() as f64;
    let mean = points.iter().fold([0.0; 2], |m, p| [m[0] + p[0] / n, m[1] + p[1] / n]);
    let scale = (points
        .iter()
        .map(|p| (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if !(scale > 0.0) {
        return Err(degenerate("all points coincide"));
    }
    let (mut s1, mut s2, mut s3) = (Matrix3::zeros(), Matrix3::zeros(), Matrix3::zeros());
    for p in points {
        let (x, y) = ((p[0] - mean[0]) / scale, (p[1] - mean[1]) / scale);
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    // collinear points make the linear scatter singular
    if s3.determinant().abs() < 1e-12 * n.powi(3) {
        return Err(degenerate("points are collinear"));
    }
    let s3_inv = s3.try_inverse().ok_or_else(|| degenerate("points are collinear"))?;
    let t = -s3_inv * s2.transpose();
    let reduced = s1 + s2 * t;
    let c1_inv = Matrix3::new(0.0, 0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0, 0.0);
    let m = c1_inv * reduced;

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in real_eigenvalues(&m) {
        let v = eigenvector(&m, lambda);
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 && best.map_or(true, |(c, _)| cond > c) {
            best = Some((cond, v));
        }
    }
    let (_, a1) = best.ok_or_else(|| degenerate("no elliptical conic fits the points"))?;
    let a2 = t * a1;
    let (ca, cb, cc, cd, ce, cf) = (a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]);

    let q = Matrix2::new(2.0 * ca, cb, cb, 2.0 * cc);
    let c = q
        .try_inverse()
        .ok_or_else(|| degenerate("conic has no center"))?
        * Vector2::new(-cd, -ce);
    let f0 = cf + 0.5 * (cd * c[0] + ce * c[1]);
    let eig = SymmetricEigen::new(Matrix2::new(ca, cb / 2.0, cb / 2.0, cc));
    let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    let (r0, r1) = (-f0 / l0, -f0 / l1);
    if !(r0 > 0.0 && r1 > 0.0) {
        return Err(degenerate("fitted conic is not a real ellipse"));
    }
    // the major axis belongs to the smaller eigenvalue magnitude
    let (major, a, b) = if r0 >= r1 { (0, r0.sqrt(), r1.sqrt()) } else { (1, r1.sqrt(), r0.sqrt()) };
    let dir = eig.eigenvectors.column(major);
    let mut angle = dir[1].atan2(dir[0]);
    if angle <= -std::f64::consts::FRAC_PI_2 {
        angle += std::f64::consts::PI;
    } else if angle > std::f64::consts::FRAC_PI_2 {
        angle -= std::f64::consts::PI;
    }
    Ok(Ellipse {
        center: [mean[0] + scale * c[0], mean[1] + scale * c[1]],
        a: a * scale,
        b: b * scale,
        angle,
    })
}

/// A rim contour and its unloaded radius (same units).
#[derive(Clone, Debug, PartialEq)]
pub struct RimObservation {
    pub points: Vec<[f64; 2]>,
    pub r0: f64,
}

/// Growth of the major semi-axis relative to the unloaded radius, in percent.
pub fn deformation_percent(rim: &RimObservation, fitted: &Ellipse) -> Result<f64> {
    if !(rim.r0 > 0.0) {
        return Err(FafError::Contract(format!("unloaded radius must be positive, got {}", rim.r0)));
    }
    Ok(100.0 * (fitted.a - rim.r0) / rim.r0)
}

/// Unloaded radius from a rim fit, the mean of the two semi-axes.
pub fn reference_radius(points: &[[f64; 2]]) -> Result<f64> {
    let e = fit_ellipse(points)?;
    Ok(0.5 * (e.a + e.b))
}
