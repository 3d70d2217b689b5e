//! Simulated sensor/gel combinations and their TOML representation.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FafError, Result};

/// One point light. Azimuth is measured in the sensor x-y plane from +x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    /// Linear RGB weights, each in `[0, 1]`.
    pub color: [f64; 3],
    pub gain: f64,
}

impl Light {
    pub fn direction(&self) -> Vector3<f64> {
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

/// Seeded low-frequency texture used as the no-contact background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub seed: u64,
    /// Mean RGB level.
    pub base: [f64; 3],
    /// Peak deviation added by the texture.
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorProfile {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Active area along the columns (u axis), mm.
    pub width_mm: f64,
    /// Active area along the rows (v axis), mm.
    pub height_mm: f64,
    /// Normal foundation stiffness, N/mm per mm² of pixel area.
    pub stiffness: f64,
    /// Tangential stiffness, same units.
    pub shear_stiffness: f64,
    /// Stick-slip bound on `|(F^x, F^y)| / F^z`.
    pub friction: f64,
    pub noise_sigma: f64,
    /// Force quantization step, N.
    pub quantization: f64,
    pub gel_thickness_mm: f64,
    pub background: BackgroundSpec,
    pub lights: Vec<Light>,
}

const SENSOR_COUNT: usize = 3;
const GEL_STIFFNESS: [f64; 3] = [0.12, 0.11, 0.13];

/// Names of the built-in profiles in code order.
pub fn builtin_names() -> Vec<String> {
    let mut names = Vec::with_capacity(10);
    for s in 1..=SENSOR_COUNT {
        for g in 1..=GEL_STIFFNESS.len() {
            names.push(format!("sensor{s}-gel{g}"));
        }
    }
    names.push("digit".to_string());
    names
}

fn rgb_lights(azimuths: [f64; 3], elevation: f64, colors: [[f64; 3]; 3], gain: f64) -> Vec<Light> {
    azimuths
        .iter()
        .zip(colors)
        .map(|(&azimuth_deg, color)| Light {
            azimuth_deg,
            elevation_deg: elevation,
            color,
            gain,
        })
        .collect()
}

impl SensorProfile {
    fn base(name: &str, stiffness: f64, background: BackgroundSpec, lights: Vec<Light>) -> Self {
        Self {
            name: name.to_string(),
            rows: 48,
            cols: 64,
            width_mm: 24.0,
            height_mm: 18.0,
            stiffness,
            shear_stiffness: 1.2 * stiffness,
            friction: 0.25,
            noise_sigma: 1.5,
            quantization: 0.04,
            gel_thickness_mm: 3.0,
            background,
            lights,
        }
    }

    /// Look up a built-in profile: `sensor{1..3}-gel{1..3}` or `digit`.
    pub fn builtin(name: &str) -> Result<Self> {
        if name == "digit" {
            let colors = [[1.0, 0.3, 0.3], [0.3, 1.0, 0.3], [0.3, 0.3, 1.0], [0.8, 0.8, 0.2]];
            let lights = [45.0, 135.0, 225.0, 315.0]
                .iter()
                .zip(colors)
                .map(|(&azimuth_deg, color)| Light {
                    azimuth_deg,
                    elevation_deg: 25.0,
                    color,
                    gain: 120.0,
                })
                .collect();
            let bg = BackgroundSpec {
                seed: 40,
                base: [70.0, 85.0, 120.0],
                amplitude: 14.0,
            };
            return Ok(Self::base(name, 2.0 * GEL_STIFFNESS[0], bg, lights));
        }
        let parsed = name
            .strip_prefix("sensor")
            .and_then(|rest| rest.split_once("-gel"))
            .and_then(|(s, g)| Some((s.parse::<usize>().ok()?, g.parse::<usize>().ok()?)));
        let (sensor, gel) = match parsed {
            Some((s, g)) if (1..=SENSOR_COUNT).contains(&s) && (1..=GEL_STIFFNESS.len()).contains(&g) => (s, g),
            _ => return Err(FafError::Config(format!("unknown sensor profile `{name}`"))),
        };
        let pure = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let (lights, bg) = match sensor {
            1 => (
                rgb_lights([0.0, 120.0, 240.0], 35.0, pure, 150.0),
                BackgroundSpec {
                    seed: 11,
                    base: [110.0, 100.0, 95.0],
                    amplitude: 10.0,
                },
            ),
            2 => (
                rgb_lights(
                    [15.0, 135.0, 255.0],
                    30.0,
                    [[1.0, 0.15, 0.1], [0.1, 1.0, 0.2], [0.15, 0.1, 1.0]],
                    170.0,
                ),
                BackgroundSpec {
                    seed: 12,
                    base: [95.0, 110.0, 105.0],
                    amplitude: 12.0,
                },
            ),
            _ => (
                rgb_lights(
                    [-20.0, 100.0, 220.0],
                    40.0,
                    [[0.9, 0.1, 0.2], [0.2, 0.9, 0.1], [0.1, 0.2, 0.9]],
                    135.0,
                ),
                BackgroundSpec {
                    seed: 13,
                    base: [105.0, 95.0, 115.0],
                    amplitude: 8.0,
                },
            ),
        };
        Ok(Self::base(name, GEL_STIFFNESS[gel - 1], bg, lights))
    }

    pub fn all_builtin() -> Vec<Self> {
        builtin_names()
            .iter()
            .map(|n| Self::builtin(n).expect("builtin names resolve"))
            .collect()
    }

    /// Resolve a built-in name, or read a TOML file when `spec` names one.
    pub fn resolve(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.extension().is_some_and(|e| e == "toml") {
            Self::load(path)
        } else {
            Self::builtin(spec)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: Self = toml::from_str(text).map_err(|e| FafError::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(FafError::Config(format!("profile `{}`: {msg}", self.name)));
        if self.rows == 0 || self.cols == 0 {
            return bad("pixel grid must be non-empty");
        }
        if !(self.width_mm > 0.0 && self.height_mm > 0.0) {
            return bad("active area must be positive");
        }
        if !(self.stiffness > 0.0 && self.shear_stiffness >= 0.0) {
            return bad("stiffness must be positive");
        }
        if !(self.friction >= 0.0 && self.noise_sigma >= 0.0) {
            return bad("friction and noise must be non-negative");
        }
        if !(self.quantization > 0.0 && self.gel_thickness_mm > 0.0) {
            return bad("quantization and gel thickness must be positive");
        }
        if self.lights.len() < 2 {
            return bad("at least two lights are required");
        }
        for l in &self.lights {
            if !(l.elevation_deg > 0.0 && l.elevation_deg <= 90.0) || l.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return bad("light elevation must be in (0, 90] and colors in [0, 1]");
            }
        }
        let b = &self.background;
        if b.base.iter().any(|&c| c - b.amplitude < 0.0 || c + b.amplitude > 255.0) {
            return bad("background must stay within [0, 255]");
        }
        Ok(())
    }

    pub fn pixel_pitch(&self) -> (f64, f64) {
        (self.width_mm / self.cols as f64, self.height_mm / self.rows as f64)
    }

    pub fn pixel_area(&self) -> f64 {
        let (pu, pv) = self.pixel_pitch();
        pu * pv
    }

    /// Sensor-frame (u, v) of the center of pixel (row, col); the grid is centered on the origin.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let (pu, pv) = self.pixel_pitch();
        (
            (col as f64 + 0.5) * pu - 0.5 * self.width_mm,
            (row as f64 + 0.5) * pv - 0.5 * self.height_mm,
        )
    }

    /// Same geometry and lighting with every pixel split `factor × factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            rows: self.rows * factor,
            cols: self.cols * factor,
            ..self.clone()
        }
    }

    /// No-contact image, row-major `rows × cols × 3`.
    pub fn background_image(&self) -> Vec<u8> {
        let b = &self.background;
        // a handful of seeded plane waves per channel with wavelengths of a few mm
        let mut rng = ChaCha8Rng::seed_from_u64(b.seed);
        let mut next = || rng.gen::<f64>();
        const WAVES: usize = 4;
        let mut waves = [[(0.0, 0.0, 0.0); WAVES]; 3];
        for channel in waves.iter_mut() {
            for w in channel.iter_mut() {
                let angle = next() * std::f64::consts::TAU;
                let freq = 0.08 + 0.25 * next();
                *w = (freq * angle.cos(), freq * angle.sin(), next() * std::f64::consts::TAU);
            }
        }
        let mut img = Vec::with_capacity(self.rows * self.cols * 3);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (u, v) = self.pixel_center(r, c);
                for (ch, ws) in waves.iter().enumerate() {
                    let tex: f64 = ws.iter().map(|&(ku, kv, ph)| (ku * u + kv * v + ph).sin()).sum::<f64>() / WAVES as f64;
                    img.push((b.base[ch] + b.amplitude * tex).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        img
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid_and_distinct() {
        let all = SensorProfile::all_builtin();
        assert_eq!(all.len(), 10);
        for p in &all {
            p.validate().unwrap();
        }
        let digit = SensorProfile::builtin("digit").unwrap();
        let s1 = SensorProfile::builtin("sensor1-gel1").unwrap();
        assert_eq!(digit.stiffness, 2.0 * s1.stiffness);
        assert_ne!(digit.lights.len(), s1.lights.len());
        assert_ne!(s1.background_image(), SensorProfile::builtin("sensor2-gel1").unwrap().background_image());
        assert_eq!(
            s1.background_image(),
            SensorProfile::builtin("sensor1-gel3").unwrap().background_image()
        );
        assert!(SensorProfile::builtin("sensor4-gel1").is_err());
    }

    #[test]
    fn toml_round_trip() {
        for p in SensorProfile::all_builtin() {
            let text = p.to_toml_string();
            assert_eq!(SensorProfile::from_toml_str(&text).unwrap(), p);
        }
    }

    #[test]
    fn invalid_profiles_rejected() {
        let mut p = SensorProfile::builtin("sensor1-gel1").unwrap();
        p.lights.truncate(1);
        assert!(p.validate().is_err());
        let mut p = SensorProfile::builtin("sensor1-gel1").unwrap();
        p.stiffness = 0.0;
        assert!(p.validate().is_err());
        let mut p = SensorProfile::builtin("sensor1-gel1").unwrap();
        p.quantization = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn default_grid_geometry() {
        let p = SensorProfile::builtin("sensor1-gel1").unwrap();
        assert_eq!(p.pixel_pitch(), (0.375, 0.375));
        assert_eq!(p.pixel_area(), 0.140625);
        assert_eq!(p.pixel_center(0, 0), (-11.8125, -8.8125));
        assert_eq!(p.background_image().len(), 48 * 64 * 3);
    }
}
