//! Weighing an object by pushing it at constant velocity.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TactileSample};
use crate::error::{FafError, Result};
use crate::parallel::job_seed;
use crate::report::{fmt6, line_plot_svg, Series};
use crate::sensor::{press_to_load, quantize, render_with_background, Indenter, IndenterId, Pose, SensorProfile};
use crate::training::ForceEstimator;

pub const GRAVITY: f64 = 9.81;
pub const MAX_FRICTION: f64 = 1.5;

/// Shape of the virtual contact patch the pushed object presents to the gel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchKind {
    Flat,
    Curved,
}

impl PatchKind {
    pub fn indenter(self) -> Indenter {
        Indenter::new(match self {
            Self::Flat => IndenterId::Cube,
            Self::Curved => IndenterId::BigSphere,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PushScenario {
    pub mass_kg: f64,
    pub mu: f64,
    pub velocity_mps: f64,
    /// Length of the initial constant-acceleration ramp.
    pub accel_time_s: f64,
    pub duration_s: f64,
    pub frame_period_s: f64,
    pub profile: String,
    pub patch: PatchKind,
    /// Placement jitter of the patch over the gel, mm.
    pub placement_mm: f64,
    pub seed: u64,
}

impl Default for PushScenario {
    fn default() -> Self {
        Self {
            mass_kg: 1.0,
            mu: 0.2283,
            velocity_mps: 0.05,
            accel_time_s: 1.0,
            duration_s: 15.0,
            frame_period_s: 0.5,
            profile: "sensor1-gel1".into(),
            patch: PatchKind::Flat,
            placement_mm: 2.0,
            seed: 0,
        }
    }
}

impl PushScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FafError::Config(m));
        if !(self.mu >= 0.0 && self.mu <= MAX_FRICTION) {
            return bad(format!("friction must lie in [0, {MAX_FRICTION}], got {}", self.mu));
        }
        if !(self.mass_kg >= 0.0 && self.mass_kg.is_finite()) {
            return bad(format!("mass must be >= 0, got {}", self.mass_kg));
        }
        if !(self.frame_period_s > 0.0 && self.accel_time_s > 0.0 && self.velocity_mps >= 0.0) {
            return bad("frame period and ramp time must be positive, velocity >= 0".into());
        }
        if !(self.duration_s > self.accel_time_s + self.frame_period_s) {
            return bad("push must include a constant-velocity segment".into());
        }
        if self.placement_mm < 0.0 {
            return bad("placement jitter must be >= 0".into());
        }
        Ok(())
    }

    /// Required push force `m·v̇ + μ·m·g` at time `t`.
    pub fn push_force(&self, t: f64) -> f64 {
        let accel = if t < self.accel_time_s { self.velocity_mps / self.accel_time_s } else { 0.0 };
        self.mass_kg * accel + self.mu * self.mass_kg * GRAVITY
    }

    pub fn is_constant_velocity(&self, t: f64) -> bool {
        t >= self.accel_time_s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PushFrame {
    pub time: f64,
    /// Contact normal force, N.
    pub true_force: f64,
    pub constant_velocity: bool,
}

/// One simulated push: per-frame ground truth and the rendered tactile samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PushTrace {
    pub scenario: PushScenario,
    pub frames: Vec<PushFrame>,
    pub samples: Dataset,
}

impl PushTrace {
    pub fn constant_indices(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| self.frames[i].constant_velocity).collect()
    }
}

/// Simulate a push, rendering each frame at the contact that carries the push force.
pub fn simulate_push(scn: &PushScenario) -> Result<PushTrace> {
    scn.validate()?;
    let profile = SensorProfile::resolve(&scn.profile)?;
    let background = profile.background_image();
    let indenter = scn.patch.indenter();
    let mut rng = ChaCha8Rng::seed_from_u64(job_seed(scn.seed, 0x7075_7368, 0));
    let j = scn.placement_mm;
    let pose = Pose {
        x: if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 },
        y: if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 },
        yaw: rng.gen_range(-180.0..180.0),
        ..Pose::default()
    };
    let n = (scn.duration_s / scn.frame_period_s).floor() as usize + 1;
    let mut contacts = HashMap::new();
    let mut frames = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * scn.frame_period_s;
        let f = scn.push_force(t);
        let contact = match contacts.get(&f.to_bits()) {
            Some(c) => c,
            None => {
                let c = press_to_load(&indenter, &pose, f, &profile)?;
                contacts.entry(f.to_bits()).or_insert(c)
            }
        };
        let frame = render_with_background(contact, &profile, &background, job_seed(scn.seed, 1, k as u64));
        frames.push(PushFrame {
            time: t,
            true_force: f,
            constant_velocity: scn.is_constant_velocity(t),
        });
        samples.push(TactileSample {
            rows: profile.rows as u16,
            cols: profile.cols as u16,
            image: frame.image,
            depth: frame.depth,
            force: [0.0, 0.0, quantize(f, profile.quantization) as f32],
            pose: pose.to_array().map(|v| v as f32),
            indenter: indenter.id.code(),
            profile: 0,
        });
    }
    Ok(PushTrace {
        scenario: scn.clone(),
        frames,
        samples: Dataset {
            profiles: vec![scn.profile.clone()],
            samples,
        },
    })
}

/// `μ̂ = f̄ / (m·g)` from a push of known mass.
pub fn fit_friction(mass_kg: f64, mean_force: f64) -> Result<f64> {
    if !(mass_kg > 0.0) {
        return Err(FafError::Contract(format!("mass must be positive, got {mass_kg}")));
    }
    Ok(mean_force / (mass_kg * GRAVITY))
}

/// Friction fitted to the force-sensor readings (the sample labels) of pushes of known mass.
pub fn fit_friction_from_pushes(traces: &[PushTrace]) -> Result<f64> {
    let (mut sum, mut n, mut mass) = (0.0, 0usize, 0.0);
    for tr in traces {
        for i in tr.constant_indices() {
            sum += tr.samples.samples[i].fz();
            n += 1;
        }
        mass += tr.scenario.mass_kg;
    }
    if n == 0 {
        return Err(FafError::Contract("no constant-velocity frames to fit friction on".into()));
    }
    fit_friction(mass / traces.len() as f64, sum / n as f64)
}

/// Per-push estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct WeighTrial {
    pub true_force: f64,
    pub est_force: f64,
    pub true_mass: f64,
    pub est_mass: f64,
    /// Estimated `F^z` for every frame, for plotting.
    pub series: Vec<f64>,
}

/// Pushes averaged into one weight estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct WeighReport {
    pub estimator: String,
    pub mu: f64,
    pub trials: Vec<WeighTrial>,
    pub true_force: f64,
    pub est_force: f64,
    pub true_mass: f64,
    pub est_mass: f64,
}

impl WeighReport {
    pub fn force_error(&self) -> f64 {
        (self.est_force - self.true_force).abs()
    }

    pub fn mass_error(&self) -> f64 {
        (self.est_mass - self.true_mass).abs()
    }

    pub fn relative_mass_error(&self) -> f64 {
        self.mass_error() / self.true_mass
    }

    /// One row per push and a final averaged row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,force_gt,force_est,force_error,mass_gt,mass_est,mass_error\n");
        let row = |label: String, tf: f64, ef: f64, tm: f64, em: f64| {
            format!(
                "{label},{},{},{},{},{},{}\n",
                fmt6(tf),
                fmt6(ef),
                fmt6((ef - tf).abs()),
                fmt6(tm),
                fmt6(em),
                fmt6((em - tm).abs())
            )
        };
        for (i, t) in self.trials.iter().enumerate() {
            out += &row(i.to_string(), t.true_force, t.est_force, t.true_mass, t.est_mass);
        }
        out += &row("mean".into(), self.true_force, self.est_force, self.true_mass, self.est_mass);
        out
    }
}

/// Estimate the pushed mass as `f̂_p / (μ·g)` with `f̂_p` the mean constant-velocity `F^z`.
pub fn estimate_weight(traces: &[PushTrace], mu: f64, estimator: &dyn ForceEstimator) -> Result<WeighReport> {
    if !(mu > 0.0) {
        return Err(FafError::Contract(format!("friction must be positive to weigh, got {mu}")));
    }
    if traces.is_empty() {
        return Err(FafError::Contract("no pushes to average".into()));
    }
    let mut trials = Vec::with_capacity(traces.len());
    let (mut sum_t, mut sum_e, mut count) = (0.0, 0.0, 0usize);
    for tr in traces {
        let est = estimator.estimate(&tr.samples)?;
        let idx = tr.constant_indices();
        let tf: f64 = idx.iter().map(|&i| tr.frames[i].true_force).sum();
        let ef: f64 = idx.iter().map(|&i| est[i][2]).sum();
        sum_t += tf;
        sum_e += ef;
        count += idx.len();
        let k = idx.len() as f64;
        trials.push(WeighTrial {
            true_force: tf / k,
            est_force: ef / k,
            true_mass: tr.scenario.mass_kg,
            est_mass: ef / k / (mu * GRAVITY),
            series: est.iter().map(|f| f[2]).collect(),
        });
    }
    let (true_force, est_force) = (sum_t / count as f64, sum_e / count as f64);
    let true_mass = traces.iter().map(|t| t.scenario.mass_kg).sum::<f64>() / traces.len() as f64;
    Ok(WeighReport {
        estimator: estimator.name().to_string(),
        mu,
        trials,
        true_force,
        est_force,
        true_mass,
        est_mass: est_force / (mu * GRAVITY),
    })
}

/// Force-vs-time plot of each push: ground truth and estimate.
pub fn push_plot_svg(traces: &[PushTrace], report: &WeighReport) -> String {
    let mut owned = Vec::new();
    for (i, (tr, trial)) in traces.iter().zip(&report.trials).enumerate() {
        let truth: Vec<_> = tr.frames.iter().map(|f| (f.time, f.true_force)).collect();
        let est: Vec<_> = tr.frames.iter().zip(&trial.series).map(|(f, &e)| (f.time, e)).collect();
        owned.push((format!("push {i} ground truth"), truth));
        owned.push((format!("push {i} {}", report.estimator), est));
    }
    let series: Vec<_> = owned.iter().map(|(l, p)| Series { label: l, points: p }).collect();
    line_plot_svg("Push force", "time [s]", "force [N]", &series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::OracleEstimator;

    fn short(mass: f64, mu: f64) -> PushScenario {
        PushScenario {
            mass_kg: mass,
            mu,
            duration_s: 3.0,
            ..PushScenario::default()
        }
    }

    #[test]
    fn push_force_law() {
        assert_eq!(short(1.0, 0.0).push_force(2.0), 0.0);
        let s = short(1.0, 0.2283);
        assert!((quantize(s.push_force(5.0), 0.04) - 2.24).abs() < 1e-12);
        let doubled = short(2.0, 0.2283);
        assert!((doubled.push_force(5.0) - 2.0 * s.push_force(5.0)).abs() < 1e-12);
        assert!(s.push_force(0.5) > s.push_force(5.0));
    }

    #[test]
    fn friction_fit() {
        assert!((fit_friction(1.0, 2.24).unwrap() - 0.2283).abs() < 1e-4);
        assert_eq!(fit_friction(3.0, 0.0).unwrap(), 0.0);
        assert_eq!(fit_friction(1.0, 2.24).unwrap(), fit_friction(2.0, 4.48).unwrap());
        assert!(fit_friction(0.0, 1.0).is_err());
    }

    #[test]
    fn oracle_weighing_closes_within_quantization() {
        let s = short(1.0, 0.2283);
        let tr = simulate_push(&s).unwrap();
        assert_eq!(tr.frames.len(), 7);
        assert_eq!(tr.constant_indices().len(), 5);
        let r = estimate_weight(&[tr.clone()], s.mu, &OracleEstimator).unwrap();
        assert!(r.mass_error() <= 0.04 / (s.mu * GRAVITY));
        assert!(matches!(estimate_weight(&[tr.clone()], 0.0, &OracleEstimator), Err(FafError::Contract(_))));
        assert!(r.to_csv().lines().last().unwrap().starts_with("mean,"));
        let mu = fit_friction_from_pushes(&[tr.clone()]).unwrap();
        assert!((mu - 2.24 / GRAVITY).abs() < 1e-9);
        let fitted = estimate_weight(&[tr], mu, &OracleEstimator).unwrap();
        assert!(fitted.mass_error() < 1e-12);
    }

    #[test]
    fn zero_friction_push_is_contact_free() {
        let tr = simulate_push(&short(1.0, 0.0)).unwrap();
        for i in tr.constant_indices() {
            assert_eq!(tr.frames[i].true_force, 0.0);
            assert!(tr.samples.samples[i].depth.iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn invalid_scenarios() {
        for s in [
            PushScenario { mu: 2.0, ..short(1.0, 0.2) },
            PushScenario { duration_s: 1.0, ..short(1.0, 0.2) },
            PushScenario { mass_kg: -1.0, ..short(1.0, 0.2) },
        ] {
            assert!(matches!(simulate_push(&s), Err(FafError::Config(_))));
        }
    }
}
