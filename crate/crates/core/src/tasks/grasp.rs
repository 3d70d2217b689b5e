//! Closing a gripper on a deformable cup until a target force.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TactileSample};
use crate::error::{FafError, Result};
use crate::parallel::job_seed;
use crate::report::{fmt6, line_plot_svg, Series};
use crate::sensor::{press_to_load, quantize, render_with_background, Pose, SensorProfile};
use crate::tasks::ellipse::{deformation_percent, fit_ellipse, reference_radius, Ellipse, RimObservation};
use crate::tasks::push::PatchKind;
use crate::training::ForceEstimator;

/// Linear-elastic cup rim seen from above.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CupRim {
    /// Unloaded rim radius, px.
    pub r0_px: f64,
    /// Grip force per unit relative major-axis growth, N.
    pub stiffness_n: f64,
    /// Largest relative deformation before the cup is damaged.
    pub max_strain: f64,
    pub points: usize,
    pub noise_px: f64,
}

impl Default for CupRim {
    fn default() -> Self {
        Self {
            r0_px: 100.0,
            // 1.74 N grip ↦ 2.28 % deformation
            stiffness_n: 1.74 / 0.0228,
            max_strain: 0.10,
            points: 100,
            noise_px: 0.5,
        }
    }
}

impl CupRim {
    pub fn strain(&self, force: f64) -> f64 {
        force / self.stiffness_n
    }

    pub fn ellipse(&self, force: f64) -> Ellipse {
        let e = self.strain(force);
        Ellipse {
            center: [160.0, 120.0],
            a: self.r0_px * (1.0 + e),
            b: self.r0_px * (1.0 - e),
            angle: 0.0,
        }
    }

    /// Noisy rim contour under `force`.
    pub fn observe(&self, force: f64, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = self.ellipse(force).sample(self.points);
        if self.noise_px <= 0.0 {
            return pts;
        }
        let n = Normal::new(0.0, self.noise_px).expect("positive sigma");
        pts.into_iter()
            .map(|p| [p[0] + n.sample(&mut rng), p[1] + n.sample(&mut rng)])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspConfig {
    pub target_n: f64,
    /// Gripper closure per step, mm.
    pub step_mm: f64,
    /// Grip force per mm of closure after contact, N/mm.
    pub spring_n_per_mm: f64,
    pub profile: String,
    pub patch: PatchKind,
    pub rim: CupRim,
    pub seed: u64,
}

impl Default for GraspConfig {
    fn default() -> Self {
        Self {
            target_n: 1.74,
            step_mm: 0.1,
            spring_n_per_mm: 0.5,
            profile: "sensor1-gel1".into(),
            patch: PatchKind::Curved,
            rim: CupRim::default(),
            seed: 0,
        }
    }
}

impl GraspConfig {
    /// Force added by one gripper step.
    pub fn increment(&self) -> f64 {
        self.step_mm * self.spring_n_per_mm
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraspOutcome {
    pub target: f64,
    pub steps: usize,
    /// Grip force at the stopping step.
    pub achieved_force: f64,
    /// Larger of the two sensors' estimated `F^z`.
    pub estimated_force: f64,
    pub deformation_gt: f64,
    pub deformation_measured: f64,
    /// `(true grip force, estimated F^z)` at every step.
    pub history: Vec<(f64, f64)>,
}

impl GraspOutcome {
    pub fn overshoot(&self) -> f64 {
        self.achieved_force - self.target
    }
}

pub fn grasp_csv(rows: &[GraspOutcome]) -> String {
    let mut out = String::from("target_n,steps,achieved_n,estimated_n,deformation_gt_pct,deformation_measured_pct\n");
    for r in rows {
        out += &format!(
            "{},{},{},{},{},{}\n",
            fmt6(r.target),
            r.steps,
            fmt6(r.achieved_force),
            fmt6(r.estimated_force),
            fmt6(r.deformation_gt),
            fmt6(r.deformation_measured)
        );
    }
    out
}

/// True and estimated force against gripper step.
pub fn grasp_plot_svg(out: &GraspOutcome) -> String {
    let truth: Vec<_> = out.history.iter().enumerate().map(|(k, h)| (k as f64, h.0)).collect();
    let est: Vec<_> = out.history.iter().enumerate().map(|(k, h)| (k as f64, h.1)).collect();
    let target = vec![(0.0, out.target), (out.steps as f64, out.target)];
    let series = [
        Series { label: "grip force", points: &truth },
        Series { label: "estimated", points: &est },
        Series { label: "target", points: &target },
    ];
    line_plot_svg("Grasp", "step", "force [N]", &series)
}

/// Close in steps until either sensor's estimated `F^z` reaches the target.
pub fn grasp_to_force(cfg: &GraspConfig, estimator: &dyn ForceEstimator) -> Result<GraspOutcome> {
    if !(cfg.step_mm > 0.0 && cfg.spring_n_per_mm > 0.0) {
        return Err(FafError::Contract("gripper step and spring rate must be positive".into()));
    }
    if !(cfg.target_n >= 0.0 && cfg.target_n.is_finite()) {
        return Err(FafError::Contract(format!("target force must be >= 0, got {}", cfg.target_n)));
    }
    let profile = SensorProfile::resolve(&cfg.profile)?;
    let background = profile.background_image();
    let indenter = cfg.patch.indenter();
    let pose = Pose::default();
    let mut force = 0.0;
    let mut steps = 0usize;
    let mut history = Vec::new();
    let estimated = loop {
        if cfg.rim.strain(force) > cfg.rim.max_strain {
            return Err(FafError::TaskFailure(format!(
                "target {} N not reached before the {:.0} % deformation limit",
                cfg.target_n,
                100.0 * cfg.rim.max_strain
            )));
        }
        let contact = press_to_load(&indenter, &pose, force, &profile)?;
        let samples = (0..2)
            .map(|side| {
                let frame = render_with_background(&contact, &profile, &background, job_seed(cfg.seed, side, steps as u64));
                TactileSample {
                    rows: profile.rows as u16,
                    cols: profile.cols as u16,
                    image: frame.image,
                    depth: frame.depth,
                    force: [0.0, 0.0, quantize(force, profile.quantization) as f32],
                    pose: pose.to_array().map(|v| v as f32),
                    indenter: indenter.id.code(),
                    profile: 0,
                }
            })
            .collect();
        let est = estimator.estimate(&Dataset {
            profiles: vec![cfg.profile.clone()],
            samples,
        })?;
        let peak = est.iter().map(|f| f[2]).fold(f64::NEG_INFINITY, f64::max);
        history.push((force, peak));
        if peak >= cfg.target_n {
            break peak;
        }
        steps += 1;
        force = cfg.increment() * steps as f64;
    };
    let r0 = reference_radius(&cfg.rim.observe(0.0, job_seed(cfg.seed, 2, 0)))?;
    let rim = RimObservation {
        points: cfg.rim.observe(force, job_seed(cfg.seed, 2, 1)),
        r0,
    };
    let fitted = fit_ellipse(&rim.points)?;
    Ok(GraspOutcome {
        target: cfg.target_n,
        steps,
        achieved_force: force,
        estimated_force: estimated,
        deformation_gt: 100.0 * cfg.rim.strain(force),
        deformation_measured: deformation_percent(&rim, &fitted)?,
        history,
    })
}
