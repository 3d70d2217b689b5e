//! Pose sampling and stepped indentation trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::sample::{Dataset, TactileSample};
use crate::error::{FafError, Result};
use crate::parallel;
use crate::sensor::contact::{check_pose, compute_contact, oracle_force};
use crate::sensor::{render_with_background, Indenter, IndenterId, Pose, PoseRange, SensorProfile};

pub const DEFAULT_STEP_MM: f64 = 0.05;
pub const DEFAULT_F_MAX: f64 = 15.0;

/// `n` independent uniform poses `(x, y, 0, α, β, γ)` inside `range`.
pub fn sample_poses(range: &PoseRange, n: usize, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |limit: f64| if limit > 0.0 { rng.gen_range(-limit..=limit) } else { 0.0 };
    (0..n)
        .map(|_| {
            let x = draw(range.x_mm);
            let y = draw(range.y_mm);
            let roll = draw(range.roll_deg);
            let pitch = draw(range.pitch_deg);
            let yaw = draw(range.yaw_deg);
            Pose {
                x,
                y,
                z: 0.0,
                roll,
                pitch,
                yaw,
            }
        })
        .collect()
}

/// Identifies the profile and rendering stream of a trajectory.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryTag {
    pub profile_index: u16,
    pub seed: u64,
}

/// Press `indenter` in steps of `step` mm along the tool axis, one sample per step.
///
/// Stops before the first step whose `F^z` exceeds `f_max` or whose penetration
/// would pass the gel thickness.
pub fn run_indentation(
    indenter: &Indenter,
    pose: &Pose,
    profile: &SensorProfile,
    step: f64,
    f_max: f64,
    tag: TrajectoryTag,
) -> Result<Vec<TactileSample>> {
    let background = profile.background_image();
    run_with_background(indenter, pose, profile, &background, step, f_max, tag)
}

pub(crate) fn run_with_background(
    indenter: &Indenter,
    pose: &Pose,
    profile: &SensorProfile,
    background: &[u8],
    step: f64,
    f_max: f64,
    tag: TrajectoryTag,
) -> Result<Vec<TactileSample>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(FafError::Contract(format!("indentation step must be positive, got {step}")));
    }
    check_pose(indenter, pose, 0.0, profile)?;
    let mut out = Vec::new();
    if f_max <= 0.0 {
        return Ok(out);
    }
    let axis_z = pose.tool_axis().z;
    let pose32 = pose.to_array().map(|v| v as f32);
    for j in 1.. {
        let d = step * j as f64;
        if d * axis_z > profile.gel_thickness_mm {
            break;
        }
        let contact = match compute_contact(indenter, pose, d, profile) {
            Ok(c) => c,
            Err(FafError::Safety(_)) => break,
            Err(e) => return Err(e),
        };
        let force = oracle_force(&contact, profile);
        if force.z > f_max {
            break;
        }
        let frame = render_with_background(&contact, profile, background, parallel::job_seed(tag.seed, 0, j));
        out.push(TactileSample {
            rows: profile.rows as u16,
            cols: profile.cols as u16,
            image: frame.image,
            depth: frame.depth,
            force: force.to_array().map(|v| v as f32),
            pose: pose32,
            indenter: indenter.id.code(),
            profile: tag.profile_index,
        });
    }
    Ok(out)
}

/// What to collect: every indenter pressed at `poses_per_indenter` poses on every profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectionPlan {
    pub indenters: Vec<IndenterId>,
    pub profiles: Vec<String>,
    pub poses_per_indenter: usize,
    pub step_mm: f64,
    pub f_max: f64,
    pub seed: u64,
    /// Applied to every indenter; per-indenter overrides take precedence.
    pub pose_range: PoseRange,
    #[serde(default)]
    pub overrides: Vec<(IndenterId, PoseRange)>,
}

impl Default for CollectionPlan {
    fn default() -> Self {
        Self {
            indenters: IndenterId::ALL.to_vec(),
            profiles: vec!["sensor1-gel1".into()],
            poses_per_indenter: 8,
            step_mm: DEFAULT_STEP_MM,
            f_max: DEFAULT_F_MAX,
            seed: 0,
            pose_range: PoseRange::default(),
            overrides: Vec::new(),
        }
    }
}

impl CollectionPlan {
    pub fn range_for(&self, id: IndenterId) -> PoseRange {
        self.overrides
            .iter()
            .find(|(i, _)| *i == id)
            .map_or(self.pose_range, |(_, r)| *r)
    }
}

/// Run every trajectory of `plan` on the worker pool; output order follows
/// (profile, indenter, pose) regardless of scheduling.
pub fn collect(plan: &CollectionPlan) -> Result<Dataset> {
    let profiles = plan
        .profiles
        .iter()
        .map(|n| SensorProfile::resolve(n))
        .collect::<Result<Vec<_>>>()?;
    collect_with_profiles(plan, &profiles)
}

pub fn collect_with_profiles(plan: &CollectionPlan, profiles: &[SensorProfile]) -> Result<Dataset> {
    let backgrounds: Vec<Vec<u8>> = profiles.iter().map(|p| p.background_image()).collect();
    let mut jobs = Vec::new();
    for (pi, _) in profiles.iter().enumerate() {
        for &id in &plan.indenters {
            let range = plan.range_for(id);
            range.validate()?;
            let pose_seed = parallel::job_seed(plan.seed, 1 + pi as u64, id.code() as u64);
            for (k, pose) in sample_poses(&range, plan.poses_per_indenter, pose_seed).into_iter().enumerate() {
                jobs.push((pi, id, range, pose, k));
            }
        }
    }
    let chunks: Vec<Result<Vec<TactileSample>>> = parallel::install(|| {
        jobs.par_iter()
            .map(|&(pi, id, range, pose, k)| {
                let indenter = Indenter::new(id).with_safe_range(range);
                let tag = TrajectoryTag {
                    profile_index: pi as u16,
                    seed: parallel::job_seed(plan.seed, 1000 + (pi * 16 + id.code() as usize) as u64, k as u64),
                };
                run_with_background(&indenter, &pose, &profiles[pi], &backgrounds[pi], plan.step_mm, plan.f_max, tag)
            })
            .collect()
    });
    let mut samples = Vec::new();
    for chunk in chunks {
        samples.extend(chunk?);
    }
    Ok(Dataset {
        profiles: profiles.iter().map(|p| p.name.clone()).collect(),
        samples,
    })
}
