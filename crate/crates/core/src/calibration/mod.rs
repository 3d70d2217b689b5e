//! Weight-rig calibration samples and scoped fine-tuning on a new sensor.

use faf_tensor::{Adam, Graph, ParamGroup};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DepthNormalizer, TactileSample};
use crate::error::{FafError, Result};
use crate::model::{ForceModel, ParamSet};
use crate::parallel::{self, job_seed};
use crate::report::fmt6;
use crate::sensor::{
    oracle_force_raw, press_to_load, quantize, render_with_background, ContactState, Indenter, IndenterId, Pose,
    SensorProfile,
};
use crate::training::{evaluate, loss_force, relative_increments, EvalReport, ModelEstimator, PreparedSet};

pub const GRAVITY: f64 = 9.81;

/// Fixed indenter loaded by off-the-shelf weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRig {
    pub indenter: IndenterId,
    pub masses_kg: Vec<f64>,
    /// Placement jitter of the mount over the gel, mm.
    pub offset_mm: f64,
    /// Maximum tilt of the rotatable mount, degrees.
    pub max_tilt_deg: f64,
    /// Bound on the tangential force the tilted mount transmits, N.
    pub max_shear: f64,
}

impl Default for CalibrationRig {
    fn default() -> Self {
        Self {
            indenter: IndenterId::BigSphere,
            masses_kg: vec![0.051, 0.102, 0.204, 0.306, 0.408, 0.51, 0.612, 0.714, 0.816, 0.918, 1.02],
            offset_mm: 3.0,
            max_tilt_deg: 8.0,
            max_shear: 1.0,
        }
    }
}

impl CalibrationRig {
    pub fn validate(&self) -> Result<()> {
        if self.masses_kg.is_empty() || self.masses_kg.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(FafError::Config("rig masses must be a nonempty list of finite values >= 0".into()));
        }
        if !(self.offset_mm >= 0.0 && self.max_tilt_deg >= 0.0 && self.max_shear >= 0.0) {
            return Err(FafError::Config("rig offsets, tilt and shear bound must be >= 0".into()));
        }
        Ok(())
    }

    /// Contact whose foundation load equals `target` N.
    pub fn contact_for_load(&self, pose: &Pose, target: f64, profile: &SensorProfile) -> Result<ContactState> {
        press_to_load(&Indenter::new(self.indenter), pose, target, profile)
    }

    /// Force read by the rig for a placed mass: `F^z = quantize(m·g)`, bounded shear from the tilt.
    pub fn force(&self, mass: f64, contact: &ContactState, profile: &SensorProfile) -> [f64; 3] {
        let q = profile.quantization;
        let fz = quantize(mass * GRAVITY, q);
        if fz <= 0.0 {
            return [0.0; 3];
        }
        let raw = oracle_force_raw(contact, profile);
        let cap = self.max_shear.min(profile.friction * fz);
        let mag = raw.shear();
        let s = if mag > cap { cap / mag } else { 1.0 };
        let (fx, fy) = (raw.x * s, raw.y * s);
        let (mut qx, mut qy) = (quantize(fx, q), quantize(fy, q));
        if qx.hypot(qy) > cap {
            qx = (fx / q).trunc() * q;
            qy = (fy / q).trunc() * q;
        }
        [qx + 0.0, qy + 0.0, fz]
    }
}

/// `n` rig samples at random placements rendered through `profile`.
pub fn collect_calibration(profile: &SensorProfile, rig: &CalibrationRig, n: usize, seed: u64) -> Result<Dataset> {
    rig.validate()?;
    profile.validate()?;
    let background = profile.background_image();
    let mut rng = ChaCha8Rng::seed_from_u64(job_seed(seed, 0x6361_6c69_62, 0));
    let plans: Vec<(f64, Pose)> = (0..n)
        .map(|_| {
            let mass = rig.masses_kg[rng.gen_range(0..rig.masses_kg.len())];
            let t = rig.max_tilt_deg;
            let pose = Pose {
                x: rng.gen_range(-rig.offset_mm..=rig.offset_mm),
                y: rng.gen_range(-rig.offset_mm..=rig.offset_mm),
                z: 0.0,
                roll: rng.gen_range(-t..=t),
                pitch: rng.gen_range(-t..=t),
                yaw: rng.gen_range(-180.0..180.0),
            };
            (mass, pose)
        })
        .collect();
    let samples = parallel::install(|| {
        plans
            .par_iter()
            .enumerate()
            .map(|(i, (mass, pose))| {
                let contact = rig.contact_for_load(pose, mass * GRAVITY, profile)?;
                let force = rig.force(*mass, &contact, profile);
                let frame = render_with_background(&contact, profile, &background, job_seed(seed, 1, i as u64));
                Ok(TactileSample {
                    rows: profile.rows as u16,
                    cols: profile.cols as u16,
                    image: frame.image,
                    depth: frame.depth,
                    force: force.map(|v| v as f32),
                    pose: pose.to_array().map(|v| v as f32),
                    indenter: rig.indenter.code(),
                    profile: 0,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(Dataset {
        profiles: vec![profile.name.clone()],
        samples,
    })
}

/// Which parameters fine-tuning may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinetuneScope {
    FinalLayer,
    RegressorHead,
    Full,
}

impl FinetuneScope {
    pub fn param_set(self) -> ParamSet {
        match self {
            Self::FinalLayer => ParamSet::FinalLayer,
            Self::RegressorHead => ParamSet::Regressor,
            Self::Full => ParamSet::All,
        }
    }

    /// Default for a target profile: whole regressor for a different sensor type, final layer otherwise.
    pub fn default_for(profile: &str) -> Self {
        if profile.starts_with("sensor") {
            Self::FinalLayer
        } else {
            Self::RegressorHead
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "final-layer" => Ok(Self::FinalLayer),
            "regressor-head" => Ok(Self::RegressorHead),
            "full" => Ok(Self::Full),
            _ => Err(FafError::Config(format!(
                "unknown scope `{s}` (expected final-layer, regressor-head or full)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub scope: FinetuneScope,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            scope: FinetuneScope::RegressorHead,
            steps: 200,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Errors before and after adaptation, plus the per-step training L_F.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOutcome {
    pub before: EvalReport,
    pub after: EvalReport,
    pub losses: Vec<f64>,
}

/// Adapt `model` to the single profile of `samples` with `L_F` only.
///
/// Error is reported on `holdout` (or on the calibration samples when absent).
pub fn finetune(
    model: &mut ForceModel,
    samples: &Dataset,
    holdout: Option<&Dataset>,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    if samples.is_empty() {
        return Err(FafError::Contract("no calibration samples".into()));
    }
    let first = samples.samples[0].profile;
    if samples.samples.iter().any(|s| s.profile != first) {
        return Err(FafError::Contract("calibration samples must come from exactly one profile".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) || cfg.batch_size == 0 {
        return Err(FafError::Config("finetune needs lr >= 0 and a positive batch size".into()));
    }
    let eval_on = holdout.unwrap_or(samples);
    let before = evaluate(&ModelEstimator::new(model), eval_on)?;
    let set = PreparedSet::build(samples, &DepthNormalizer::identity(), model.config.input_size)?;

    let scope = model.params(cfg.scope.param_set());
    let all = model.params(ParamSet::All);
    let outside: Vec<_> = all.iter().copied().filter(|id| !scope.contains(id)).collect();
    model.store.set_requires_grad(&outside, false);
    let mut adam = Adam::new(vec![ParamGroup {
        name: "finetune".into(),
        lr: cfg.lr,
        params: scope,
    }])?;
    let mut rng = ChaCha8Rng::seed_from_u64(job_seed(cfg.seed, 0x6674, 0));
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    let result = (|| -> Result<()> {
        for step in 0..cfg.steps {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let end = (cursor + cfg.batch_size).min(order.len());
            let batch = set.batch(&order[cursor..end]);
            cursor = end;
            let mut g = Graph::new();
            let out = model.forward(&mut g, &batch.images, false)?;
            let t = g.constant(batch.forces);
            let lf = loss_force(&mut g, out.force, t)?;
            let v = g.value(lf).item();
            if !v.is_finite() {
                return Err(FafError::TrainingDiverged { epoch: 0, batch: step });
            }
            losses.push(v);
            model.store.zero_grad();
            g.backward(lf, &mut model.store)?;
            adam.step(&mut model.store)?;
        }
        Ok(())
    })();
    model.store.set_requires_grad(&outside, true);
    model.store.zero_grad();
    result?;
    let after = evaluate(&ModelEstimator::new(model), eval_on)?;
    Ok(FinetuneOutcome { before, after, losses })
}

/// Per-profile errors of two models and the relative increment `(after − before) / before`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForgettingRow {
    pub profile: String,
    pub before: f64,
    pub after: f64,
    pub increment: f64,
}

pub fn catastrophic_forgetting_check(before: &ForceModel, after: &ForceModel, eval: &Dataset) -> Result<Vec<ForgettingRow>> {
    let b = evaluate(&ModelEstimator::new(before), eval)?;
    let a = evaluate(&ModelEstimator::new(after), eval)?;
    Ok(relative_increments(&b, &a)
        .into_iter()
        .map(|(p, inc)| ForgettingRow {
            before: b.profile_error(&p).unwrap_or(0.0),
            after: a.profile_error(&p).unwrap_or(0.0),
            profile: p,
            increment: inc,
        })
        .collect())
}

/// `profile,before,after,relative_increment` rows.
pub fn forgetting_csv(rows: &[ForgettingRow]) -> String {
    let mut out = String::from("profile,error_before,error_after,relative_increment\n");
    for r in rows {
        out += &format!("{},{},{},{}\n", r.profile, fmt6(r.before), fmt6(r.after), fmt6(r.increment));
    }
    out
}
