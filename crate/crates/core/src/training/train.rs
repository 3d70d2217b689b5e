//! Minibatch training with differential learning rates.

use faf_tensor::{Adam, Graph, ParamGroup};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FafError, Result};
use crate::model::{ForceModel, ParamSet};
use crate::parallel::job_seed;
use crate::report::fmt6;
use crate::training::data::PreparedSet;
use crate::training::loss::{loss_depth, loss_force, loss_total};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub alpha: f64,
    pub beta_w: f64,
    pub seed: u64,
    pub frozen_backbone: bool,
    pub with_decoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 100,
            lr_backbone: 5e-5,
            lr_head: 1e-5,
            alpha: 1.0,
            beta_w: 1.0,
            seed: 0,
            frozen_backbone: false,
            with_decoder: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FafError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, lr) in [("lr_backbone", self.lr_backbone), ("lr_head", self.lr_head)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {lr}"));
            }
        }
        if !(self.alpha >= 0.0 && self.beta_w >= 0.0 && self.alpha + self.beta_w > 0.0) {
            return bad(format!(
                "loss weights need alpha, beta_w >= 0 with a positive sum, got ({}, {})",
                self.alpha, self.beta_w
            ));
        }
        Ok(())
    }
}

/// Sample-weighted mean losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub force: f64,
    pub depth: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub epochs: Vec<EpochLoss>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,L_F,L_D,L\n");
        for e in &self.epochs {
            out += &format!("{},{},{},{}\n", e.epoch, fmt6(e.force), fmt6(e.depth), fmt6(e.total));
        }
        out
    }

    pub fn last(&self) -> Option<&EpochLoss> {
        self.epochs.last()
    }
}

/// Optimizer groups for a configuration: backbone (unless frozen) and heads.
pub fn param_groups(model: &ForceModel, cfg: &TrainConfig) -> Vec<ParamGroup> {
    let mut groups = Vec::new();
    if !cfg.frozen_backbone {
        groups.push(ParamGroup {
            name: "backbone".into(),
            lr: cfg.lr_backbone,
            params: model.params(ParamSet::Backbone),
        });
    }
    let heads = if cfg.with_decoder { ParamSet::Heads } else { ParamSet::Regressor };
    groups.push(ParamGroup {
        name: "heads".into(),
        lr: cfg.lr_head,
        params: model.params(heads),
    });
    groups
}

/// Train `model` in place and return per-epoch losses.
pub fn train(model: &mut ForceModel, data: &PreparedSet, cfg: &TrainConfig) -> Result<LossCurve> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(FafError::Contract("training set is empty".into()));
    }
    if data.size != model.config.input_size {
        return Err(FafError::Shape {
            op: "train",
            detail: format!("data prepared at {} px, model expects {}", data.size, model.config.input_size),
        });
    }
    let backbone = model.params(ParamSet::Backbone);
    let frozen = cfg.frozen_backbone;
    if frozen {
        model.store.set_requires_grad(&backbone, false);
    }
    let result = run(model, data, cfg);
    if frozen {
        model.store.set_requires_grad(&backbone, true);
    }
    model.store.zero_grad();
    result
}

fn run(model: &mut ForceModel, data: &PreparedSet, cfg: &TrainConfig) -> Result<LossCurve> {
    let mut adam = Adam::new(param_groups(model, cfg))?;
    let mut curve = LossCurve::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(job_seed(cfg.seed, 0x7472_6169_6e, epoch as u64));
        order.shuffle(&mut rng);
        let (mut sf, mut sd, mut st) = (0.0, 0.0, 0.0);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.batch(chunk);
            let mut g = Graph::new();
            let out = model.forward(&mut g, &batch.images, cfg.with_decoder)?;
            let target = g.constant(batch.forces);
            let lf = loss_force(&mut g, out.force, target)?;
            let ld = match out.depth {
                Some(d) => {
                    let t = g.constant(batch.depths);
                    Some(loss_depth(&mut g, d, t)?)
                }
                None => None,
            };
            let loss = loss_total(&mut g, lf, ld, cfg.alpha, cfg.beta_w)?;
            let total = g.value(loss).item();
            if !total.is_finite() {
                return Err(FafError::TrainingDiverged { epoch, batch: bi });
            }
            let n = chunk.len() as f64;
            sf += n * g.value(lf).item();
            sd += n * ld.map_or(0.0, |d| g.value(d).item());
            st += n * total;
            model.store.zero_grad();
            g.backward(loss, &mut model.store)?;
            adam.step(&mut model.store)?;
        }
        let n = data.len() as f64;
        curve.epochs.push(EpochLoss {
            epoch,
            force: sf / n,
            depth: sd / n,
            total: st / n,
        });
    }
    Ok(curve)
}
