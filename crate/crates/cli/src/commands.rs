use std::fs;
use std::path::{Path, PathBuf};

use faf_core::calibration::{
    catastrophic_forgetting_check, collect_calibration, finetune, forgetting_csv, CalibrationRig, FinetuneConfig,
    FinetuneScope,
};
use faf_core::dataset::{self, balance, collect, CollectionPlan, Dataset, DatasetStats, DepthNormalizer};
use faf_core::model::{EncoderKind, ForceModel, ModelConfig};
use faf_core::report::fmt6;
use faf_core::sensor::{IndenterId, SensorProfile};
use faf_core::tasks::{
    estimate_weight, fit_friction_from_pushes, grasp_csv, grasp_plot_svg, grasp_to_force, push_plot_svg, simulate_push, PatchKind,
    PushScenario, PushTrace,
};
use faf_core::training::{
    evaluate, train, EvalReport, ForceEstimator, ModelEstimator, OracleEstimator, PreparedSet, TrainConfig,
};
use faf_core::{FafError, Result};

use crate::config::RunConfig;
use crate::*;

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.global.config.as_deref())?;
    for p in &cli.global.profiles {
        SensorProfile::resolve(p)?;
    }
    let ctx = Ctx { g: cli.global, cfg };
    match cli.command {
        Command::Dataset(DatasetCmd::Gen(a)) => ctx.gen(a),
        Command::Dataset(DatasetCmd::Balance(a)) => ctx.balance(a),
        Command::Dataset(DatasetCmd::Stats(a)) => ctx.stats(a),
        Command::Train(a) => ctx.train(a),
        Command::Eval(a) => ctx.eval(a),
        Command::Ablate(a) => ctx.ablate(a),
        Command::Calibrate(a) => ctx.calibrate(a),
        Command::Task(TaskCmd::Weigh(a)) => ctx.weigh(a),
        Command::Task(TaskCmd::Deform(a)) => ctx.deform(a),
    }
}

struct Ctx {
    g: Global,
    cfg: RunConfig,
}

enum Estimator {
    Oracle(OracleEstimator),
    Model(ForceModel),
}

impl Estimator {
    fn as_dyn(&self) -> Box<dyn ForceEstimator + '_> {
        match self {
            Self::Oracle(o) => Box::new(*o),
            Self::Model(m) => Box::new(ModelEstimator::new(m)),
        }
    }
}

impl Ctx {
    fn seed(&self, fallback: u64) -> u64 {
        self.g.seed.unwrap_or(fallback)
    }

    fn out(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.g.out)?;
        Ok(self.g.out.join(name))
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.out(name)?;
        fs::write(&path, contents)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    /// Samples whose profile is among `--profile`, or all when none given.
    fn load_data(&self, path: &Path) -> Result<Dataset> {
        let data = dataset::load(path)?;
        if self.g.profiles.is_empty() {
            return Ok(data);
        }
        Ok(data.filter(|s| {
            data.profile_name(s)
                .is_some_and(|n| self.g.profiles.iter().any(|p| p == n))
        }))
    }

    fn model_config(&self, f: &ModelFlags, conv: bool) -> ModelConfig {
        let mut m = self.cfg.model.clone();
        m.input_size = f.input_size.unwrap_or(m.input_size);
        m.patch_size = f.patch_size.unwrap_or(m.patch_size);
        m.embed_dim = f.embed_dim.unwrap_or(m.embed_dim);
        m.depth = f.depth.unwrap_or(m.depth);
        m.heads = f.heads.unwrap_or(m.heads);
        if conv {
            m.encoder = EncoderKind::Conv;
        }
        m.seed = self.seed(m.seed);
        m
    }

    fn train_config(&self, f: &TrainFlags) -> TrainConfig {
        let mut t = self.cfg.train.clone();
        t.epochs = f.epochs.unwrap_or(t.epochs);
        t.batch_size = f.batch_size.unwrap_or(t.batch_size);
        t.lr_backbone = f.lr_backbone.unwrap_or(t.lr_backbone);
        t.lr_head = f.lr_head.unwrap_or(t.lr_head);
        t.alpha = f.alpha.unwrap_or(t.alpha);
        t.beta_w = f.beta_w.unwrap_or(t.beta_w);
        t.seed = self.seed(t.seed);
        t
    }

    fn estimator(&self, a: &EstimatorArgs) -> Result<Estimator> {
        match (a.estimator, &a.checkpoint) {
            (EstimatorKind::Oracle, _) => Ok(Estimator::Oracle(OracleEstimator)),
            (EstimatorKind::Model, Some(p)) => Ok(Estimator::Model(ForceModel::load(p)?)),
            (EstimatorKind::Model, None) => Err(FafError::Config("--estimator model needs --checkpoint".into())),
        }
    }

    fn gen(&self, a: GenArgs) -> Result<()> {
        let indenters = if a.indenters.is_empty() {
            IndenterId::ALL.to_vec()
        } else {
            a.indenters.iter().map(|s| s.parse()).collect::<Result<_>>()?
        };
        let plan = CollectionPlan {
            indenters,
            profiles: if self.g.profiles.is_empty() {
                CollectionPlan::default().profiles
            } else {
                self.g.profiles.clone()
            },
            poses_per_indenter: a.count,
            step_mm: a.step_mm,
            f_max: a.f_max,
            seed: self.seed(0),
            ..CollectionPlan::default()
        };
        let data = collect(&plan)?;
        let path = self.out(&a.file)?;
        dataset::store(&data, &path)?;
        println!("wrote {} ({} samples)", path.display(), data.len());
        self.write("histogram.csv", &DatasetStats::compute(&data, dataset::DEFAULT_BIN_WIDTH).histogram_csv())
    }

    fn balance(&self, a: BalanceArgs) -> Result<()> {
        let data = dataset::load(&a.input)?;
        let out = balance(&data, a.bin_width, self.seed(0))?;
        let path = self.out(&a.file)?;
        dataset::store(&out, &path)?;
        println!("wrote {} ({} of {} samples kept)", path.display(), out.len(), data.len());
        let stats = DatasetStats::compute(&out, a.bin_width);
        print!("{}", stats.summary(0.5, 12.0));
        self.write("histogram.csv", &stats.histogram_csv())
    }

    fn stats(&self, a: StatsArgs) -> Result<()> {
        let stats = DatasetStats::compute(&self.load_data(&a.input)?, a.bin_width);
        print!("{}", stats.summary(a.lo, a.hi));
        self.write("histogram.csv", &stats.histogram_csv())
    }

    fn fit(&self, data: &Dataset, model: ModelConfig, t: &TrainConfig) -> Result<(ForceModel, String)> {
        let mut m = ForceModel::new(model)?;
        let norm = if data.is_empty() {
            DepthNormalizer::identity()
        } else {
            DepthNormalizer::fit(&data.samples)?
        };
        let set = PreparedSet::build(data, &norm, m.config.input_size)?;
        let curve = train(&mut m, &set, t)?;
        if let Some(e) = curve.last() {
            println!(
                "epoch {}: L_F {} L_D {} L {}",
                e.epoch,
                fmt6(e.force),
                fmt6(e.depth),
                fmt6(e.total)
            );
        }
        Ok((m, curve.to_csv()))
    }

    fn train(&self, a: TrainArgs) -> Result<()> {
        let data = self.load_data(&a.data)?;
        let mut t = self.train_config(&a.train);
        t.frozen_backbone |= a.frozen_backbone;
        t.with_decoder &= !a.no_decoder;
        let (m, losses) = self.fit(&data, self.model_config(&a.model, a.conv_encoder), &t)?;
        let path = self.out(&a.file)?;
        m.save(&path)?;
        println!("wrote {}", path.display());
        self.write("loss.csv", &losses)
    }

    fn eval(&self, a: EvalArgs) -> Result<()> {
        let data = self.load_data(&a.data)?;
        let est = self.estimator(&a.estimator)?;
        let report = evaluate(est.as_dyn().as_ref(), &data)?;
        println!("mean normalized error: {}", fmt6(report.mean_error()));
        self.write("eval_cells.csv", &report.cells_csv())?;
        self.write("eval_grid.csv", &report.grid_csv())
    }

    fn ablate(&self, a: AblateArgs) -> Result<()> {
        let data = self.load_data(&a.data)?;
        let test = dataset::load(&a.test)?;
        let base = self.train_config(&a.train);
        let variants = [
            ("conv-rd", true, false, true),
            ("vit-f", false, true, false),
            ("vit-r", false, false, false),
            ("vit-rd", false, false, true),
        ];
        let mut rows: Vec<(&str, EvalReport)> = Vec::new();
        for (name, conv, frozen, decoder) in variants {
            println!("training {name}");
            let t = TrainConfig {
                frozen_backbone: frozen,
                with_decoder: decoder,
                ..base.clone()
            };
            let (m, losses) = self.fit(&data, self.model_config(&a.model, conv), &t)?;
            self.write(&format!("loss_{name}.csv"), &losses)?;
            rows.push((name, evaluate(&ModelEstimator::new(&m), &test)?));
        }
        let profiles = rows[0].1.profiles();
        let mut csv = String::from("variant,normalized_error,mae_x,mae_y,mae_z");
        for p in &profiles {
            csv += &format!(",{p}");
        }
        csv.push('\n');
        for (name, r) in &rows {
            let mae = r.mae();
            csv += &format!("{name},{},{},{},{}", fmt6(r.mean_error()), fmt6(mae[0]), fmt6(mae[1]), fmt6(mae[2]));
            for p in &profiles {
                csv += &format!(",{}", fmt6(r.profile_error(p).unwrap_or(f64::NAN)));
            }
            csv.push('\n');
        }
        print!("{csv}");
        self.write("ablation.csv", &csv)
    }

    fn calibrate(&self, a: CalibrateArgs) -> Result<()> {
        let name = self.g.profiles.first().map_or("digit", String::as_str);
        let profile = SensorProfile::resolve(name)?;
        let original = ForceModel::load(&a.checkpoint)?;
        let mut model = original.clone();
        let rig = CalibrationRig::default();
        let seed = self.seed(0);
        let samples = collect_calibration(&profile, &rig, a.samples, seed)?;
        let holdout = collect_calibration(&profile, &rig, a.holdout, seed.wrapping_add(1))?;
        let cfg = FinetuneConfig {
            scope: a
                .scope
                .as_deref()
                .map_or(Ok(FinetuneScope::default_for(&profile.name)), FinetuneScope::parse)?,
            steps: a.steps,
            lr: a.lr,
            batch_size: a.batch_size,
            seed,
        };
        let out = finetune(&mut model, &samples, (a.holdout > 0).then_some(&holdout), &cfg)?;
        let path = self.out(&a.file)?;
        model.save(&path)?;
        println!("wrote {}", path.display());
        let mut csv = String::from("stage,profile,normalized_error,mae_x,mae_y,mae_z\n");
        for (stage, r) in [("before", &out.before), ("after", &out.after)] {
            let mae = r.mae();
            csv += &format!(
                "{stage},{},{},{},{},{}\n",
                profile.name,
                fmt6(r.mean_error()),
                fmt6(mae[0]),
                fmt6(mae[1]),
                fmt6(mae[2])
            );
        }
        print!("{csv}");
        self.write("calibration.csv", &csv)?;
        let mut losses = String::from("step,L_F\n");
        for (i, l) in out.losses.iter().enumerate() {
            losses += &format!("{i},{}\n", fmt6(*l));
        }
        self.write("calibration_loss.csv", &losses)?;
        if let Some(p) = &a.eval {
            let rows = catastrophic_forgetting_check(&original, &model, &dataset::load(p)?)?;
            let csv = forgetting_csv(&rows);
            print!("{csv}");
            self.write("forgetting.csv", &csv)?;
        }
        Ok(())
    }

    fn pushes(&self, scn: &PushScenario, trials: usize) -> Result<Vec<PushTrace>> {
        (0..trials as u64)
            .map(|i| {
                simulate_push(&PushScenario {
                    seed: scn.seed.wrapping_mul(1000).wrapping_add(i),
                    ..scn.clone()
                })
            })
            .collect()
    }

    fn weigh(&self, a: WeighArgs) -> Result<()> {
        if a.trials == 0 {
            return Err(FafError::Config("--trials must be positive".into()));
        }
        let mut scn = self.cfg.push.clone();
        scn.mass_kg = a.mass.unwrap_or(scn.mass_kg);
        scn.mu = a.mu.unwrap_or(scn.mu);
        scn.duration_s = a.duration.unwrap_or(scn.duration_s);
        if let Some(p) = a.patch {
            scn.patch = match p {
                Patch::Flat => PatchKind::Flat,
                Patch::Curved => PatchKind::Curved,
            };
        }
        if let Some(p) = self.g.profiles.first() {
            scn.profile = p.clone();
        }
        scn.seed = self.seed(scn.seed);
        let est = self.estimator(&a.estimator)?;
        let est = est.as_dyn();
        let traces = self.pushes(&scn, a.trials)?;
        let mu = if a.fit_friction {
            let mu = fit_friction_from_pushes(&traces)?;
            println!("fitted friction: {}", fmt6(mu));
            mu
        } else {
            scn.mu
        };
        let report = estimate_weight(&traces, mu, est.as_ref())?;
        println!(
            "estimated mass {} kg (true {} kg, error {} %)",
            fmt6(report.est_mass),
            fmt6(report.true_mass),
            fmt6(100.0 * report.relative_mass_error())
        );
        self.write("weigh.csv", &report.to_csv())?;
        self.write("weigh.svg", &push_plot_svg(&traces, &report))
    }

    fn deform(&self, a: DeformArgs) -> Result<()> {
        let mut cfg = self.cfg.grasp.clone();
        cfg.step_mm = a.step_mm.unwrap_or(cfg.step_mm);
        cfg.spring_n_per_mm = a.spring.unwrap_or(cfg.spring_n_per_mm);
        if let Some(p) = self.g.profiles.first() {
            cfg.profile = p.clone();
        }
        cfg.seed = self.seed(cfg.seed);
        let targets = if a.targets.is_empty() { vec![cfg.target_n] } else { a.targets.clone() };
        let est = self.estimator(&a.estimator)?;
        let est = est.as_dyn();
        let mut rows = Vec::new();
        for target in targets {
            let out = grasp_to_force(&faf_core::tasks::GraspConfig { target_n: target, ..cfg.clone() }, est.as_ref())?;
            println!(
                "target {} N: reached {} N in {} steps, deformation {} % (true {} %)",
                fmt6(target),
                fmt6(out.achieved_force),
                out.steps,
                fmt6(out.deformation_measured),
                fmt6(out.deformation_gt)
            );
            rows.push(out);
        }
        self.write("deform.csv", &grasp_csv(&rows))?;
        self.write("deform.svg", &grasp_plot_svg(rows.last().expect("at least one target")))
    }
}
