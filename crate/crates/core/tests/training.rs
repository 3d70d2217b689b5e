use faf_core::dataset::{collect, CollectionPlan, Dataset, DepthNormalizer};
use faf_core::model::{EncoderKind, ForceModel, ModelConfig, ParamSet};
use faf_core::sensor::IndenterId;
use faf_core::training::*;
use faf_core::FafError;
use faf_tensor::{Graph, Tensor};

fn data() -> Dataset {
    let plan = CollectionPlan {
        indenters: vec![IndenterId::BigSphere, IndenterId::Cube],
        poses_per_indenter: 1,
        step_mm: 0.25,
        ..CollectionPlan::default()
    };
    collect(&plan).unwrap()
}

fn tiny(encoder: EncoderKind) -> ModelConfig {
    ModelConfig {
        input_size: 16,
        patch_size: 8,
        embed_dim: 32,
        depth: 1,
        heads: 2,
        encoder,
        ..ModelConfig::default()
    }
}

fn prepared(d: &Dataset) -> PreparedSet {
    PreparedSet::build(d, &DepthNormalizer::fit(&d.samples).unwrap(), 16).unwrap()
}

fn cfg() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 8,
        lr_backbone: 1e-3,
        lr_head: 2e-4,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_parameters_and_flat_curve() {
    let set = prepared(&data());
    let mut m = ForceModel::new(tiny(EncoderKind::Vit)).unwrap();
    let before = m.store.checksum(None);
    let c = TrainConfig {
        lr_backbone: 0.0,
        lr_head: 0.0,
        batch_size: set.len(),
        ..cfg()
    };
    let curve = train(&mut m, &set, &c).unwrap();
    assert_eq!(m.store.checksum(None), before);
    let first = curve.epochs[0].total;
    assert!(curve.epochs.iter().all(|e| (e.total - first).abs() <= 1e-12 * first));
}

#[test]
fn frozen_backbone_is_untouched() {
    let set = prepared(&data());
    let mut m = ForceModel::new(tiny(EncoderKind::Vit)).unwrap();
    let backbone = m.params(ParamSet::Backbone);
    let heads = m.params(ParamSet::Heads);
    let (b0, h0) = (m.store.checksum(Some(&backbone)), m.store.checksum(Some(&heads)));
    train(&mut m, &set, &TrainConfig { frozen_backbone: true, ..cfg() }).unwrap();
    assert_eq!(m.store.checksum(Some(&backbone)), b0);
    assert_ne!(m.store.checksum(Some(&heads)), h0);
    assert!(m.store.iter().all(|(_, p)| p.requires_grad));
}

#[test]
fn equal_seeds_give_identical_runs() {
    let set = prepared(&data());
    let run = || {
        let mut m = ForceModel::new(tiny(EncoderKind::Vit)).unwrap();
        let curve = train(&mut m, &set, &cfg()).unwrap();
        (curve, m.store.checksum(None))
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_depth_weight_matches_detached_decoder() {
    let set = prepared(&data());
    let run = |with_decoder: bool| {
        let mut m = ForceModel::new(tiny(EncoderKind::Vit)).unwrap();
        let c = TrainConfig {
            beta_w: 0.0,
            with_decoder,
            ..cfg()
        };
        let curve = train(&mut m, &set, &c).unwrap();
        let ids = [m.params(ParamSet::Backbone), m.params(ParamSet::Regressor)].concat();
        let forces: Vec<u64> = curve.epochs.iter().map(|e| e.force.to_bits()).collect();
        (forces, m.store.checksum(Some(&ids)))
    };
    assert_eq!(run(true), run(false));
}

#[test]
fn nan_loss_reports_divergence() {
    let set = prepared(&data());
    let mut m = ForceModel::new(tiny(EncoderKind::Vit)).unwrap();
    let out = m.params(ParamSet::FinalLayer)[0];
    m.store.get_mut(out).value.data_mut()[0] = f64::NAN;
    let err = train(&mut m, &set, &cfg()).unwrap_err();
    assert!(matches!(err, FafError::TrainingDiverged { epoch: 0, batch: 0 }), "{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    let set = prepared(&data());
    let mut m = ForceModel::new(tiny(EncoderKind::Vit)).unwrap();
    for c in [
        TrainConfig { alpha: 0.0, beta_w: 0.0, ..cfg() },
        TrainConfig { lr_head: -1.0, ..cfg() },
        TrainConfig { batch_size: 0, ..cfg() },
    ] {
        assert!(matches!(train(&mut m, &set, &c), Err(FafError::Config(_))));
    }
    let empty = PreparedSet::build(&Dataset::default(), &DepthNormalizer::identity(), 16).unwrap();
    assert!(matches!(train(&mut m, &empty, &cfg()), Err(FafError::Contract(_))));
}

/// Parameter gradients of `α·L_F + β_w·L_D` for one batch.
fn grads(m: &ForceModel, b: &Batch, alpha: f64, beta_w: f64) -> Vec<f64> {
    let mut g = Graph::new();
    let out = m.forward(&mut g, &b.images, true).unwrap();
    let t = g.constant(b.forces.clone());
    let lf = loss_force(&mut g, out.force, t).unwrap();
    let td = g.constant(b.depths.clone());
    let ld = loss_depth(&mut g, out.depth.unwrap(), td).unwrap();
    let l = loss_total(&mut g, lf, Some(ld), alpha, beta_w).unwrap();
    let mut store = m.store.clone();
    store.zero_grad();
    g.backward(l, &mut store).unwrap();
    store.iter().flat_map(|(_, p)| p.grad.clone().unwrap().into_data()).collect()
}

#[test]
fn total_gradient_is_linear_in_weights() {
    let set = prepared(&data());
    let m = ForceModel::new(tiny(EncoderKind::Vit)).unwrap();
    let b = set.batch(&[0, 3, 5]);
    let (gf, gd, gt) = (grads(&m, &b, 1.0, 0.0), grads(&m, &b, 0.0, 1.0), grads(&m, &b, 0.7, 1.3));
    let scale = gt.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in 0..gt.len() {
        assert!((gt[i] - (0.7 * gf[i] + 1.3 * gd[i])).abs() <= 1e-12 * scale);
    }
}

#[test]
fn gradients_reach_every_trainable_parameter() {
    for encoder in [EncoderKind::Vit, EncoderKind::Conv] {
        let set = prepared(&data());
        let m = ForceModel::new(tiny(encoder)).unwrap();
        let b = set.batch(&[1, 4, 6]);
        let mut g = Graph::new();
        let out = m.forward(&mut g, &b.images, true).unwrap();
        let t = g.constant(b.forces.clone());
        let lf = loss_force(&mut g, out.force, t).unwrap();
        let td = g.constant(b.depths.clone());
        let ld = loss_depth(&mut g, out.depth.unwrap(), td).unwrap();
        let l = loss_total(&mut g, lf, Some(ld), 1.0, 1.0).unwrap();
        let mut store = m.store.clone();
        g.backward(l, &mut store).unwrap();
        for (_, p) in store.iter() {
            // a key bias shifts every attention logit of a query equally
            if p.name.ends_with("attn.k.b") {
                continue;
            }
            let grad = p.grad.as_ref().unwrap();
            assert!(grad.data().iter().any(|&v| v != 0.0), "{} has no gradient", p.name);
        }
    }
}

#[test]
fn oracle_evaluation_is_exact_and_model_cells_are_finite() {
    let d = data();
    let report = evaluate(&OracleEstimator, &d).unwrap();
    assert_eq!(report.count(), d.len());
    assert!(report.cells.iter().all(|c| c.normalized_error == 0.0 && c.mae == [0.0; 3]));
    assert_eq!(report.cells.len(), 2);
    assert!(matches!(evaluate(&OracleEstimator, &Dataset::default()), Err(FafError::Contract(_))));

    let mut m = ForceModel::new(tiny(EncoderKind::Conv)).unwrap();
    train(&mut m, &prepared(&d), &cfg()).unwrap();
    let report = evaluate(&ModelEstimator::new(&m), &d).unwrap();
    assert!(report.cells.iter().all(|c| c.normalized_error.is_finite() && c.normalized_error > 0.0));
    let csv = report.cells_csv();
    assert_eq!(csv.lines().count(), 3);
    assert!(report.grid_csv().starts_with("sensor,gel1,mean\nsensor1,"));
}

#[test]
fn loss_curve_csv_has_header_and_rows() {
    let curve = LossCurve {
        epochs: vec![EpochLoss { epoch: 0, force: 1.5, depth: 0.25, total: 1.75 }],
    };
    assert_eq!(curve.to_csv(), "epoch,L_F,L_D,L\n0,1.5,0.25,1.75\n");
}

#[test]
fn prepared_batches_have_network_shapes() {
    let set = prepared(&data());
    let b = set.batch(&[0, 1]);
    assert_eq!(b.images.shape(), &[2, 3, 16, 16]);
    assert_eq!(b.depths.shape(), &[2, 1, 16, 16]);
    assert_eq!(b.forces.shape(), &[2, 3]);
    let _: &Tensor = &b.forces;
}
