//! End-to-end training properties on small seeded data.

use crossview_core::dataset::{generate, split, GenSpec, SplitMode, SplitSpec};
use crossview_core::losses::Phase;
use crossview_core::trainer::{
    compute_centers, init_pair, train_icv_eccl, train_multiview, train_phase_cvcl, train_phase_cvec,
    train_warmup, PairModel, TrainingData,
};
use crossview_core::{Dataset, Error, TrainConfig, TrainLog, ViewLabel, ViewNetwork};

fn small_spec(identities: usize, views: usize) -> GenSpec {
    GenSpec {
        identities,
        views,
        samples_per_identity_per_view: 6,
        latent_dim: 3,
        dim: 16,
        view_transform_scale: 1.0,
        noise_sigma: 0.1,
        seed: 3,
    }
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        center_rate: 0.5,
        weight_decay: 2e-2,
        hidden: vec![16],
        embed_dim: 8,
        max_epochs_per_phase: 5,
        max_outer_iters: 1,
        warmup_epochs: 2,
        ..TrainConfig::default()
    }
}

fn nets_for(ds: &Dataset, cfg: &TrainConfig) -> [ViewNetwork; 2] {
    init_pair(&cfg.net_shape(ds.dim(), ds.num_identities()), cfg.seed).unwrap()
}

#[test]
fn constrained_phases_lower_their_losses() {
    let ds = generate(&small_spec(20, 2)).unwrap();
    let cfg = TrainConfig {
        max_epochs_per_phase: 30,
        ..small_cfg()
    };
    let data = TrainingData::new(&ds, None).unwrap();
    let mut model = PairModel::new(nets_for(&ds, &cfg), "t").unwrap();
    let mut log = TrainLog::default();
    let initial = model.crossview_distance(&ds).unwrap();
    train_phase_cvec(&mut model, &data, &cfg, 0, &mut log).unwrap();
    let rows: Vec<f64> = log.rows.iter().map(|r| r.report.cv_ec.unwrap()).collect();
    assert_eq!(rows.len(), 30);
    assert!(rows.last().unwrap() < &rows[0]);
    assert!(model.crossview_distance(&ds).unwrap() < initial);

    let mut bank = compute_centers(&model, &ds).unwrap();
    let start = log.rows.len();
    train_phase_cvcl(&mut model, &mut bank, &data, &cfg, 0, &mut log).unwrap();
    let cl: Vec<f64> = log.rows[start..].iter().map(|r| r.report.cv_cl.unwrap()).collect();
    assert!(cl.last().unwrap() < &cl[0]);

    // joint loss trends down: the median successive difference is not positive
    let mut diffs: Vec<f64> = log.rows.windows(2).map(|w| w[1].report.joint - w[0].report.joint).collect();
    diffs.sort_by(f64::total_cmp);
    assert!(diffs[diffs.len() / 2] <= 0.0);
}

#[test]
fn huge_thresholds_stop_early() {
    let ds = generate(&small_spec(8, 2)).unwrap();
    let cfg = TrainConfig {
        eps1: 1e12,
        eps2: 1e12,
        eps: 1e12,
        max_outer_iters: 5,
        warmup_epochs: 0,
        ..small_cfg()
    };
    let data = TrainingData::new(&ds, None).unwrap();
    let out = train_icv_eccl(nets_for(&ds, &cfg), &data, &cfg).unwrap();
    assert_eq!(out.log.rows.len(), 2);
    assert_eq!(out.log.outer_losses.len(), 1);
    assert_eq!(out.log.markers.iter().map(|m| m.epochs).collect::<Vec<_>>(), vec![1, 1]);
}

#[test]
fn phase_caps_bound_epochs() {
    let ds = generate(&small_spec(8, 2)).unwrap();
    let cfg = TrainConfig {
        max_epochs_per_phase: 3,
        max_outer_iters: 2,
        warmup_epochs: 1,
        ..small_cfg()
    };
    let data = TrainingData::new(&ds, None).unwrap();
    let out = train_icv_eccl(nets_for(&ds, &cfg), &data, &cfg).unwrap();
    assert_eq!(out.log.rows.len(), 1 + 2 * 2 * 3);
    let phases: Vec<Phase> = out.log.markers.iter().map(|m| m.phase).collect();
    assert_eq!(
        phases,
        vec![
            Phase::CrossViewEuclidean,
            Phase::CrossViewCenter,
            Phase::CrossViewEuclidean,
            Phase::CrossViewCenter
        ]
    );
    assert!(out.log.rows.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
}

#[test]
fn training_is_deterministic() {
    let ds = generate(&small_spec(8, 2)).unwrap();
    let cfg = small_cfg();
    let data = TrainingData::new(&ds, Some(&ds)).unwrap();
    let a = train_icv_eccl(nets_for(&ds, &cfg), &data, &cfg).unwrap();
    let b = train_icv_eccl(nets_for(&ds, &cfg), &data, &cfg).unwrap();
    for (x, y) in a.nets.iter().zip(&b.nets) {
        assert_eq!(x.to_checkpoint_string(), y.to_checkpoint_string());
    }
    assert_eq!(a.log.to_csv(), b.log.to_csv());
}

#[test]
fn divergence_reports_last_good_networks() {
    let ds = generate(&small_spec(8, 2)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 50.0,
        lambda1: 100.0,
        momentum: 0.0,
        ..small_cfg()
    };
    let data = TrainingData::new(&ds, None).unwrap();
    match train_icv_eccl(nets_for(&ds, &cfg), &data, &cfg) {
        Err(Error::Diverged { last_good, .. }) => {
            assert_eq!(last_good.len(), 2);
            assert!(last_good.iter().all(ViewNetwork::is_finite));
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log.rows.len())),
    }
}

#[test]
fn warmup_leaves_constraint_columns_empty() {
    let ds = generate(&small_spec(8, 2)).unwrap();
    let cfg = small_cfg();
    let data = TrainingData::new(&ds, None).unwrap();
    let mut model = PairModel::new(nets_for(&ds, &cfg), "t").unwrap();
    let mut log = TrainLog::default();
    train_warmup(&mut model, &data, &cfg, &mut log).unwrap();
    assert_eq!(log.rows.len(), 2);
    assert!(log.rows.iter().all(|r| r.report.cv_ec.is_none() && r.report.cv_cl.is_none()));
    assert!(log.markers.is_empty());
}

#[test]
fn multiview_emits_view_and_public_networks() {
    let ds = generate(&small_spec(12, 3)).unwrap();
    let (train, test) = split(&ds, &SplitSpec { mode: SplitMode::HalfIdentity, seed: 2 }).unwrap();
    let cfg = small_cfg();
    let out = train_multiview(&train, Some(&test), &cfg).unwrap();
    assert_eq!(out.view_nets.len(), 3);
    for (v, net) in out.view_nets.iter().enumerate() {
        assert_eq!(net.label(), ViewLabel::View(v));
    }
    assert_eq!(out.public.label(), ViewLabel::Public);
    let tasks: Vec<&str> = out.log.markers.iter().map(|m| m.task.as_str()).collect();
    assert_eq!(tasks, vec!["view0/pass0", "view0/pass0", "view1/pass0", "view1/pass0", "view2/pass0", "view2/pass0"]);
}

#[test]
fn multiview_rejects_an_empty_view() {
    let ds = generate(&small_spec(6, 3)).unwrap();
    let samples = ds
        .samples()
        .iter()
        .filter(|s| s.view != 1)
        .cloned()
        .collect();
    let gapped = Dataset::new(samples).unwrap();
    assert_eq!(gapped.num_views(), 3);
    match train_multiview(&gapped, None, &small_cfg()) {
        Err(Error::Validation(msg)) => assert!(msg.contains("view 1")),
        other => panic!("{:?}", other.map(|o| o.view_nets.len())),
    }
}
