//! End-to-end behavior of the training loop and evaluator at toy scale.

use dndfn_core::data::{gen_dataset, Primitive, Rotation, Split};
use dndfn_core::neighborhood::NeighborhoodMode;
use dndfn_core::network::ModelParams;
use dndfn_core::numerics::ParamVisitor;
use dndfn_core::Error;
use dndfn_harness::config::TrainConfig;
use dndfn_harness::evaluate::{evaluate_model, EvalOverride};
use dndfn_harness::train::train_on;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config(num_classes: usize) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.network.points_in = 24;
    c.network.layer_points = [24, 12, 8, 6];
    c.network.channels = [12, 16, 20, 24];
    c.network.k = 2;
    c.network.radii = [0.4, 0.6, 0.9, 1.2];
    c.network.num_classes = num_classes;
    c.network.head_hidden = 16;
    c.network.dropout = 0.0;
    c.batch = 10;
    c.seed = 11;
    c.early_stop_acc = None;
    c
}

#[test]
fn overfitting_ten_clouds_reaches_full_train_accuracy() {
    let classes = [Primitive::Sphere, Primitive::Cube];
    let train_set = gen_dataset(&classes, 5, 24, 3, Split::Train).unwrap();
    let test_set = gen_dataset(&classes, 2, 24, 3, Split::Test).unwrap();
    let mut config = tiny_config(2);
    config.epochs = 200;
    config.eval_every = 200;
    let mut outcome = train_on(&config, &train_set, &test_set).unwrap();

    let on_train = evaluate_model(
        &config.network,
        &mut outcome.model,
        &train_set,
        &EvalOverride::default(),
        config.batch,
        String::new(),
    )
    .unwrap();
    assert_eq!(
        on_train.overall_accuracy, 1.0,
        "final train accuracy {:.2}",
        on_train.overall_accuracy
    );

    // The cosine schedule must start and end exactly at the configured rates.
    assert_eq!(outcome.report.lr_first, 0.1);
    assert_eq!(outcome.report.lr_last, 0.001);
}

#[test]
fn same_seed_runs_are_bitwise_identical() {
    let classes = [Primitive::Sphere, Primitive::Torus];
    let train_set = gen_dataset(&classes, 4, 24, 9, Split::Train).unwrap();
    let test_set = gen_dataset(&classes, 2, 24, 9, Split::Test).unwrap();
    let mut config = tiny_config(2);
    config.epochs = 3;

    let bits = |m: &ModelParams<f32>| {
        let mut out: Vec<(String, Vec<u32>)> = Vec::new();
        m.visit_params(&mut |p| {
            out.push((
                p.name.clone(),
                p.values.iter().map(|v| v.to_bits()).collect(),
            ))
        });
        m.visit_buffers(&mut |name, vals| {
            out.push((name.to_string(), vals.iter().map(|v| v.to_bits()).collect()))
        });
        out
    };
    let a = train_on(&config, &train_set, &test_set).unwrap();
    let b = train_on(&config, &train_set, &test_set).unwrap();
    assert_eq!(a.report.loss_curve, b.report.loss_curve);
    assert_eq!(bits(&a.model), bits(&b.model));
}

#[test]
fn untrained_model_scores_near_chance_on_balanced_classes() {
    let classes = [
        Primitive::Sphere,
        Primitive::Cube,
        Primitive::Cylinder,
        Primitive::Torus,
    ];
    let dataset = gen_dataset(&classes, 100, 24, 21, Split::Test).unwrap();
    let config = tiny_config(4);
    let mut model =
        ModelParams::<f32>::new(&config.network, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let report = evaluate_model(
        &config.network,
        &mut model,
        &dataset,
        &EvalOverride::default(),
        16,
        String::new(),
    )
    .unwrap();
    assert!(
        (report.overall_accuracy - 0.25).abs() <= 0.1,
        "untrained accuracy {:.3} strays from chance",
        report.overall_accuracy
    );
}

#[test]
fn evaluation_is_repeatable_and_recounts_exactly() {
    let classes = [Primitive::Sphere, Primitive::Cone];
    let dataset = gen_dataset(&classes, 10, 24, 13, Split::Test).unwrap();
    let config = tiny_config(2);
    let mut model =
        ModelParams::<f32>::new(&config.network, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let ovr = EvalOverride {
        points: Some(16),
        rotation: Some(Rotation::ZAxis),
    };
    let a = evaluate_model(
        &config.network,
        &mut model,
        &dataset,
        &ovr,
        8,
        String::new(),
    )
    .unwrap();
    let b = evaluate_model(
        &config.network,
        &mut model,
        &dataset,
        &ovr,
        8,
        String::new(),
    )
    .unwrap();
    assert_eq!(a.predictions, b.predictions);
    assert_eq!(a.overall_accuracy, b.overall_accuracy);

    // Independent recount of prediction==label must equal the reported value.
    let correct = a
        .predictions
        .iter()
        .zip(&a.labels)
        .filter(|(p, l)| p == l)
        .count();
    assert_eq!(a.overall_accuracy, correct as f64 / a.labels.len() as f64);
    assert_eq!(a.correct(), correct);
}

#[test]
fn class_count_mismatch_is_a_config_error() {
    let three = gen_dataset(
        &[Primitive::Sphere, Primitive::Cube, Primitive::Cone],
        2,
        24,
        1,
        Split::Train,
    )
    .unwrap();
    let config = tiny_config(4);
    let err = train_on(&config, &three, &three).map(|_| ());
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn oversized_points_override_is_a_capacity_error() {
    let dataset =
        gen_dataset(&[Primitive::Sphere, Primitive::Cube], 2, 24, 2, Split::Test).unwrap();
    let config = tiny_config(2);
    let mut model =
        ModelParams::<f32>::new(&config.network, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let ovr = EvalOverride {
        points: Some(999),
        rotation: None,
    };
    let err = evaluate_model(
        &config.network,
        &mut model,
        &dataset,
        &ovr,
        4,
        String::new(),
    )
    .map(|_| ());
    assert!(matches!(err, Err(Error::Capacity(_))));
}

#[test]
fn weighted_key_branch_trains_in_tn_only_mode() {
    // The learned-relationship mode alone must still move its selector
    // parameters: gradients flow to the descriptor maps through the weights.
    let classes = [Primitive::Sphere, Primitive::Cube];
    let train_set = gen_dataset(&classes, 4, 24, 17, Split::Train).unwrap();
    let test_set = gen_dataset(&classes, 2, 24, 17, Split::Test).unwrap();
    let mut config = tiny_config(2);
    config.network.mode = NeighborhoodMode::Tn;
    config.epochs = 2;

    let before =
        ModelParams::<f32>::new(&config.network, &mut ChaCha8Rng::seed_from_u64(config.seed))
            .unwrap();
    let outcome = train_on(&config, &train_set, &test_set).unwrap();
    let snapshot = |m: &ModelParams<f32>, needle: &str| {
        let mut out = Vec::new();
        m.visit_params(&mut |p| {
            if p.name.contains(needle) {
                out.extend_from_slice(&p.values);
            }
        });
        out
    };
    for group in ["theta", "pi", "phi_key"] {
        assert_ne!(
            snapshot(&before, group),
            snapshot(&outcome.model, group),
            "{group} parameters never moved in tn-only training"
        );
    }
}
