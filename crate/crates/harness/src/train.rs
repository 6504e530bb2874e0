//! The training loop: shuffled mini-batch SGD with momentum under cosine
//! annealing, per-epoch loss and test-accuracy reporting, deterministic for
//! a fixed seed.

use std::time::Instant;

use dndfn_core::data::{augment, Dataset, Split};
use dndfn_core::neighborhood::PointCloud;
use dndfn_core::network::{dndfn_forward, ModelParams};
use dndfn_core::numerics::{cross_entropy, sgd_cosine_step, ForwardCtx, Mode, OptimizerState};
use dndfn_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::dataset_io::load_dataset;
use crate::evaluate::{evaluate_model, EvalOverride};
use crate::metrics::MetricsReport;
use crate::mix_seed;

pub struct TrainOutcome {
    pub model: ModelParams<f32>,
    pub optim: OptimizerState<f32>,
    pub report: MetricsReport,
    pub epochs_run: usize,
}

/// Load the dataset named by the config and train on it.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    let train_set = load_dataset(&config.dataset, Split::Train)?;
    let test_set = load_dataset(&config.dataset, Split::Test)?;
    train_on(config, &train_set, &test_set)
}

/// Train on in-memory datasets. Emits one line per epoch with the mean
/// loss, the applied learning rate, and (on evaluation epochs) accuracy.
pub fn train_on(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainOutcome> {
    config.validate()?;
    let network = &config.network;
    for (set, tag) in [(train_set, "train"), (test_set, "test")] {
        if set.num_classes() != network.num_classes {
            return Err(Error::Config(format!(
                "{tag} split has {} classes but the model expects {}",
                set.num_classes(),
                network.num_classes
            )));
        }
        if set.clouds.is_empty() {
            return Err(Error::Config(format!("{tag} split is empty")));
        }
    }
    let labels: Vec<usize> = train_set
        .clouds
        .iter()
        .map(|c| {
            c.label
                .ok_or_else(|| Error::Config("training cloud without a label".into()))
        })
        .collect::<Result<_>>()?;

    let start = Instant::now();
    let mut model = ModelParams::<f32>::new(network, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
    let n = train_set.clouds.len();
    let steps_per_epoch = n.div_ceil(config.batch);
    let total_steps = config.epochs * steps_per_epoch;
    // The schedule spans total_steps-1 so the first applied rate is exactly
    // lr_initial and the last is exactly lr_final.
    let mut optim = OptimizerState::<f32>::new(
        config.momentum,
        config.lr_initial,
        config.lr_final,
        total_steps.saturating_sub(1).max(1),
    );
    let lr_first = optim.lr_at(0);
    let mut lr_last = lr_first;

    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut last_eval: Option<MetricsReport> = None;
    let mut epochs_run = 0;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0x51u64, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        for batch_ids in order.chunks(config.batch) {
            let clouds: Vec<PointCloud> = batch_ids
                .iter()
                .map(|&i| {
                    if config.augment.is_identity() {
                        Ok(train_set.clouds[i].clone())
                    } else {
                        augment(
                            &train_set.clouds[i],
                            &config.augment,
                            mix_seed(&[config.seed, 0xa6u64, epoch as u64, i as u64]),
                        )
                    }
                })
                .collect::<Result<_>>()?;
            let batch_labels: Vec<usize> = batch_ids.iter().map(|&i| labels[i]).collect();

            let mut ctx = ForwardCtx::new(
                Mode::Train,
                mix_seed(&[config.seed, 0xd0u64, optim.current_step as u64]),
            );
            let logits = dndfn_forward(&mut ctx, &mut model, network, &clouds)?;
            let loss = cross_entropy(&mut ctx.graph, logits, &batch_labels);
            let loss_value = f64::from(ctx.graph.values(loss)[0]);
            if !loss_value.is_finite() {
                return Err(Error::Training(format!(
                    "loss became non-finite at step {}",
                    optim.current_step
                )));
            }
            ctx.backward_into(loss, &mut model);
            lr_last = optim.lr_at(optim.current_step);
            sgd_cosine_step(&mut optim, &mut model)?;
            loss_sum += loss_value * batch_ids.len() as f64;
        }
        let epoch_loss = loss_sum / n as f64;
        loss_curve.push(epoch_loss);
        epochs_run = epoch + 1;

        let evaluate_now = epochs_run % config.eval_every == 0 || epochs_run == config.epochs;
        if evaluate_now {
            let eval = evaluate_model(
                network,
                &mut model,
                test_set,
                &EvalOverride::default(),
                config.batch,
                String::new(),
            )?;
            println!(
                "epoch {epochs_run}/{}  loss {epoch_loss:.4}  lr {lr_last:.4}  test_acc {:.2}%",
                config.epochs,
                100.0 * eval.overall_accuracy
            );
            let reached = config
                .early_stop_acc
                .is_some_and(|th| eval.overall_accuracy >= th);
            last_eval = Some(eval);
            if reached {
                println!("early stop: test accuracy reached the configured threshold");
                break;
            }
        } else {
            println!(
                "epoch {epochs_run}/{}  loss {epoch_loss:.4}  lr {lr_last:.4}",
                config.epochs
            );
        }
    }

    let mut report = match last_eval {
        Some(e) => e,
        None => evaluate_model(
            network,
            &mut model,
            test_set,
            &EvalOverride::default(),
            config.batch,
            String::new(),
        )?,
    };
    report.loss_curve = loss_curve;
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.config_echo = config.to_text();
    report.lr_first = lr_first;
    report.lr_last = lr_last;
    Ok(TrainOutcome {
        model,
        optim,
        report,
        epochs_run,
    })
}
