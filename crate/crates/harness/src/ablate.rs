//! Neighborhood-mode ablation: the same data, seed, and schedule trained
//! once per mode, reported as one accuracy row each.

use dndfn_core::data::Dataset;
use dndfn_core::neighborhood::NeighborhoodMode;
use dndfn_core::Result;

use crate::config::TrainConfig;
use crate::train::train_on;

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub mode: NeighborhoodMode,
    pub accuracy: f64,
    pub epochs_run: usize,
    pub wall_clock_secs: f64,
}

/// Run the six neighborhood modes with identical seeds and schedules.
/// Row order is fixed: tn, ball, knn, ball+knn, tn+knn, tn+ball.
pub fn ablate(
    base: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(NeighborhoodMode::ALL.len());
    for mode in NeighborhoodMode::ALL {
        println!("── mode {mode} ──");
        let mut config = base.clone();
        config.network.mode = mode;
        let outcome = train_on(&config, train_set, test_set)?;
        rows.push(AblationRow {
            mode,
            accuracy: outcome.report.overall_accuracy,
            epochs_run: outcome.epochs_run,
            wall_clock_secs: outcome.report.wall_clock_secs,
        });
    }
    Ok(rows)
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("mode       accuracy  epochs  wall\n");
    for r in rows {
        s.push_str(&format!(
            "{:<10} {:>7.2}%  {:>6}  {:>5.1}s\n",
            r.mode.to_string(),
            100.0 * r.accuracy,
            r.epochs_run,
            r.wall_clock_secs
        ));
    }
    s
}
