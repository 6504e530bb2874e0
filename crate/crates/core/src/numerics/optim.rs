//! Momentum SGD with a cosine-annealed learning rate.

use std::collections::BTreeMap;

use super::nn::ParamVisitor;
use super::Scalar;
use crate::{Error, Result};

/// Optimizer state: schedule position plus one velocity buffer per parameter,
/// keyed by name so checkpoints can restore it exactly.
pub struct OptimizerState<T> {
    pub momentum: f64,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub total_steps: usize,
    pub current_step: usize,
    velocities: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(momentum: f64, lr_initial: f64, lr_final: f64, total_steps: usize) -> Self {
        assert!(total_steps >= 1, "schedule needs at least one step");
        OptimizerState {
            momentum,
            lr_initial,
            lr_final,
            total_steps,
            current_step: 0,
            velocities: BTreeMap::new(),
        }
    }

    /// Cosine schedule: `lr_final + (lr_initial - lr_final)/2 · (1 + cos(π·t/T))`.
    /// Exactly `lr_initial` at step 0 and `lr_final` at step `total_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let t = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.lr_final
            + 0.5 * (self.lr_initial - self.lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
    }

    pub fn velocities(&self) -> impl Iterator<Item = (&String, &Vec<T>)> {
        self.velocities.iter()
    }

    pub fn set_velocity(&mut self, name: impl Into<String>, v: Vec<T>) {
        self.velocities.insert(name.into(), v);
    }
}

/// One update: `v ← μ·v + g`, `p ← p − lr(t)·v`, then advance the schedule.
///
/// Fails without touching any parameter if a gradient is non-finite, naming
/// the offending parameter.
pub fn sgd_cosine_step<T: Scalar>(
    state: &mut OptimizerState<T>,
    model: &mut dyn ParamVisitor<T>,
) -> Result<()> {
    let mut bad: Option<String> = None;
    model.visit_params(&mut |p| {
        if bad.is_none() && p.grad.iter().any(|g| !g.is_finite()) {
            bad = Some(p.name.clone());
        }
    });
    if let Some(name) = bad {
        return Err(Error::Training(format!(
            "non-finite gradient in parameter '{name}' at step {}",
            state.current_step
        )));
    }
    let lr = T::from_f64(state.lr_at(state.current_step));
    let mu = T::from_f64(state.momentum);
    let velocities = &mut state.velocities;
    model.visit_params_mut(&mut |p| {
        let v = velocities
            .entry(p.name.clone())
            .or_insert_with(|| vec![T::zero(); p.values.len()]);
        assert_eq!(
            v.len(),
            p.values.len(),
            "velocity shape drift on '{}'",
            p.name
        );
        for ((vi, &gi), pi) in v.iter_mut().zip(&p.grad).zip(&mut p.values) {
            *vi = mu * *vi + gi;
            *pi -= lr * *vi;
        }
    });
    state.current_step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::nn::Param;

    struct One {
        p: Param<f64>,
    }
    impl ParamVisitor<f64> for One {
        fn visit_params(&self, f: &mut dyn FnMut(&Param<f64>)) {
            f(&self.p);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
            f(&mut self.p);
        }
    }

    #[test]
    fn plain_sgd_single_step() {
        let mut m = One {
            p: Param::new("w", vec![1.0], vec![1]),
        };
        m.p.grad = vec![2.0];
        let mut opt = OptimizerState::new(0.0, 0.1, 0.1, 10);
        sgd_cosine_step(&mut opt, &mut m).unwrap();
        assert!((m.p.values[0] - 0.8).abs() < 1e-12);
        assert_eq!(opt.current_step, 1);
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let opt = OptimizerState::<f64>::new(0.9, 0.1, 0.001, 100);
        assert!((opt.lr_at(0) - 0.1).abs() < 1e-15);
        assert!((opt.lr_at(100) - 0.001).abs() < 1e-15);
        assert!((opt.lr_at(50) - 0.0505).abs() < 1e-12);
        assert!(
            (opt.lr_at(150) - 0.001).abs() < 1e-15,
            "clamps past the end"
        );
    }

    #[test]
    fn momentum_accumulates_over_two_steps() {
        let mut m = One {
            p: Param::new("w", vec![1.0], vec![1]),
        };
        let mut opt = OptimizerState::new(0.9, 0.1, 0.1, 10);
        m.p.grad = vec![1.0];
        sgd_cosine_step(&mut opt, &mut m).unwrap();
        assert!((m.p.values[0] - 0.9).abs() < 1e-12);
        m.p.grad = vec![1.0];
        sgd_cosine_step(&mut opt, &mut m).unwrap();
        // v2 = 0.9*1 + 1 = 1.9, p = 0.9 - 0.19
        assert!((m.p.values[0] - 0.71).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut m = One {
            p: Param::new("phi.weight", vec![1.0], vec![1]),
        };
        m.p.grad = vec![f64::NAN];
        let mut opt = OptimizerState::new(0.9, 0.1, 0.001, 10);
        let err = sgd_cosine_step(&mut opt, &mut m).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("phi.weight"), "missing name in: {msg}");
        assert!(
            (m.p.values[0] - 1.0).abs() < 1e-15,
            "must not update on failure"
        );
    }
}
