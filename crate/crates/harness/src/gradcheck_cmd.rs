//! Double-precision finite-difference verification of the full model,
//! reported per parameter group. A deliberate fault can be injected into a
//! named group's gradients to prove the check actually catches errors.

use dndfn_core::neighborhood::{NeighborhoodMode, PointCloud};
use dndfn_core::network::{dndfn_forward, ModelParams, NetworkConfig};
use dndfn_core::numerics::{
    cross_entropy, finite_diff_check, ForwardCtx, Mode, Param, ParamVisitor,
};
use dndfn_core::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;
pub const GROUPS: [&str; 7] = [
    "first",
    "theta",
    "pi",
    "phi_local",
    "phi_key",
    "fusion",
    "head",
];

#[derive(Clone, Debug)]
pub struct GroupReport {
    pub group: String,
    pub worst_rel_err: f64,
    pub worst_param: String,
}

#[derive(Clone, Debug)]
pub struct GradcheckOutcome {
    pub groups: Vec<GroupReport>,
    pub elements_checked: usize,
}

impl GradcheckOutcome {
    pub fn worst(&self) -> &GroupReport {
        self.groups
            .iter()
            .max_by(|a, b| a.worst_rel_err.total_cmp(&b.worst_rel_err))
            .expect("at least one group")
    }

    pub fn passed(&self) -> bool {
        self.worst().worst_rel_err <= TOLERANCE
    }

    pub fn table(&self) -> String {
        let mut s = String::from("group       worst rel err  at parameter\n");
        for g in &self.groups {
            s.push_str(&format!(
                "{:<11} {:>13.3e}  {}\n",
                g.group, g.worst_rel_err, g.worst_param
            ));
        }
        s
    }
}

fn group_of(name: &str) -> Result<&'static str> {
    let hit = if name.starts_with("first.") {
        "first"
    } else if name.starts_with("head.") {
        "head"
    } else if name.contains(".theta.") {
        "theta"
    } else if name.contains(".pi.") {
        "pi"
    } else if name.contains(".phi_local.") || name.contains(".local_out.") {
        "phi_local"
    } else if name.contains(".phi_key.") || name.contains(".key_out.") {
        "phi_key"
    } else if name.contains(".fusion.") {
        "fusion"
    } else {
        return Err(Error::CheckFailed(format!(
            "parameter '{name}' belongs to no known group"
        )));
    };
    Ok(hit)
}

struct Setup {
    model: ModelParams<f64>,
    config: NetworkConfig,
    clouds: Vec<PointCloud>,
    labels: Vec<usize>,
    fault: Option<String>,
}

impl ParamVisitor<f64> for Setup {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<f64>)) {
        self.model.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
        self.model.visit_params_mut(f);
    }
}

fn loss_of(setup: &mut Setup) -> Result<f64> {
    let mut ctx = ForwardCtx::new(Mode::Train, 11);
    let logits = dndfn_forward(&mut ctx, &mut setup.model, &setup.config, &setup.clouds)?;
    let loss = cross_entropy(&mut ctx.graph, logits, &setup.labels);
    let value = ctx.graph.values(loss)[0];
    ctx.backward_into(loss, &mut setup.model);
    if let Some(fault) = setup.fault.clone() {
        setup.model.visit_params_mut(&mut |p| {
            if p.name.contains(&fault) {
                for g in p.grad.iter_mut() {
                    *g = -*g;
                }
            }
        });
    }
    Ok(value)
}

/// Check every parameter group of a tiny double-precision model against
/// central differences. `fault` flips the sign of matching gradients so the
/// negative control demonstrably fails.
///
/// The loss is piecewise with respect to the key-neighbor selection and the
/// rectifier kinks; analytic gradients differentiate the active piece. A
/// seed that parks one of those boundaries inside the stencil window makes
/// the difference quotient straddle pieces and report a spurious mismatch,
/// so non-default seeds should be screened with a step sweep before being
/// treated as a reference.
pub fn run_gradcheck(seed: u64, fault: Option<&str>) -> Result<GradcheckOutcome> {
    let config = NetworkConfig {
        points_in: 8,
        layer_points: [8, 8, 6, 4],
        channels: [6, 6, 6, 6],
        k: 2,
        radii: [0.6, 0.8, 1.0, 1.2],
        num_classes: 3,
        dropout: 0.0,
        head_hidden: 6,
        mode: NeighborhoodMode::TnBall,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ModelParams::<f64>::new(&config, &mut rng)?;
    // Offset zero-initialized biases and shifts so no rectifier input sits
    // at its kink, where central differences straddle the slope change.
    model.visit_params_mut(&mut |p| {
        if p.name.ends_with(".bias") || p.name.ends_with(".beta") {
            for (i, v) in p.values.iter_mut().enumerate() {
                *v += 0.05 + 0.011 * (i % 3) as f64;
            }
        }
    });
    let clouds: Vec<PointCloud> = (0..2)
        .map(|_| {
            let pts: Vec<[f32; 3]> = (0..config.points_in)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect();
            PointCloud::new(pts)
        })
        .collect::<Result<_>>()?;
    let mut setup = Setup {
        model,
        config,
        clouds,
        labels: vec![0, 2],
        fault: fault.map(String::from),
    };
    // The absolute step balances roundoff (grows as 1/eps against the
    // 1e-6 gradient floor) against stencil truncation (grows as eps^2
    // through the normalization curvature); both sit near 2e-5 here,
    // five-fold under the tolerance.
    let report = finite_diff_check(&mut setup, loss_of, 1e-5, 6)?;

    let mut groups: Vec<GroupReport> = GROUPS
        .iter()
        .map(|&g| GroupReport {
            group: g.to_string(),
            worst_rel_err: -1.0,
            worst_param: String::from("(none)"),
        })
        .collect();
    for (name, err) in &report.per_param {
        let g = group_of(name)?;
        let slot = groups.iter_mut().find(|r| r.group == g).unwrap();
        if *err > slot.worst_rel_err {
            slot.worst_rel_err = *err;
            slot.worst_param = name.clone();
        }
    }
    for g in &groups {
        if g.worst_rel_err < 0.0 {
            return Err(Error::CheckFailed(format!(
                "parameter group '{}' has no parameters to check",
                g.group
            )));
        }
    }
    Ok(GradcheckOutcome {
        groups,
        elements_checked: report.elements_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn injected_sign_flip_fails_naming_the_group() {
        let outcome = run_gradcheck(4, Some("phi_local")).unwrap();
        assert!(!outcome.passed());
        assert_eq!(outcome.worst().group, "phi_local");
        assert!(outcome.worst().worst_param.contains("phi_local"));
    }

    #[test]
    fn every_parameter_maps_to_a_group() {
        for name in [
            "first.raise.weight",
            "first.norm.gamma",
            "layer2.theta.bias",
            "layer3.pi.weight",
            "layer4.phi_local.weight",
            "layer2.local_out.beta",
            "layer3.phi_key.bias",
            "layer4.key_out.gamma",
            "layer2.fusion.norm.beta",
            "head.fc1.weight",
            "head.fc2.bias",
        ] {
            group_of(name).unwrap();
        }
        assert!(group_of("stray.weight").is_err());
    }
}
