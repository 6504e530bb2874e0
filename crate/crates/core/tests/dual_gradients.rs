//! Finite-difference check of a full fusion layer, including the path from
//! the loss through the transfer weights back into the descriptor maps.
//!
//! Key selection is hard and therefore frozen at the expansion point; the
//! differentiable surface under test is everything else: both convolution
//! branches, batch norms, the fusion projection, the softmax weights, the
//! relationship matrix, and the descriptor maps behind it.

use dndfn_core::dual::{
    dnfe_forward, key_weights, phi_descriptor, relationship_matrix, select_key_neighbors,
    BranchInput, DnfeParams,
};
use dndfn_core::numerics::{finite_diff_check, ForwardCtx, Mode, Param, ParamVisitor};
use dndfn_core::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const N: usize = 6;
const C: usize = 3;
const C_OUT: usize = 4;
const K: usize = 2;

struct Mini {
    params: DnfeParams<f64>,
    feats: Vec<f64>,
    local: Vec<Vec<usize>>,
    key: Vec<Vec<usize>>,
}

impl ParamVisitor<f64> for Mini {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<f64>)) {
        self.params.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
        self.params.visit_params_mut(f);
    }
}

fn forward_loss(m: &mut Mini) -> Result<f64> {
    let mut ctx = ForwardCtx::new(Mode::Train, 0);
    let f = ctx.graph.constant(m.feats.clone(), vec![N, C]);
    let desc = phi_descriptor(&mut ctx, f, &mut m.params.theta, &mut m.params.pi)?;
    let rel = relationship_matrix(&mut ctx, desc)?;
    let w = key_weights(&mut ctx, &rel, &m.key)?;
    let local = m.local.clone();
    let key = m.key.clone();
    let out = dnfe_forward(
        &mut ctx,
        f,
        BranchInput::Plain(&local),
        BranchInput::Weighted(&key, w),
        &mut m.params,
    )?;
    let sq = ctx.graph.mul(out, out);
    let loss = ctx.graph.sum_all(sq);
    ctx.backward_into(loss, m);
    Ok(ctx.graph.values(loss)[0])
}

#[test]
fn fusion_layer_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let params = DnfeParams::new("l", C, C_OUT, &mut rng);
    let feats: Vec<f64> = (0..N * C).map(|_| rng.random_range(-1.5..1.5)).collect();
    let local: Vec<Vec<usize>> = (0..N)
        .map(|i| (0..N).filter(|&j| j != i).take(K).collect())
        .collect();

    // Freeze the key selection at the expansion point.
    let mut m = Mini {
        params,
        feats,
        local,
        key: Vec::new(),
    };
    let key = {
        let mut ctx = ForwardCtx::new(Mode::Train, 0);
        let f = ctx.graph.constant(m.feats.clone(), vec![N, C]);
        let desc = phi_descriptor(&mut ctx, f, &mut m.params.theta, &mut m.params.pi).unwrap();
        let rel = relationship_matrix(&mut ctx, desc).unwrap();
        select_key_neighbors(&ctx, &rel, K).unwrap()
    };
    m.key = key;

    let report = finite_diff_check(&mut m, forward_loss, 1e-5, 8).unwrap();
    assert!(
        report.passed(1e-4),
        "worst {} [{}] rel err {:.3e}\n{report}",
        report.worst_name,
        report.worst_index,
        report.worst_rel_err
    );

    // The descriptor maps must actually receive gradient through the
    // softmax path, otherwise the check above is vacuous for them.
    let _ = forward_loss(&mut m).unwrap();
    let theta_norm: f64 = m.params.theta.weight.grad.iter().map(|g| g * g).sum();
    let pi_norm: f64 = m.params.pi.weight.grad.iter().map(|g| g * g).sum();
    assert!(
        theta_norm > 1e-12,
        "no gradient reached the first descriptor stage"
    );
    assert!(
        pi_norm > 1e-12,
        "no gradient reached the second descriptor stage"
    );
}
