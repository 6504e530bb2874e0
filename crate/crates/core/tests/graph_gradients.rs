//! Finite-difference verification of every tape operation.
//!
//! Each case rebuilds a tiny graph from scratch around perturbed copies of
//! its inputs and compares the resulting loss slope against the gradient the
//! tape reports. The loss is a fixed pseudo-random weighting of the output so
//! sign and permutation errors cannot cancel.

use dndfn_core::numerics::{Aggregate, Graph, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-7;

fn weights(n: usize) -> Vec<f64> {
    (0..n).map(|j| (j as f64 + 1.0).sin() + 0.5).collect()
}

/// Evaluate the op once: weighted-sum loss and analytic gradients per input.
fn eval<F>(build: &F, shapes: &[Vec<usize>], vals: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>)
where
    F: Fn(&mut Graph<f64>, &[Tensor]) -> Tensor,
{
    let mut g = Graph::new();
    let leaves: Vec<Tensor> = vals
        .iter()
        .zip(shapes)
        .map(|(v, s)| g.leaf(v.clone(), s.clone()))
        .collect();
    let out = build(&mut g, &leaves);
    let weighted = g.mul_mask(out, weights(g.numel(out)));
    let loss = g.sum_all(weighted);
    let grads = g.backward(loss);
    let analytic = leaves
        .iter()
        .map(|&t| {
            grads
                .get(t)
                .map(|x| x.to_vec())
                .unwrap_or_else(|| vec![0.0; g.numel(t)])
        })
        .collect();
    (g.values(loss)[0], analytic)
}

fn check_op<F>(name: &str, shapes: &[Vec<usize>], build: F)
where
    F: Fn(&mut Graph<f64>, &[Tensor]) -> Tensor,
{
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let base: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
        })
        .collect();
    let (_, analytic) = eval(&build, shapes, &base);
    for k in 0..base.len() {
        for i in 0..base[k].len() {
            let mut plus = base.clone();
            plus[k][i] += EPS;
            let mut minus = base.clone();
            minus[k][i] -= EPS;
            let (lp, _) = eval(&build, shapes, &plus);
            let (lm, _) = eval(&build, shapes, &minus);
            let fd = (lp - lm) / (2.0 * EPS);
            let a = analytic[k][i];
            if a.abs() < 1e-8 && fd.abs() < 1e-8 {
                continue; // both zero up to fd noise
            }
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(
                err < TOL,
                "{name}: input {k} elem {i}: analytic {a:.9e} vs fd {fd:.9e} (rel {err:.3e})"
            );
        }
    }
}

#[test]
fn elementwise_ops() {
    check_op("add", &[vec![2, 3], vec![2, 3]], |g, t| g.add(t[0], t[1]));
    check_op("sub", &[vec![2, 3], vec![2, 3]], |g, t| g.sub(t[0], t[1]));
    check_op("mul", &[vec![2, 3], vec![2, 3]], |g, t| g.mul(t[0], t[1]));
    check_op("scale", &[vec![2, 3]], |g, t| g.scale(t[0], -1.7));
    check_op("mul_mask", &[vec![6]], |g, t| {
        g.mul_mask(t[0], vec![2.0, 0.0, 1.0, -1.0, 0.5, 3.0])
    });
    check_op("leaky_relu", &[vec![3, 3]], |g, t| g.leaky_relu(t[0], 0.2));
    check_op("mul_same_tensor", &[vec![2, 2]], |g, t| g.mul(t[0], t[0]));
}

#[test]
fn linear_ops() {
    check_op("affine", &[vec![3, 4], vec![2, 4], vec![2]], |g, t| {
        g.affine(t[0], t[1], t[2])
    });
    check_op("matmul_nt", &[vec![3, 4], vec![2, 4]], |g, t| {
        g.matmul_nt(t[0], t[1])
    });
    check_op("matmul_nt_self", &[vec![3, 4]], |g, t| {
        g.matmul_nt(t[0], t[0])
    });
}

#[test]
fn gather_and_layout_ops() {
    check_op("gather_rows_with_repeat", &[vec![4, 3]], |g, t| {
        g.gather_rows(t[0], &[2, 0, 2, 3])
    });
    check_op("gather_elems_with_repeat", &[vec![3, 3]], |g, t| {
        g.gather_elems(t[0], &[0, 4, 4, 8, 2])
    });
    check_op("reshape", &[vec![2, 6]], |g, t| g.reshape(t[0], vec![4, 3]));
    check_op("slice_rows", &[vec![5, 2]], |g, t| g.slice_rows(t[0], 1, 3));
    check_op(
        "concat_rows",
        &[vec![2, 3], vec![1, 3], vec![3, 3]],
        |g, t| g.concat_rows(&[t[0], t[1], t[2]]),
    );
    check_op("concat_cols", &[vec![3, 2], vec![3, 4]], |g, t| {
        g.concat_cols(t[0], t[1])
    });
}

#[test]
fn reduction_ops() {
    check_op("segment_sum", &[vec![6, 3]], |g, t| {
        g.segment_reduce(t[0], 3, Aggregate::Sum)
    });
    check_op("segment_max", &[vec![6, 3]], |g, t| {
        g.segment_reduce(t[0], 2, Aggregate::Max)
    });
    check_op("mul_rowwise", &[vec![3, 4], vec![3]], |g, t| {
        g.mul_rowwise(t[0], t[1])
    });
    check_op("sum_all", &[vec![7]], |g, t| g.sum_all(t[0]));
}

#[test]
fn normalization_and_loss_ops() {
    check_op(
        "batch_norm_train",
        &[vec![5, 3], vec![3], vec![3]],
        |g, t| g.batch_norm_train(t[0], t[1], t[2], 1e-5).0,
    );
    check_op(
        "batch_norm_eval",
        &[vec![4, 2], vec![2], vec![2]],
        |g, t| g.batch_norm_eval(t[0], t[1], t[2], &[0.3, -0.1], &[1.5, 0.7], 1e-5),
    );
    check_op("softmax_rows", &[vec![3, 4]], |g, t| {
        g.softmax_axis(t[0], 1)
    });
    check_op("softmax_cols", &[vec![3, 4]], |g, t| {
        g.softmax_axis(t[0], 0)
    });
    check_op("softmax_rank3_middle", &[vec![2, 3, 2]], |g, t| {
        g.softmax_axis(t[0], 1)
    });
    check_op("cross_entropy", &[vec![4, 3]], |g, t| {
        g.cross_entropy_loss(t[0], &[0, 2, 1, 2])
    });
}

#[test]
fn composite_pipeline_matches_finite_differences() {
    // A miniature of the real network body: affine -> bn -> leaky -> gather
    // -> segment max -> rowwise scaling -> loss.
    check_op(
        "composite",
        &[vec![6, 3], vec![4, 3], vec![4], vec![4], vec![4], vec![3]],
        |g, t| {
            let h = g.affine(t[0], t[1], t[2]);
            let (h, _, _) = g.batch_norm_train(h, t[3], t[4], 1e-5);
            let h = g.leaky_relu(h, 0.2);
            let gathered = g.gather_rows(h, &[0, 2, 1, 3, 5, 4]);
            let pooled = g.segment_reduce(gathered, 2, Aggregate::Max);
            g.mul_rowwise(pooled, t[5])
        },
    );
}
