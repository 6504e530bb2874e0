//! Trainable parameters and the layer primitives built on the tape.
//!
//! A [`Param`] owns its values and its last gradient outside any graph.
//! Each forward pass binds the parameters it touches into a fresh
//! [`ForwardCtx`]; after `backward_into` the gradients are copied back,
//! keyed by parameter name. Unbound parameters receive zero gradients so
//! an optimizer step over the whole model stays well defined.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use super::graph::{Graph, Tensor};
use super::Scalar;

/// A named trainable array with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub values: Vec<T>,
    pub shape: Vec<usize>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, values: Vec<T>, shape: Vec<usize>) -> Self {
        assert_eq!(values.len(), shape.iter().product::<usize>());
        let grad = vec![T::zero(); values.len()];
        Param {
            name: name.into(),
            values,
            shape,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, vec![T::zero(); n], shape)
    }

    pub fn ones(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, vec![T::one(); n], shape)
    }

    /// Uniform init on `(-limit, limit)`.
    pub fn uniform(
        name: impl Into<String>,
        shape: Vec<usize>,
        limit: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| T::from_f64(rng.random_range(-limit..limit)))
            .collect();
        Self::new(name, values, shape)
    }
}

/// Walk every parameter (and persistent buffer) of a model in a stable order.
pub trait ParamVisitor<T: Scalar> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));
    /// Non-trainable state that still belongs in checkpoints.
    fn visit_buffers(&self, _f: &mut dyn FnMut(&str, &[T])) {}
    fn visit_buffers_mut(&mut self, _f: &mut dyn FnMut(&str, &mut Vec<T>)) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a tape, the train/eval switch, a deterministic noise
/// source for dropout, and the record of which parameter bound to which leaf.
pub struct ForwardCtx<T: Scalar> {
    pub graph: Graph<T>,
    pub mode: Mode,
    rng: ChaCha8Rng,
    bindings: Vec<(String, Tensor)>,
}

impl<T: Scalar> ForwardCtx<T> {
    pub fn new(mode: Mode, noise_seed: u64) -> Self {
        ForwardCtx {
            graph: Graph::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(noise_seed),
            bindings: Vec::new(),
        }
    }

    /// Copy a parameter onto the tape as a gradient-tracked leaf.
    pub fn bind(&mut self, p: &Param<T>) -> Tensor {
        let t = self.graph.leaf(p.values.clone(), p.shape.clone());
        self.bindings.push((p.name.clone(), t));
        t
    }

    /// Run backward from `loss` and write each parameter's gradient
    /// (zero when it never bound into this pass).
    pub fn backward_into(&self, loss: Tensor, model: &mut dyn ParamVisitor<T>) {
        let grads = self.graph.backward(loss);
        let mut by_name: BTreeMap<&str, Vec<T>> = BTreeMap::new();
        for (name, t) in &self.bindings {
            let Some(g) = grads.get(*t) else { continue };
            match by_name.get_mut(name.as_str()) {
                Some(acc) => {
                    for (a, &v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
                None => {
                    by_name.insert(name, g.to_vec());
                }
            }
        }
        model.visit_params_mut(&mut |p| match by_name.get(p.name.as_str()) {
            Some(g) => p.grad.copy_from_slice(g),
            None => p.grad.iter_mut().for_each(|v| *v = T::zero()),
        });
    }
}

/// Inverted dropout: identity in eval mode or at rate zero, otherwise each
/// element is dropped with probability `rate` and survivors scale by
/// `1/(1-rate)` so expectations match between modes.
pub fn dropout<T: Scalar>(ctx: &mut ForwardCtx<T>, x: Tensor, rate: f64) -> Tensor {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
    if ctx.mode == Mode::Eval || rate == 0.0 {
        return x;
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..ctx.graph.numel(x))
        .map(|_| {
            if ctx.rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    ctx.graph.mul_mask(x, mask)
}

pub fn softmax<T: Scalar>(g: &mut Graph<T>, x: Tensor, axis: usize) -> Tensor {
    g.softmax_axis(x, axis)
}

pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, logits: Tensor, labels: &[usize]) -> Tensor {
    g.cross_entropy_loss(logits, labels)
}

/// Batch normalization with running statistics for evaluation.
///
/// Training updates `running = momentum * running + (1 - momentum) * batch`,
/// with the unbiased batch variance entering the running estimate.
pub struct BatchNorm<T> {
    prefix: String,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(prefix: impl Into<String>, width: usize) -> Self {
        let prefix = prefix.into();
        BatchNorm {
            gamma: Param::ones(format!("{prefix}.gamma"), vec![width]),
            beta: Param::zeros(format!("{prefix}.beta"), vec![width]),
            running_mean: vec![T::zero(); width],
            running_var: vec![T::one(); width],
            prefix,
            // Averages roughly the last fifty batches: desk-scale epochs
            // are only tens of steps, so the common 0.9 leaves evaluation
            // statistics hostage to the last few batches.
            momentum: 0.98,
            eps: 1e-5,
        }
    }

    pub fn width(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, ctx: &mut ForwardCtx<T>, x: Tensor) -> Tensor {
        let gamma = ctx.bind(&self.gamma);
        let beta = ctx.bind(&self.beta);
        match ctx.mode {
            Mode::Train => {
                let rows = ctx.graph.shape(x)[0];
                let (y, mean, var) = ctx.graph.batch_norm_train(x, gamma, beta, self.eps);
                let bessel = if rows > 1 {
                    rows as f64 / (rows as f64 - 1.0)
                } else {
                    1.0
                };
                let m = T::from_f64(self.momentum);
                let one_m = T::from_f64(1.0 - self.momentum);
                let bessel = T::from_f64(bessel);
                for (r, &b) in self.running_mean.iter_mut().zip(&mean) {
                    *r = m * *r + one_m * b;
                }
                for (r, &b) in self.running_var.iter_mut().zip(&var) {
                    *r = m * *r + one_m * b * bessel;
                }
                y
            }
            Mode::Eval => ctx.graph.batch_norm_eval(
                x,
                gamma,
                beta,
                &self.running_mean,
                &self.running_var,
                self.eps,
            ),
        }
    }
}

impl<T: Scalar> ParamVisitor<T> for BatchNorm<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[T])) {
        f(&format!("{}.running_mean", self.prefix), &self.running_mean);
        f(&format!("{}.running_var", self.prefix), &self.running_var);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        f(
            &format!("{}.running_mean", self.prefix),
            &mut self.running_mean,
        );
        f(
            &format!("{}.running_var", self.prefix),
            &mut self.running_var,
        );
    }
}

/// Optional batch norm followed by a leaky rectifier; slope 1 skips the
/// activation entirely.
pub struct NormAct<T> {
    pub norm: Option<BatchNorm<T>>,
    pub slope: f64,
}

impl<T: Scalar> NormAct<T> {
    pub fn forward(&mut self, ctx: &mut ForwardCtx<T>, x: Tensor) -> Tensor {
        let mut y = x;
        if let Some(bn) = &mut self.norm {
            y = bn.forward(ctx, y);
        }
        if self.slope != 1.0 {
            y = ctx.graph.leaky_relu(y, self.slope);
        }
        y
    }
}

impl<T: Scalar> ParamVisitor<T> for NormAct<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        if let Some(bn) = &self.norm {
            bn.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(bn) = &mut self.norm {
            bn.visit_params_mut(f);
        }
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[T])) {
        if let Some(bn) = &self.norm {
            bn.visit_buffers(f);
        }
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        if let Some(bn) = &mut self.norm {
            bn.visit_buffers_mut(f);
        }
    }
}

/// Linear map `x·Wᵀ + b` with optional batch norm and leaky activation.
pub struct AffineLayer<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub norm: Option<BatchNorm<T>>,
    pub slope: f64,
}

impl<T: Scalar> AffineLayer<T> {
    /// He-style uniform init scaled by fan-in; bias starts at zero.
    pub fn new(
        prefix: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        norm: bool,
        slope: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let prefix = prefix.into();
        let limit = (6.0 / fan_in as f64).sqrt();
        AffineLayer {
            weight: Param::uniform(
                format!("{prefix}.weight"),
                vec![fan_out, fan_in],
                limit,
                rng,
            ),
            bias: Param::zeros(format!("{prefix}.bias"), vec![fan_out]),
            norm: norm.then(|| BatchNorm::new(format!("{prefix}.norm"), fan_out)),
            slope,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&mut self, ctx: &mut ForwardCtx<T>, x: Tensor) -> Tensor {
        let w = ctx.bind(&self.weight);
        let b = ctx.bind(&self.bias);
        let mut y = ctx.graph.affine(x, w, b);
        if let Some(bn) = &mut self.norm {
            y = bn.forward(ctx, y);
        }
        if self.slope != 1.0 {
            y = ctx.graph.leaky_relu(y, self.slope);
        }
        y
    }
}

impl<T: Scalar> ParamVisitor<T> for AffineLayer<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
        if let Some(bn) = &self.norm {
            bn.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
        if let Some(bn) = &mut self.norm {
            bn.visit_params_mut(f);
        }
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[T])) {
        if let Some(bn) = &self.norm {
            bn.visit_buffers(f);
        }
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        if let Some(bn) = &mut self.norm {
            bn.visit_buffers_mut(f);
        }
    }
}

/// Run a stack of [`AffineLayer`]s in order.
pub fn mlp_forward<T: Scalar>(
    ctx: &mut ForwardCtx<T>,
    x: Tensor,
    layers: &mut [AffineLayer<T>],
) -> Tensor {
    layers.iter_mut().fold(x, |h, layer| layer.forward(ctx, h))
}
