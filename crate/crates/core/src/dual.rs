//! Learned neighborhoods and relation convolutions.
//!
//! The pieces, in dependency order: a shared descriptor map φ produces one
//! vector per point; pairwise dot products of descriptors form the
//! relationship matrix ξ; each center's key neighborhood is the top-k of its
//! ξ row (a hard, non-differentiable choice); softmax over the selected
//! coefficients yields transfer weights ω, and gradients reach φ only
//! through ω. Features then flow through two relation convolutions — plain
//! (max-aggregated) and weighted (ω-convex sum) — whose outputs a fusion
//! layer concatenates and projects to the layer's output width.

use crate::numerics::{
    AffineLayer, Aggregate, ForwardCtx, NormAct, Param, ParamVisitor, Scalar, Tensor,
};
use crate::{Error, Result};

/// Pairwise relationship coefficients ξ over one layer's active point set.
///
/// `tensor` is `[n, n]` on the tape; the diagonal is never consulted
/// (self-relations are excluded everywhere downstream).
#[derive(Clone, Copy, Debug)]
pub struct RelationshipMatrix {
    pub tensor: Tensor,
    pub n: usize,
}

/// Descriptor map φ(f) = Π(σ(θ(f))): one affine with a leaky rectifier
/// baked into `theta`, then a plain affine `pi`. The same parameters serve
/// both arguments of every coefficient.
pub fn phi_descriptor<T: Scalar>(
    ctx: &mut ForwardCtx<T>,
    features: Tensor,
    theta: &mut AffineLayer<T>,
    pi: &mut AffineLayer<T>,
) -> Result<Tensor> {
    let c = ctx.graph.shape(features)[1];
    if theta.fan_in() != c {
        return Err(Error::Dimension(format!(
            "descriptor expects width {}, features have {c}",
            theta.fan_in()
        )));
    }
    if pi.fan_in() != theta.fan_out() {
        return Err(Error::Dimension(format!(
            "descriptor stages disagree: {} out vs {} in",
            theta.fan_out(),
            pi.fan_in()
        )));
    }
    let h = theta.forward(ctx, features);
    Ok(pi.forward(ctx, h))
}

/// ξ_ij as dot products of descriptor rows: `desc · descᵀ`.
pub fn relationship_matrix<T: Scalar>(
    ctx: &mut ForwardCtx<T>,
    desc: Tensor,
) -> Result<RelationshipMatrix> {
    let n = ctx.graph.shape(desc)[0];
    if n < 2 {
        return Err(Error::Capacity(
            "relationship matrix needs at least two points".into(),
        ));
    }
    let tensor = ctx.graph.matmul_nt(desc, desc);
    Ok(RelationshipMatrix { tensor, n })
}

/// For each center, the k indices with the largest coefficients, self
/// excluded, ordered by (coefficient descending, index ascending).
pub fn select_key_neighbors<T: Scalar>(
    ctx: &ForwardCtx<T>,
    rel: &RelationshipMatrix,
    k: usize,
) -> Result<Vec<Vec<usize>>> {
    let n = rel.n;
    if k > n - 1 {
        return Err(Error::Capacity(format!(
            "key selection wants {k} of {} candidates",
            n - 1
        )));
    }
    let xi = ctx.graph.values(rel.tensor);
    if let Some(bad) = xi.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite relationship coefficient at center {}, candidate {}; \
             upstream features have overflowed — lower the learning rate",
            bad / n,
            bad % n
        )));
    }
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<(T, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (xi[i * n + j], j))
                .collect();
            row.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            row.truncate(k);
            row.into_iter().map(|(_, j)| j).collect()
        })
        .collect())
}

/// Softmax of each center's coefficients restricted to its key list,
/// differentiable back into the relationship matrix. Output is `[n, k]`.
pub fn key_weights<T: Scalar>(
    ctx: &mut ForwardCtx<T>,
    rel: &RelationshipMatrix,
    key_index: &[Vec<usize>],
) -> Result<Tensor> {
    let n = rel.n;
    if key_index.len() != n {
        return Err(Error::Dimension(format!(
            "key lists cover {} centers, matrix has {n}",
            key_index.len()
        )));
    }
    let k = key_index.first().map_or(0, Vec::len);
    if k == 0 {
        return Err(Error::Capacity("empty key neighborhood".into()));
    }
    let mut flat = Vec::with_capacity(n * k);
    for (i, keys) in key_index.iter().enumerate() {
        if keys.len() != k {
            return Err(Error::Dimension(format!(
                "ragged key lists: center {i} has {} of {k}",
                keys.len()
            )));
        }
        for &j in keys {
            if j == i {
                return Err(Error::Index(format!(
                    "center {i} appears in its own key list"
                )));
            }
            flat.push(i * n + j);
        }
    }
    let picked = ctx.graph.gather_elems(rel.tensor, &flat);
    let grid = ctx.graph.reshape(picked, vec![n, k]);
    Ok(ctx.graph.softmax_axis(grid, 1))
}

fn flatten_neighbors(
    nbr: &[Vec<usize>],
    n_points: usize,
) -> Result<(Vec<usize>, Vec<usize>, usize)> {
    let k = nbr.first().map_or(0, Vec::len);
    if k == 0 {
        return Err(Error::Capacity("empty neighbor list".into()));
    }
    let mut neighbors = Vec::with_capacity(nbr.len() * k);
    let mut centers = Vec::with_capacity(nbr.len() * k);
    for (i, list) in nbr.iter().enumerate() {
        if list.len() != k {
            return Err(Error::Dimension(format!(
                "ragged neighbor lists: center {i} has {} of {k}",
                list.len()
            )));
        }
        for &j in list {
            if j >= n_points {
                return Err(Error::Index(format!(
                    "neighbor {j} out of range for {n_points} points"
                )));
            }
            neighbors.push(j);
            centers.push(i);
        }
    }
    Ok((neighbors, centers, k))
}

/// Relation messages Φ(f_k − f_i) ⊙ f_k for every (center, neighbor) edge,
/// laid out as `[centers·k, C]` in neighbor-list order.
fn relation_messages<T: Scalar>(
    ctx: &mut ForwardCtx<T>,
    features: Tensor,
    nbr: &[Vec<usize>],
    phi_rel: &mut AffineLayer<T>,
) -> Result<(Tensor, usize)> {
    let n = ctx.graph.shape(features)[0];
    let c = ctx.graph.shape(features)[1];
    if phi_rel.fan_in() != c || phi_rel.fan_out() != c {
        return Err(Error::Dimension(format!(
            "relation map must be {c}->{c}, got {}->{}",
            phi_rel.fan_in(),
            phi_rel.fan_out()
        )));
    }
    if nbr.len() != n {
        return Err(Error::Dimension(format!(
            "{} neighbor lists for {n} feature rows",
            nbr.len()
        )));
    }
    let (neighbors, centers, k) = flatten_neighbors(nbr, n)?;
    let fk = ctx.graph.gather_rows(features, &neighbors);
    let fi = ctx.graph.gather_rows(features, &centers);
    let delta = ctx.graph.sub(fk, fi);
    let rel = phi_rel.forward(ctx, delta);
    Ok((ctx.graph.mul(rel, fk), k))
}

/// Plain relation convolution: aggregate relation messages per center, then
/// batch-norm and activate. Output keeps the input width.
pub fn it_conv<T: Scalar>(
    ctx: &mut ForwardCtx<T>,
    features: Tensor,
    nbr: &[Vec<usize>],
    phi_rel: &mut AffineLayer<T>,
    aggregate: Aggregate,
    norm: &mut NormAct<T>,
) -> Result<Tensor> {
    let (messages, k) = relation_messages(ctx, features, nbr, phi_rel)?;
    let pooled = ctx.graph.segment_reduce(messages, k, aggregate);
    Ok(norm.forward(ctx, pooled))
}

/// Weighted relation convolution: messages scale by their transfer weights
/// and sum per center (a convex combination), then batch-norm and activate.
pub fn weighted_it_conv<T: Scalar>(
    ctx: &mut ForwardCtx<T>,
    features: Tensor,
    key_index: &[Vec<usize>],
    weights: Tensor,
    phi_rel: &mut AffineLayer<T>,
    norm: &mut NormAct<T>,
) -> Result<Tensor> {
    let (messages, k) = relation_messages(ctx, features, key_index, phi_rel)?;
    let rows = ctx.graph.shape(messages)[0];
    if ctx.graph.numel(weights) != rows {
        return Err(Error::Dimension(format!(
            "{} weights for {rows} edges",
            ctx.graph.numel(weights)
        )));
    }
    let w_flat = ctx.graph.reshape(weights, vec![rows]);
    let scaled = ctx.graph.mul_rowwise(messages, w_flat);
    let pooled = ctx.graph.segment_reduce(scaled, k, Aggregate::Sum);
    Ok(norm.forward(ctx, pooled))
}

/// What one branch of a fusion layer receives.
pub enum BranchInput<'a> {
    /// Branch off: its concatenation slot is zeros, parameters stay unused.
    Disabled,
    /// Plain relation convolution with max aggregation over these lists.
    Plain(&'a [Vec<usize>]),
    /// Weighted relation convolution over key lists with weights `[n, k]`.
    Weighted(&'a [Vec<usize>], Tensor),
}

/// Parameters of one dual-neighborhood fusion layer.
///
/// Both branch slots always exist with identical shapes so every
/// neighborhood mode trains structurally identical models.
pub struct DnfeParams<T> {
    pub theta: AffineLayer<T>,
    pub pi: AffineLayer<T>,
    pub phi_local: AffineLayer<T>,
    pub local_norm: NormAct<T>,
    pub phi_key: AffineLayer<T>,
    pub key_norm: NormAct<T>,
    pub fusion: AffineLayer<T>,
}

impl<T: Scalar> DnfeParams<T> {
    pub fn new(prefix: &str, c_in: usize, c_out: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        use crate::numerics::BatchNorm;
        let slope = 0.2;
        DnfeParams {
            theta: AffineLayer::new(format!("{prefix}.theta"), c_in, c_in, false, slope, rng),
            pi: AffineLayer::new(format!("{prefix}.pi"), c_in, c_in, false, 1.0, rng),
            phi_local: AffineLayer::new(
                format!("{prefix}.phi_local"),
                c_in,
                c_in,
                false,
                slope,
                rng,
            ),
            local_norm: NormAct {
                norm: Some(BatchNorm::new(format!("{prefix}.local_out"), c_in)),
                slope,
            },
            phi_key: AffineLayer::new(format!("{prefix}.phi_key"), c_in, c_in, false, slope, rng),
            key_norm: NormAct {
                norm: Some(BatchNorm::new(format!("{prefix}.key_out"), c_in)),
                slope,
            },
            fusion: AffineLayer::new(
                format!("{prefix}.fusion"),
                2 * c_in,
                c_out,
                true,
                slope,
                rng,
            ),
        }
    }

    pub fn c_in(&self) -> usize {
        self.theta.fan_in()
    }

    pub fn c_out(&self) -> usize {
        self.fusion.fan_out()
    }
}

impl<T: Scalar> ParamVisitor<T> for DnfeParams<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.theta.visit_params(f);
        self.pi.visit_params(f);
        self.phi_local.visit_params(f);
        self.local_norm.visit_params(f);
        self.phi_key.visit_params(f);
        self.key_norm.visit_params(f);
        self.fusion.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.theta.visit_params_mut(f);
        self.pi.visit_params_mut(f);
        self.phi_local.visit_params_mut(f);
        self.local_norm.visit_params_mut(f);
        self.phi_key.visit_params_mut(f);
        self.key_norm.visit_params_mut(f);
        self.fusion.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[T])) {
        self.local_norm.visit_buffers(f);
        self.key_norm.visit_buffers(f);
        self.fusion.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        self.local_norm.visit_buffers_mut(f);
        self.key_norm.visit_buffers_mut(f);
        self.fusion.visit_buffers_mut(f);
    }
}

/// One fusion layer: run each enabled branch, concatenate the two width-C
/// slots (zeros for a disabled branch), and project to the output width.
pub fn dnfe_forward<T: Scalar>(
    ctx: &mut ForwardCtx<T>,
    features: Tensor,
    local: BranchInput<'_>,
    key: BranchInput<'_>,
    params: &mut DnfeParams<T>,
) -> Result<Tensor> {
    let n = ctx.graph.shape(features)[0];
    let c = ctx.graph.shape(features)[1];
    if c != params.c_in() {
        return Err(Error::Dimension(format!(
            "fusion layer expects width {}, features have {c}",
            params.c_in()
        )));
    }
    let run = |ctx: &mut ForwardCtx<T>,
               input: BranchInput<'_>,
               phi: &mut AffineLayer<T>,
               norm: &mut NormAct<T>|
     -> Result<Tensor> {
        match input {
            BranchInput::Disabled => Ok(ctx.graph.constant(vec![T::zero(); n * c], vec![n, c])),
            BranchInput::Plain(nbr) => it_conv(ctx, features, nbr, phi, Aggregate::Max, norm),
            BranchInput::Weighted(nbr, w) => weighted_it_conv(ctx, features, nbr, w, phi, norm),
        }
    };
    let local_out = run(ctx, local, &mut params.phi_local, &mut params.local_norm)?;
    let key_out = run(ctx, key, &mut params.phi_key, &mut params.key_norm)?;
    let joined = ctx.graph.concat_cols(local_out, key_out);
    Ok(params.fusion.forward(ctx, joined))
}
