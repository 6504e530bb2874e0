//! The four-layer dual-neighborhood classifier.
//!
//! Layer 1 is a geometric relation convolution over ball neighborhoods of
//! the raw (normalized) coordinates. Layers 2 to 4 downsample by
//! farthest-point sampling and apply the dual-branch fusion layer, with
//! neighborhoods rebuilt per layer on the active point set. A global
//! per-channel max pool and a two-layer head with dropout produce logits.
//!
//! Batches run as one tape: per-cloud rows stack into `[B·P, C]` so batch
//! normalization sees the whole mini-batch, while neighbor indices stay
//! within each cloud's row block.

use rand_chacha::ChaCha8Rng;

use crate::dual::{
    dnfe_forward, key_weights, phi_descriptor, relationship_matrix, select_key_neighbors,
    BranchInput, DnfeParams,
};
use crate::neighborhood::{ball_query, fps, knn, NeighborhoodMode, PointCloud};
use crate::numerics::{
    dropout, AffineLayer, BatchNorm, ForwardCtx, NormAct, Param, ParamVisitor, Scalar, Tensor,
};
use crate::{Error, Result};

pub const NUM_LAYERS: usize = 4;

/// Neighbor index lists, nested cloud → center → rank.
type KeyLists = Vec<Vec<Vec<usize>>>;

/// Shape and schedule of the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub points_in: usize,
    /// Active point count after each layer; layer 1 keeps `points_in`.
    pub layer_points: [usize; NUM_LAYERS],
    pub channels: [usize; NUM_LAYERS],
    /// Neighbors per branch; single-branch modes use `2k` in the active slot.
    pub k: usize,
    pub radii: [f64; NUM_LAYERS],
    pub num_classes: usize,
    pub dropout: f64,
    pub head_hidden: usize,
    pub mode: NeighborhoodMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            points_in: 256,
            layer_points: [256, 128, 64, 32],
            channels: [64, 128, 256, 512],
            k: 8,
            // Wide enough that each ball holds >= k distinct points at the
            // default 256-point density; tighter radii degenerate to
            // duplicate padding and starve the local branch.
            radii: [0.4, 0.6, 0.8, 1.0],
            num_classes: 4,
            dropout: 0.5,
            head_hidden: 256,
            mode: NeighborhoodMode::TnBall,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_points[0] != self.points_in {
            return Err(Error::Config(format!(
                "layer 1 keeps all {} input points, got {}",
                self.points_in, self.layer_points[0]
            )));
        }
        if self.layer_points.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config(format!(
                "layer point counts must be non-increasing: {:?}",
                self.layer_points
            )));
        }
        let smallest = *self.layer_points.iter().min().unwrap();
        if self.k == 0 || 2 * self.k > smallest {
            return Err(Error::Config(format!(
                "need 1 <= 2k <= smallest layer point count ({}), got k={}",
                smallest, self.k
            )));
        }
        if self.radii.iter().any(|&r| r <= 0.0) {
            return Err(Error::Config(format!(
                "radii must be positive: {:?}",
                self.radii
            )));
        }
        if self.channels.contains(&0) || self.head_hidden == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least two classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Same architecture evaluated on sparser inputs: the schedule clamps to
    /// the new point budget, widths and parameters stay identical.
    pub fn with_points(&self, points: usize) -> Self {
        let mut c = self.clone();
        c.points_in = points;
        for p in c.layer_points.iter_mut() {
            *p = (*p).min(points);
        }
        c
    }
}

/// All trainable state of the classifier.
pub struct ModelParams<T> {
    pub raise: AffineLayer<T>,
    pub relation: AffineLayer<T>,
    pub first_norm: NormAct<T>,
    pub layers: Vec<DnfeParams<T>>,
    pub head1: AffineLayer<T>,
    pub head2: AffineLayer<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(config: &NetworkConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let slope = 0.2;
        let layers = (1..NUM_LAYERS)
            .map(|l| DnfeParams::new(&format!("layer{}", l + 1), c[l - 1], c[l], rng))
            .collect();
        Ok(ModelParams {
            raise: AffineLayer::new("first.raise", 3, c[0], false, 1.0, rng),
            relation: AffineLayer::new("first.relation", 10, c[0], false, slope, rng),
            first_norm: NormAct {
                norm: Some(BatchNorm::new("first.norm", c[0])),
                slope,
            },
            layers,
            head1: AffineLayer::new(
                "head.fc1",
                c[NUM_LAYERS - 1],
                config.head_hidden,
                true,
                slope,
                rng,
            ),
            head2: AffineLayer::new(
                "head.fc2",
                config.head_hidden,
                config.num_classes,
                false,
                1.0,
                rng,
            ),
        })
    }
}

impl<T: Scalar> ParamVisitor<T> for ModelParams<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.raise.visit_params(f);
        self.relation.visit_params(f);
        self.first_norm.visit_params(f);
        for l in &self.layers {
            l.visit_params(f);
        }
        self.head1.visit_params(f);
        self.head2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.raise.visit_params_mut(f);
        self.relation.visit_params_mut(f);
        self.first_norm.visit_params_mut(f);
        for l in &mut self.layers {
            l.visit_params_mut(f);
        }
        self.head1.visit_params_mut(f);
        self.head2.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[T])) {
        self.first_norm.visit_buffers(f);
        for l in &self.layers {
            l.visit_buffers(f);
        }
        self.head1.visit_buffers(f);
        self.head2.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        self.first_norm.visit_buffers_mut(f);
        for l in &mut self.layers {
            l.visit_buffers_mut(f);
        }
        self.head1.visit_buffers_mut(f);
        self.head2.visit_buffers_mut(f);
    }
}

/// Total trainable scalar count.
pub fn param_count<T: Scalar>(params: &dyn ParamVisitor<T>) -> usize {
    let mut n = 0;
    params.visit_params(&mut |p| n += p.values.len());
    n
}

/// Center the cloud's first `take` points on their centroid and scale to
/// unit max-norm, all in `f64` so the result is order-independent up to the
/// final rounding.
pub fn normalize_points(points: &[[f32; 3]], take: usize) -> Vec<[f32; 3]> {
    let pts = &points[..take];
    let n = pts.len() as f64;
    let mut centroid = [0.0f64; 3];
    for p in pts {
        for (c, &v) in centroid.iter_mut().zip(p) {
            *c += v as f64;
        }
    }
    for c in centroid.iter_mut() {
        *c /= n;
    }
    let centered: Vec<[f64; 3]> = pts
        .iter()
        .map(|p| {
            [
                p[0] as f64 - centroid[0],
                p[1] as f64 - centroid[1],
                p[2] as f64 - centroid[2],
            ]
        })
        .collect();
    let max_norm = centered
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0f64, f64::max);
    let scale = if max_norm > 0.0 { 1.0 / max_norm } else { 1.0 };
    centered
        .iter()
        .map(|p| {
            [
                (p[0] * scale) as f32,
                (p[1] * scale) as f32,
                (p[2] * scale) as f32,
            ]
        })
        .collect()
}

/// Index of the lexicographically smallest coordinate triple; ties keep the
/// lowest index. Used as the deterministic, order-free sampling start.
fn lex_min_index(points: &[[f32; 3]]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        if *p < points[best] {
            best = i;
        }
    }
    best
}

/// Neighborhoods captured at one layer of one cloud, for visualization.
#[derive(Clone, Debug, Default)]
pub struct LayerTrace {
    pub layer: usize,
    pub points: Vec<[f32; 3]>,
    pub local: Vec<Vec<usize>>,
    pub key: Vec<Vec<usize>>,
}

enum KeyPlan {
    Off,
    Knn(usize),
    Learned(usize),
}

struct LayerPlan {
    local_ball: Option<usize>,
    local_knn: Option<usize>,
    key: KeyPlan,
}

fn plan(mode: NeighborhoodMode, k: usize) -> LayerPlan {
    match mode {
        NeighborhoodMode::Ball => LayerPlan {
            local_ball: Some(2 * k),
            local_knn: None,
            key: KeyPlan::Off,
        },
        NeighborhoodMode::Knn => LayerPlan {
            local_ball: None,
            local_knn: Some(2 * k),
            key: KeyPlan::Off,
        },
        NeighborhoodMode::Tn => LayerPlan {
            local_ball: None,
            local_knn: None,
            key: KeyPlan::Learned(2 * k),
        },
        NeighborhoodMode::BallKnn => LayerPlan {
            local_ball: Some(k),
            local_knn: None,
            key: KeyPlan::Knn(k),
        },
        NeighborhoodMode::TnKnn => LayerPlan {
            local_ball: None,
            local_knn: Some(k),
            key: KeyPlan::Learned(k),
        },
        NeighborhoodMode::TnBall => LayerPlan {
            local_ball: Some(k),
            local_knn: None,
            key: KeyPlan::Learned(k),
        },
    }
}

/// Offset each cloud-local index list into the batched row space.
fn offset_lists(per_cloud: &[Vec<Vec<usize>>], p: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(per_cloud.len() * p);
    for (b, lists) in per_cloud.iter().enumerate() {
        for list in lists {
            out.push(list.iter().map(|&j| b * p + j).collect());
        }
    }
    out
}

/// First layer: for every edge, a 10-value geometric relation vector
/// (distance, center, neighbor, offset) gates the neighbor's raised feature
/// channelwise; per-center max aggregation, then batch norm and activation.
pub fn rs_conv_lite<T: Scalar>(
    ctx: &mut ForwardCtx<T>,
    coords: &[Vec<[f32; 3]>],
    nbr: &[Vec<Vec<usize>>],
    params: &mut ModelParams<T>,
) -> Result<Tensor> {
    let p = coords[0].len();
    let k = nbr[0][0].len();
    let total_edges: usize = coords.len() * p * k;
    let t = |v: f32| T::from_f64(v as f64);

    let mut xyz = Vec::with_capacity(coords.len() * p * 3);
    let mut h = Vec::with_capacity(total_edges * 10);
    let mut neighbor_rows = Vec::with_capacity(total_edges);
    for (b, cloud) in coords.iter().enumerate() {
        if cloud.len() != p {
            return Err(Error::Dimension(format!(
                "cloud {b} has {} points, expected {p}",
                cloud.len()
            )));
        }
        for pt in cloud {
            xyz.extend(pt.iter().map(|&v| t(v)));
        }
        for (i, list) in nbr[b].iter().enumerate() {
            let xi = cloud[i];
            for &j in list {
                let xk = cloud[j];
                let d = [xk[0] - xi[0], xk[1] - xi[1], xk[2] - xi[2]];
                let norm =
                    ((d[0] as f64).powi(2) + (d[1] as f64).powi(2) + (d[2] as f64).powi(2)).sqrt();
                h.push(T::from_f64(norm));
                h.extend(xi.iter().map(|&v| t(v)));
                h.extend(xk.iter().map(|&v| t(v)));
                h.extend(d.iter().map(|&v| t(v)));
                neighbor_rows.push(b * p + j);
            }
        }
    }
    let xyz = ctx.graph.constant(xyz, vec![coords.len() * p, 3]);
    let h = ctx.graph.constant(h, vec![total_edges, 10]);
    let raised = params.raise.forward(ctx, xyz);
    let raised_k = ctx.graph.gather_rows(raised, &neighbor_rows);
    let gate = params.relation.forward(ctx, h);
    let messages = ctx.graph.mul(gate, raised_k);
    let pooled = ctx
        .graph
        .segment_reduce(messages, k, crate::numerics::Aggregate::Max);
    Ok(params.first_norm.forward(ctx, pooled))
}

/// Full forward pass over a batch of clouds; returns logits `[B, classes]`.
pub fn dndfn_forward<T: Scalar>(
    ctx: &mut ForwardCtx<T>,
    params: &mut ModelParams<T>,
    config: &NetworkConfig,
    clouds: &[PointCloud],
) -> Result<Tensor> {
    forward_impl(ctx, params, config, clouds, None).map(|(logits, _)| logits)
}

/// Forward pass that also captures the neighborhoods of the first cloud at
/// `trace_layer` (2-based layer number of a fusion layer).
pub fn dndfn_forward_traced<T: Scalar>(
    ctx: &mut ForwardCtx<T>,
    params: &mut ModelParams<T>,
    config: &NetworkConfig,
    clouds: &[PointCloud],
    trace_layer: usize,
) -> Result<(Tensor, LayerTrace)> {
    if !(2..=NUM_LAYERS).contains(&trace_layer) {
        return Err(Error::Config(format!(
            "trace layer must be between 2 and {NUM_LAYERS}, got {trace_layer}"
        )));
    }
    let (logits, trace) = forward_impl(ctx, params, config, clouds, Some(trace_layer))?;
    Ok((logits, trace.expect("trace layer was requested")))
}

fn forward_impl<T: Scalar>(
    ctx: &mut ForwardCtx<T>,
    params: &mut ModelParams<T>,
    config: &NetworkConfig,
    clouds: &[PointCloud],
    trace_layer: Option<usize>,
) -> Result<(Tensor, Option<LayerTrace>)> {
    config.validate()?;
    if clouds.is_empty() {
        return Err(Error::Dimension("empty batch".into()));
    }
    for (b, c) in clouds.iter().enumerate() {
        if c.len() < config.points_in {
            return Err(Error::Dimension(format!(
                "cloud {b} has {} points, config takes {}",
                c.len(),
                config.points_in
            )));
        }
    }
    let batch = clouds.len();
    let mut coords: Vec<Vec<[f32; 3]>> = clouds
        .iter()
        .map(|c| normalize_points(&c.points, config.points_in))
        .collect();
    let mut p = config.points_in;
    let mut trace: Option<LayerTrace> = None;

    // Layer 1: geometric relation convolution over 2k ball neighborhoods.
    let first_nbr: KeyLists = coords
        .iter()
        .map(|pts| {
            let cloud = PointCloud::new(pts.clone())?;
            let centers: Vec<usize> = (0..p).collect();
            ball_query(&cloud, &centers, config.radii[0], 2 * config.k)
        })
        .collect::<Result<_>>()?;
    let mut feats = rs_conv_lite(ctx, &coords, &first_nbr, params)?;

    // Layers 2..=4: downsample, rebuild neighborhoods, fuse.
    let layer_plan = plan(config.mode, config.k);
    for l in 1..NUM_LAYERS {
        let target = config.layer_points[l];
        if target < p {
            let mut rows = Vec::with_capacity(batch * target);
            for (b, pts) in coords.iter_mut().enumerate() {
                let cloud = PointCloud::new(pts.clone())?;
                let picks = fps(&cloud, target, lex_min_index(pts))?;
                rows.extend(picks.iter().map(|&i| b * p + i));
                *pts = picks.iter().map(|&i| cloud.points[i]).collect();
            }
            feats = ctx.graph.gather_rows(feats, &rows);
            p = target;
        }

        let sub_clouds: Vec<PointCloud> = coords
            .iter()
            .map(|pts| PointCloud::new(pts.clone()))
            .collect::<Result<_>>()?;
        let centers: Vec<usize> = (0..p).collect();

        let local_per_cloud: Option<Vec<Vec<Vec<usize>>>> = match &layer_plan {
            LayerPlan {
                local_ball: Some(kk),
                ..
            } => Some(
                sub_clouds
                    .iter()
                    .map(|c| ball_query(c, &centers, config.radii[l], *kk))
                    .collect::<Result<_>>()?,
            ),
            LayerPlan {
                local_knn: Some(kk),
                ..
            } => Some(
                sub_clouds
                    .iter()
                    .map(|c| knn(c, &centers, *kk))
                    .collect::<Result<_>>()?,
            ),
            _ => None,
        };

        // The learned key branch: per-cloud coefficients over the active
        // set, hard top-k selection, softmax weights on the kept entries.
        let (key_per_cloud, key_weight_tensor): (Option<KeyLists>, Option<Tensor>) =
            match layer_plan.key {
                KeyPlan::Off => (None, None),
                KeyPlan::Knn(kk) => (
                    Some(
                        sub_clouds
                            .iter()
                            .map(|c| knn(c, &centers, kk))
                            .collect::<Result<_>>()?,
                    ),
                    None,
                ),
                KeyPlan::Learned(kk) => {
                    let layer_params = &mut params.layers[l - 1];
                    let desc =
                        phi_descriptor(ctx, feats, &mut layer_params.theta, &mut layer_params.pi)?;
                    let mut lists = Vec::with_capacity(batch);
                    let mut weight_parts = Vec::with_capacity(batch);
                    for b in 0..batch {
                        let d = ctx.graph.slice_rows(desc, b * p, p);
                        let rel = relationship_matrix(ctx, d)?;
                        let keys = select_key_neighbors(ctx, &rel, kk)?;
                        weight_parts.push(key_weights(ctx, &rel, &keys)?);
                        lists.push(keys);
                    }
                    let weights = ctx.graph.concat_rows(&weight_parts);
                    (Some(lists), Some(weights))
                }
            };

        if trace_layer == Some(l + 1) {
            trace = Some(LayerTrace {
                layer: l + 1,
                points: coords[0].clone(),
                local: local_per_cloud
                    .as_ref()
                    .map(|pc| pc[0].clone())
                    .unwrap_or_default(),
                key: key_per_cloud
                    .as_ref()
                    .map(|pc| pc[0].clone())
                    .unwrap_or_default(),
            });
        }

        let local_global = local_per_cloud.as_ref().map(|pc| offset_lists(pc, p));
        let key_global = key_per_cloud.as_ref().map(|pc| offset_lists(pc, p));
        let local_input = match &local_global {
            Some(lists) => BranchInput::Plain(lists),
            None => BranchInput::Disabled,
        };
        let key_input = match (&key_global, key_weight_tensor) {
            (Some(lists), Some(w)) => BranchInput::Weighted(lists, w),
            (Some(lists), None) => BranchInput::Plain(lists),
            (None, _) => BranchInput::Disabled,
        };
        feats = dnfe_forward(
            ctx,
            feats,
            local_input,
            key_input,
            &mut params.layers[l - 1],
        )?;
    }

    // Global per-channel max over each cloud's remaining points.
    let pooled = ctx
        .graph
        .segment_reduce(feats, p, crate::numerics::Aggregate::Max);
    let h = dropout(ctx, pooled, config.dropout);
    let h = params.head1.forward(ctx, h);
    let h = dropout(ctx, h, config.dropout);
    let logits = params.head2.forward(ctx, h);
    Ok((logits, trace))
}
